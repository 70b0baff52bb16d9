//! Circular microphone array geometry.
//!
//! Mic 0 sits at the array center; mics `1..M` form a uniform ring in the
//! body-frame xy-plane, with mic 1 on the +x axis.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("circular array needs at least 4 microphones (center + 3 ring), got {0}")]
    InsufficientMics(usize),
    #[error("array radius must be positive, got {0}")]
    NonPositiveRadius(f64),
}

/// Array parameters as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub mics: usize,
    pub radius_m: f64,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self {
            mics: 7,
            radius_m: 0.25,
        }
    }
}

impl ArraySpec {
    pub fn build(&self) -> Result<MicArray, GeometryError> {
        build_circular_array(self.mics, self.radius_m)
    }
}

/// Body-frame microphone layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MicArray {
    radius: f64,
    positions: Vec<Vec3>,
}

impl MicArray {
    /// Builds an array from raw positions without the circular-layout checks.
    ///
    /// Used for degenerate layouts in tests; `build_circular_array` is the
    /// normal constructor.
    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        let radius = positions.iter().skip(1).map(|r| r.norm()).fold(0.0, f64::max);
        Self { radius, positions }
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, m: usize) -> Vec3 {
        self.positions[m]
    }

    pub fn pose_at(&self, p: Vec3) -> PosedArray {
        pose_at(self, p)
    }
}

/// Array translated to a UAV position. The array plane stays horizontal.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedArray {
    pub base: MicArray,
    pub uav_position: Vec3,
}

impl PosedArray {
    pub fn count(&self) -> usize {
        self.base.count()
    }

    pub fn world_position(&self, m: usize) -> Vec3 {
        self.uav_position + self.base.positions[m]
    }

    pub fn world_positions(&self) -> Vec<Vec3> {
        (0..self.count()).map(|m| self.world_position(m)).collect()
    }
}

/// Center mic plus `m - 1` ring mics at angles `2π(k-1)/(m-1)`.
pub fn build_circular_array(m: usize, radius: f64) -> Result<MicArray, GeometryError> {
    if m < 4 {
        return Err(GeometryError::InsufficientMics(m));
    }
    if !(radius > 0.0) {
        return Err(GeometryError::NonPositiveRadius(radius));
    }
    let ring = (m - 1) as f64;
    let mut positions = Vec::with_capacity(m);
    positions.push(Vec3::zeros());
    for k in 1..m {
        let angle = 2.0 * PI * (k - 1) as f64 / ring;
        positions.push(Vec3::new(radius * angle.cos(), radius * angle.sin(), 0.0));
    }
    Ok(MicArray { radius, positions })
}

pub fn pose_at(array: &MicArray, p: Vec3) -> PosedArray {
    PosedArray {
        base: array.clone(),
        uav_position: p,
    }
}
