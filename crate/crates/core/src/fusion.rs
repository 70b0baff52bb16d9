//! Weighted least-squares cross point of several observation rays.

use nalgebra::{Matrix3, SymmetricEigen};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::localization::{compute_tdoas, LocalizationError, TdoaSet};
use crate::scene::MultiChannelClip;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("weights must be non-negative with a positive sum")]
    InvalidWeights,
    #[error("direction is not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("rays are (nearly) parallel: eigenvalue ratio {ratio:e}")]
    DegenerateGeometry { ratio: f64 },
    #[error(transparent)]
    Localization(#[from] LocalizationError),
}

/// One hover's ray: UAV position, unit direction toward the source, weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub position: Vec3,
    pub direction: Vec3,
    pub weight: f64,
    pub timestamp: f64,
}

impl Observation {
    pub fn new(position: Vec3, direction: Vec3, weight: f64, timestamp: f64) -> Result<Self, FusionError> {
        let n = direction.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(FusionError::NotUnit(n));
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(FusionError::InvalidWeights);
        }
        Ok(Self {
            position,
            direction,
            weight,
            timestamp,
        })
    }

    /// `I - u u^T`.
    pub fn projector(&self) -> Matrix3<f64> {
        Matrix3::identity() - self.direction * self.direction.transpose()
    }

    /// Distance from `s` to this observation's line.
    pub fn distance_to(&self, s: &Vec3) -> f64 {
        (self.projector() * (s - self.position)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedEstimate {
    pub position: Vec3,
    /// Ratio of largest to smallest eigenvalue of the weighted projector sum.
    pub condition: f64,
    pub used: usize,
    /// Fused point lies above every UAV position, which cannot be a ground
    /// source.
    pub above_uav: bool,
}

/// Mean GCC-PHAT peak of the ring mics against mic 0.
pub fn observation_weight(clip: &MultiChannelClip, max_lag: f64) -> Result<f64, FusionError> {
    Ok(compute_tdoas(clip, max_lag)?.mean_peak())
}

/// Weight from delays already computed for the same window.
pub fn weight_from_tdoas(tdoas: &TdoaSet) -> f64 {
    tdoas.mean_peak()
}

/// Minimizes `sum_k w_k |Proj_k (s - p_k)|^2`.
pub fn fuse(observations: &[Observation]) -> Result<FusedEstimate, FusionError> {
    if observations.len() < 2 {
        return Err(FusionError::TooFewObservations(observations.len()));
    }
    let total: f64 = observations.iter().map(|o| o.weight).sum();
    if observations.iter().any(|o| !(o.weight >= 0.0)) || !(total > 0.0) {
        return Err(FusionError::InvalidWeights);
    }
    let mut a = Matrix3::zeros();
    let mut b = Vec3::zeros();
    for o in observations {
        let p = o.projector() * o.weight;
        a += p;
        b += p * o.position;
    }
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min >= 1e-8 * max) {
        return Err(FusionError::DegenerateGeometry {
            ratio: if max > 0.0 { min / max } else { 0.0 },
        });
    }
    // Solve through the eigendecomposition: s = Q diag(1/lambda) Q^T b.
    let q = &eig.eigenvectors;
    let mut coeff = q.transpose() * b;
    for i in 0..3 {
        coeff[i] /= eig.eigenvalues[i];
    }
    let position = q * coeff;
    let top = observations
        .iter()
        .map(|o| o.position.z)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(FusedEstimate {
        position,
        condition: max / min,
        used: observations.len(),
        above_uav: position.z > top,
    })
}
