//! GCC-PHAT time differences and least-squares direction of arrival.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::geometry::{PosedArray, Vec3};
use crate::scene::{MultiChannelClip, Waveform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizationError {
    #[error("input signal is all zeros")]
    DegenerateInput,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ring offsets span rank {rank} < 2")]
    RankDeficient { rank: usize },
}

/// One GCC-PHAT peak. Positive `tdoa` means `x` arrives after `ref`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GccPeak {
    pub tdoa: f64,
    /// Maximum rounded to whole samples.
    pub lag: isize,
    pub peak: f64,
}

/// Largest physically meaningful lag for an array of radius `r`, with a
/// 50% guard.
pub fn default_max_lag(radius: f64, v_s: f64) -> f64 {
    1.5 * radius / v_s
}

pub fn gcc_phat(x: &Waveform, reference: &Waveform, max_lag: f64) -> Result<GccPeak, LocalizationError> {
    if x.fs != reference.fs {
        return Err(LocalizationError::InvalidInput("sample rates differ".into()));
    }
    gcc_phat_samples(&x.samples, &reference.samples, x.fs, max_lag)
}

/// Lag-grid refinement used by [`gcc_phat`]: the correlation is evaluated
/// every `1 / GCC_UPSAMPLE` samples before the parabolic fit.
pub const GCC_UPSAMPLE: usize = 8;

pub fn gcc_phat_samples(x: &[f64], reference: &[f64], fs: u32, max_lag: f64) -> Result<GccPeak, LocalizationError> {
    gcc_phat_upsampled(x, reference, fs, max_lag, GCC_UPSAMPLE)
}

/// GCC-PHAT with the inverse transform taken on an `upsample`-times finer
/// lag grid (spectral zero padding). `upsample == 1` is the plain method.
pub fn gcc_phat_upsampled(
    x: &[f64],
    reference: &[f64],
    fs: u32,
    max_lag: f64,
    upsample: usize,
) -> Result<GccPeak, LocalizationError> {
    if upsample == 0 {
        return Err(LocalizationError::InvalidInput(
            "upsample factor must be positive".into(),
        ));
    }
    let lag_max = check_pair(x, reference, fs, max_lag)?;
    let nfft = (x.len() + lag_max as usize + 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let sx = spectrum(x, fwd.as_ref());
    let sr = spectrum(reference, fwd.as_ref());
    Ok(peak_from_spectra(&sx, &sr, &mut planner, lag_max, upsample, fs))
}

/// Validates one GCC input pair and returns the lag bound in samples.
fn check_pair(x: &[f64], reference: &[f64], fs: u32, max_lag: f64) -> Result<isize, LocalizationError> {
    let len = x.len();
    if len != reference.len() {
        return Err(LocalizationError::InvalidInput(format!(
            "lengths differ: {} vs {}",
            len,
            reference.len()
        )));
    }
    if len < 256 {
        return Err(LocalizationError::InvalidInput(format!(
            "{len} samples, need at least 256"
        )));
    }
    let lag_max = (max_lag * fs as f64).floor();
    if !(lag_max >= 0.0) || lag_max >= len as f64 / 2.0 {
        return Err(LocalizationError::InvalidInput(format!(
            "max lag {max_lag} s must be below half the signal length"
        )));
    }
    if x.iter().all(|&v| v == 0.0) || reference.iter().all(|&v| v == 0.0) {
        return Err(LocalizationError::DegenerateInput);
    }
    Ok(lag_max as isize)
}

fn spectrum(s: &[f64], fwd: &dyn Fft<f64>) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = s.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(fwd.len(), Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    buf
}

/// Peak search on the PHAT-weighted cross spectrum of two equal-length
/// spectra. Integer lags come from one inverse FFT; the finer grid around
/// the best integer lag is evaluated directly from the band-limited
/// interpolant, which equals the zero-padded inverse transform.
fn peak_from_spectra(
    sx: &[Complex<f64>],
    sr: &[Complex<f64>],
    planner: &mut FftPlanner<f64>,
    lag_max: isize,
    upsample: usize,
    fs: u32,
) -> GccPeak {
    let nfft = sx.len();
    let cross: Vec<Complex<f64>> = sx
        .iter()
        .zip(sr)
        .map(|(a, b)| {
            let c = a * b.conj();
            let mag = c.norm();
            if mag < 1e-12 {
                Complex::new(0.0, 0.0)
            } else {
                c / mag
            }
        })
        .collect();
    let mut corr = cross.clone();
    planner.plan_fft_inverse(nfft).process(&mut corr);
    let scale = 1.0 / nfft as f64;
    let at = |lag: isize| corr[lag.rem_euclid(nfft as isize) as usize].re * scale;
    let mut best = 0isize;
    let mut best_val = f64::NEG_INFINITY;
    for lag in -lag_max..=lag_max {
        let v = at(lag);
        if v > best_val {
            best_val = v;
            best = lag;
        }
    }
    if upsample == 1 {
        let (ym, yp) = (at(best - 1), at(best + 1));
        let delta = parabolic(ym, best_val, yp);
        return GccPeak {
            tdoa: (best as f64 + delta) / fs as f64,
            lag: best,
            peak: best_val,
        };
    }

    let half = nfft / 2;
    let interp = |t: f64| {
        let step = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * t / nfft as f64);
        let mut z = step;
        let mut acc = 0.0;
        for c in &cross[1..half] {
            acc += (c * z).re;
            z *= step;
        }
        (cross[0].re + 2.0 * acc + cross[half].re * (std::f64::consts::PI * t).cos()) * scale
    };
    let u = upsample as isize;
    let lo = ((best - 1) * u).max(-lag_max * u);
    let hi = ((best + 1) * u).min(lag_max * u);
    let values: Vec<f64> = (lo - 1..=hi + 1).map(|k| interp(k as f64 / upsample as f64)).collect();
    let mut fine_best = lo;
    let mut fine_val = f64::NEG_INFINITY;
    for k in lo..=hi {
        let v = values[(k - lo + 1) as usize];
        if v > fine_val {
            fine_val = v;
            fine_best = k;
        }
    }
    let i = (fine_best - lo + 1) as usize;
    let delta = parabolic(values[i - 1], fine_val, values[i + 1]);
    GccPeak {
        tdoa: (fine_best as f64 + delta) / upsample as f64 / fs as f64,
        lag: (fine_best as f64 / upsample as f64).round() as isize,
        peak: fine_val,
    }
}

fn parabolic(ym: f64, y0: f64, yp: f64) -> f64 {
    let denom = ym - 2.0 * y0 + yp;
    if denom < 0.0 {
        (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Delays of mics `1..M` relative to mic 0, with their GCC-PHAT peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaSet {
    pub tdoas: Vec<f64>,
    pub peaks: Vec<f64>,
}

impl TdoaSet {
    /// Ideal far-field delays for a unit direction `u` toward the source.
    pub fn far_field(posed: &PosedArray, u: Vec3, v_s: f64) -> Self {
        let r0 = posed.base.position(0);
        let tdoas: Vec<f64> = (1..posed.count())
            .map(|m| -(posed.base.position(m) - r0).dot(&u) / v_s)
            .collect();
        let peaks = vec![1.0; tdoas.len()];
        Self { tdoas, peaks }
    }

    pub fn mean_peak(&self) -> f64 {
        if self.peaks.is_empty() {
            0.0
        } else {
            self.peaks.iter().sum::<f64>() / self.peaks.len() as f64
        }
    }
}

pub fn compute_tdoas(clip: &MultiChannelClip, max_lag: f64) -> Result<TdoaSet, LocalizationError> {
    if clip.channel_count() < 2 {
        return Err(LocalizationError::InvalidInput("need at least two channels".into()));
    }
    let reference = &clip.channel(0).samples;
    let fs = clip.fs();
    let mut lag_max = 0;
    for m in 1..clip.channel_count() {
        lag_max = check_pair(&clip.channel(m).samples, reference, fs, max_lag)?;
    }
    let nfft = (reference.len() + lag_max as usize + 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let sr = spectrum(reference, fwd.as_ref());
    let mut tdoas = Vec::with_capacity(clip.channel_count() - 1);
    let mut peaks = Vec::with_capacity(clip.channel_count() - 1);
    for m in 1..clip.channel_count() {
        let sx = spectrum(&clip.channel(m).samples, fwd.as_ref());
        let p = peak_from_spectra(&sx, &sr, &mut planner, lag_max, GCC_UPSAMPLE, fs);
        tdoas.push(p.tdoa);
        peaks.push(p.peak);
    }
    Ok(TdoaSet { tdoas, peaks })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoAEstimate {
    /// Unit vector from the UAV toward the source.
    pub u: Vec3,
    /// RMS misfit of the planar fit, in units of the array radius.
    pub planar_residual: f64,
    pub rank: usize,
    /// Planar solution had norm above 1 and was clamped.
    pub clamped: bool,
    /// Residual exceeded the configured bound; the estimate is still usable.
    pub inconsistent: bool,
}

/// Default residual bound for [`solve_doa`].
pub const DEFAULT_RESIDUAL_BOUND: f64 = 0.25;

/// Least-squares far-field direction from ring delays.
///
/// The ring is coplanar, so only the horizontal part is solved (truncated
/// pseudoinverse); the vertical part follows from the unit norm with the
/// source below the array.
pub fn solve_doa(
    posed: &PosedArray,
    tdoas: &TdoaSet,
    v_s: f64,
    residual_bound: f64,
) -> Result<DoAEstimate, LocalizationError> {
    let m = posed.count();
    if m < 3 {
        return Err(LocalizationError::RankDeficient {
            rank: m.saturating_sub(1).min(1),
        });
    }
    if tdoas.tdoas.len() != m - 1 {
        return Err(LocalizationError::InvalidInput(format!(
            "{} delays for {} ring mics",
            tdoas.tdoas.len(),
            m - 1
        )));
    }
    let r0 = posed.base.position(0);
    let g = DMatrix::from_fn(m - 1, 2, |i, j| (posed.base.position(i + 1) - r0)[j]);
    let v = DVector::from_iterator(m - 1, tdoas.tdoas.iter().map(|t| t * v_s));
    let svd = g.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = 1e-10 * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    if rank < 2 {
        return Err(LocalizationError::RankDeficient { rank });
    }
    let sol = svd
        .solve(&v, cutoff)
        .map_err(|e| LocalizationError::InvalidInput(e.to_string()))?;
    let misfit = &g * &sol - &v;
    let radius = posed.base.radius().max(f64::MIN_POSITIVE);
    let planar_residual = misfit.norm() / ((m - 1) as f64).sqrt() / radius;

    let mut planar = nalgebra::Vector2::new(-sol[0], -sol[1]);
    let norm = planar.norm();
    let clamped = norm > 1.0;
    if clamped {
        planar /= norm;
    }
    let uz = -(1.0 - planar.norm_squared()).max(0.0).sqrt();
    let u = Vec3::new(planar[0], planar[1], uz).normalize();
    Ok(DoAEstimate {
        u,
        planar_residual,
        rank,
        clamped,
        inconsistent: planar_residual > residual_bound,
    })
}

/// Angle between two vectors, degrees.
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos().to_degrees()
}
