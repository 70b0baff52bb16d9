//! Log-Mel spectrogram images, patch grids and mask partitions.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::hann_periodic;
use crate::scene::Waveform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("clip has {got} samples, expected {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("patch size {patch} does not divide image {rows}x{cols}")]
    IndivisibleDims { patch: usize, rows: usize, cols: usize },
    #[error("masking ratio {0} outside [0, 0.95]")]
    RatioOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub fs: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub frames: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            fs: 16_000,
            fft_size: 512,
            hop: 128,
            mel_bins: 64,
            frames: 128,
            fmin: 50.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    /// Samples per analysed clip (`frames * hop`, 16384 by default).
    pub fn clip_samples(&self) -> usize {
        self.frames * self.hop
    }

    pub fn clip_seconds(&self) -> f64 {
        self.clip_samples() as f64 / self.fs as f64
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular, area-normalized Mel filterbank, `mel_bins x (fft_size/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let bins = cfg.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((cfg.mel_bins, bins));
    for m in 0..cfg.mel_bins {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let area = 2.0 / (right - left);
        for k in 0..bins {
            let f = k as f64 * cfg.fs as f64 / cfg.fft_size as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w * area;
        }
    }
    fb
}

/// Log-Mel image, `mel_bins x frames`, row 0 is the lowest band.
#[derive(Debug, Clone, PartialEq)]
pub struct MelImage {
    pub values: Array2<f64>,
}

impl MelImage {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Whole-image standardization (zero mean, unit population std).
    pub fn standardized(&self) -> MelImage {
        let n = self.values.len() as f64;
        let mean = self.values.sum() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let values = if std < 1e-12 {
            Array2::zeros(self.values.raw_dim())
        } else {
            self.values.mapv(|v| (v - mean) / std)
        };
        MelImage { values }
    }
}

/// Reusable STFT + filterbank state.
pub struct MelFrontend {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelFrontend {
    pub fn new(cfg: MelConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            cfg,
            window: hann_periodic(cfg.fft_size),
            filters: mel_filterbank(&cfg),
            fft: planner.plan_fft_forward(cfg.fft_size),
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Center-padded (reflect) STFT power -> Mel -> `ln(x + eps)`.
    pub fn compute(&self, clip: &[f64]) -> Result<MelImage, FeatureError> {
        let cfg = &self.cfg;
        if clip.len() != cfg.clip_samples() {
            return Err(FeatureError::LengthMismatch {
                got: clip.len(),
                want: cfg.clip_samples(),
            });
        }
        let half = cfg.fft_size / 2;
        let n = clip.len() as isize;
        let reflect = |i: isize| -> f64 {
            let mut j = i;
            if j < 0 {
                j = -j;
            }
            if j >= n {
                j = 2 * (n - 1) - j;
            }
            clip[j as usize]
        };
        let bins = half + 1;
        let mut power = Array2::<f64>::zeros((bins, cfg.frames));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        for t in 0..cfg.frames {
            let origin = (t * cfg.hop) as isize - half as isize;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(reflect(origin + j as isize) * self.window[j], 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..bins {
                power[[k, t]] = buf[k].norm_sqr();
            }
        }
        let mel = self.filters.dot(&power);
        Ok(MelImage {
            values: mel.mapv(|v| (v + cfg.log_floor).ln()),
        })
    }
}

pub fn mel_spectrogram(clip: &Waveform, cfg: &MelConfig) -> Result<MelImage, FeatureError> {
    MelFrontend::new(*cfg).compute(&clip.samples)
}

/// Non-overlapping `P x P` tiles, frequency-major. Row `n` of `patches`
/// holds tile `n` flattened row-major (frequency rows, then time).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Array2<f64>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }

    pub fn unpatchify(&self) -> Array2<f64> {
        let p = self.patch;
        let mut img = Array2::zeros((self.grid_rows * p, self.grid_cols * p));
        for n in 0..self.len() {
            let (gr, gc) = (n / self.grid_cols, n % self.grid_cols);
            for i in 0..p {
                for j in 0..p {
                    img[[gr * p + i, gc * p + j]] = self.patches[[n, i * p + j]];
                }
            }
        }
        img
    }

    /// Grid with every patch replaced by its normalized version.
    pub fn normalized(&self) -> PatchGrid {
        let mut out = self.clone();
        for mut row in out.patches.rows_mut() {
            let norm = normalize_patch(row.as_slice().expect("standard layout"));
            row.iter_mut().zip(norm).for_each(|(a, b)| *a = b);
        }
        out
    }
}

pub fn patchify(img: &MelImage, patch: usize) -> Result<PatchGrid, FeatureError> {
    patchify_values(img.values.view(), patch)
}

pub fn patchify_values(values: ArrayView2<f64>, patch: usize) -> Result<PatchGrid, FeatureError> {
    let (rows, cols) = values.dim();
    if patch == 0 || rows % patch != 0 || cols % patch != 0 {
        return Err(FeatureError::IndivisibleDims { patch, rows, cols });
    }
    let (gr, gc) = (rows / patch, cols / patch);
    let mut patches = Array2::zeros((gr * gc, patch * patch));
    for n in 0..gr * gc {
        let (r0, c0) = ((n / gc) * patch, (n % gc) * patch);
        for i in 0..patch {
            for j in 0..patch {
                patches[[n, i * patch + j]] = values[[r0 + i, c0 + j]];
            }
        }
    }
    Ok(PatchGrid {
        patches,
        grid_rows: gr,
        grid_cols: gc,
        patch,
    })
}

/// Visible/masked split of patch indices (0-based, sorted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPartition {
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
    pub seed: u64,
}

impl MaskPartition {
    pub fn all_visible(n: usize) -> Self {
        Self {
            visible: (0..n).collect(),
            masked: Vec::new(),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.visible.len() + self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of masked patches: `round(n * ratio)`, halves away from zero.
pub fn masked_count(n: usize, ratio: f64) -> usize {
    (n as f64 * ratio).round() as usize
}

pub fn sample_mask(n: usize, ratio: f64, seed: u64) -> Result<MaskPartition, FeatureError> {
    if !(0.0..=0.95).contains(&ratio) {
        return Err(FeatureError::RatioOutOfRange(ratio));
    }
    let k = masked_count(n, ratio);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut masked = idx[..k].to_vec();
    let mut visible = idx[k..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok(MaskPartition { visible, masked, seed })
}

/// `(x - mean) / std` with population std; near-constant patches map to zeros.
pub fn normalize_patch(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-8 {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|v| (v - mean) / std).collect()
    }
}
