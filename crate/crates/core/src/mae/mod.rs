//! Masked autoencoder over Mel-spectrogram patches.
//!
//! The encoder sees a class token followed by the visible patches (each
//! embedded by `E` plus its positional row). The decoder rebuilds the full
//! sequence: projected encoder outputs at visible positions, the shared mask
//! token at masked positions, a transformed class slot in front, plus its own
//! positional table. A linear head maps every token back to `P x P` cells.

mod checkpoint;
pub mod nn;
mod train;

use std::f64::consts::PI;

use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use train::{evaluate_loss, pretrain, Adam, TrainHyper, TrainReport, TrainingSet};

use crate::features::{patchify, sample_mask, FeatureError, MaskPartition, MelConfig, MelFrontend, PatchGrid};
use crate::scene::Waveform;
use nn::{randn, Block, BlockCache, LayerNorm, LayerNormCache};

#[derive(Debug, Error)]
pub enum MaeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeConfig {
    pub patch: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub embed_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub enc_mlp: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub dec_mlp: usize,
    pub mask_ratio: f64,
    pub top_k: f64,
}

impl Default for MaeConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            grid_rows: 8,
            grid_cols: 16,
            embed_dim: 64,
            enc_depth: 2,
            enc_heads: 4,
            enc_mlp: 128,
            dec_dim: 32,
            dec_depth: 1,
            dec_heads: 2,
            dec_mlp: 64,
            mask_ratio: 0.10,
            top_k: 0.10,
        }
    }
}

impl MaeConfig {
    pub fn tokens(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }

    pub fn validate(&self) -> Result<(), MaeError> {
        let bad = |m: &str| Err(MaeError::ShapeMismatch(m.to_string()));
        if self.patch == 0 || self.tokens() == 0 {
            return bad("empty patch grid");
        }
        if self.enc_heads == 0 || self.embed_dim % self.enc_heads != 0 {
            return bad("embed_dim must be divisible by enc_heads");
        }
        if self.dec_heads == 0 || self.dec_dim % self.dec_heads != 0 {
            return bad("dec_dim must be divisible by dec_heads");
        }
        if !(0.0..=0.95).contains(&self.mask_ratio) {
            return Err(FeatureError::RatioOutOfRange(self.mask_ratio).into());
        }
        if !(self.top_k > 0.0 && self.top_k <= 1.0) {
            return bad("top_k must be in (0, 1]");
        }
        Ok(())
    }

    /// Checks that `mel` produces images this model can tile.
    pub fn matches_mel(&self, mel: &MelConfig) -> bool {
        mel.mel_bins == self.grid_rows * self.patch && mel.frames == self.grid_cols * self.patch
    }
}

/// Every learnable tensor, in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaeParams {
    /// `E`, `P^2 x D`.
    pub patch_embed: Array2<f64>,
    /// `N x D`.
    pub enc_pos: Array2<f64>,
    /// `1 x D`.
    pub cls_token: Array2<f64>,
    pub enc_blocks: Vec<Block>,
    pub enc_norm: LayerNorm,
    /// `W_dec`, `D x D_dec`.
    pub dec_embed: Array2<f64>,
    /// `1 x D_dec`.
    pub mask_token: Array2<f64>,
    /// `(N + 1) x D_dec`.
    pub dec_pos: Array2<f64>,
    pub dec_blocks: Vec<Block>,
    pub dec_norm: LayerNorm,
    /// `D_dec x P^2`.
    pub pred_w: Array2<f64>,
    /// `1 x P^2`.
    pub pred_b: Array2<f64>,
}

/// 2D sine-cosine table for a `rows x cols` grid, one row per position.
fn sincos_table(rows: usize, cols: usize, dim: usize) -> Array2<f64> {
    let mut table = Array2::zeros((rows * cols, dim));
    let quarter = (dim / 4).max(1);
    for n in 0..rows * cols {
        let (r, c) = ((n / cols) as f64, (n % cols) as f64);
        for j in 0..dim {
            let band = (j % quarter) as f64;
            let freq = 1.0 / 100f64.powf(band / quarter as f64);
            let coord = if (j / quarter) % 2 == 0 { r } else { c };
            table[[n, j]] = if (j / (2 * quarter)) % 2 == 0 {
                (coord * freq * PI / 2.0).sin()
            } else {
                (coord * freq * PI / 2.0).cos()
            };
        }
    }
    table
}

impl MaeParams {
    pub fn init(cfg: &MaeConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d, dd, pd) = (cfg.tokens(), cfg.embed_dim, cfg.dec_dim, cfg.patch_dim());
        let patch_embed = nn::Linear::new(pd, d, &mut rng).w;
        let enc_pos = sincos_table(cfg.grid_rows, cfg.grid_cols, d) * 0.5;
        let cls_token = randn(1, d, 0.02, &mut rng);
        let enc_blocks = (0..cfg.enc_depth)
            .map(|_| Block::new(d, cfg.enc_heads, cfg.enc_mlp, &mut rng))
            .collect();
        let dec_embed = nn::Linear::new(d, dd, &mut rng).w;
        let mask_token = randn(1, dd, 0.02, &mut rng);
        let mut dec_pos = Array2::zeros((n + 1, dd));
        dec_pos
            .slice_mut(s![1.., ..])
            .assign(&(sincos_table(cfg.grid_rows, cfg.grid_cols, dd) * 0.5));
        let dec_blocks = (0..cfg.dec_depth)
            .map(|_| Block::new(dd, cfg.dec_heads, cfg.dec_mlp, &mut rng))
            .collect();
        let pred_w = randn(dd, pd, 0.02, &mut rng);
        Self {
            patch_embed,
            enc_pos,
            cls_token,
            enc_blocks,
            enc_norm: LayerNorm::new(d),
            dec_embed,
            mask_token,
            dec_pos,
            dec_blocks,
            dec_norm: LayerNorm::new(dd),
            pred_w,
            pred_b: Array2::zeros((1, pd)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![&self.patch_embed, &self.enc_pos, &self.cls_token];
        for b in &self.enc_blocks {
            v.extend(b.tensors());
        }
        v.extend(self.enc_norm.tensors());
        v.extend([&self.dec_embed, &self.mask_token, &self.dec_pos]);
        for b in &self.dec_blocks {
            v.extend(b.tensors());
        }
        v.extend(self.dec_norm.tensors());
        v.extend([&self.pred_w, &self.pred_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![&mut self.patch_embed, &mut self.enc_pos, &mut self.cls_token];
        for b in &mut self.enc_blocks {
            v.extend(b.tensors_mut());
        }
        v.extend(self.enc_norm.tensors_mut());
        v.extend([&mut self.dec_embed, &mut self.mask_token, &mut self.dec_pos]);
        for b in &mut self.dec_blocks {
            v.extend(b.tensors_mut());
        }
        v.extend(self.dec_norm.tensors_mut());
        v.extend([&mut self.pred_w, &mut self.pred_b]);
        v
    }

    /// Human-readable name per tensor, aligned with [`MaeParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let block_names = [
            "ln1.gamma",
            "ln1.beta",
            "qkv.w",
            "qkv.b",
            "proj.w",
            "proj.b",
            "ln2.gamma",
            "ln2.beta",
            "fc1.w",
            "fc1.b",
            "fc2.w",
            "fc2.b",
        ];
        let mut v: Vec<String> = ["patch_embed", "enc_pos", "cls_token"].map(String::from).to_vec();
        for i in 0..self.enc_blocks.len() {
            v.extend(block_names.iter().map(|n| format!("enc{i}.{n}")));
        }
        v.extend(["enc_norm.gamma", "enc_norm.beta", "dec_embed", "mask_token", "dec_pos"].map(String::from));
        for i in 0..self.dec_blocks.len() {
            v.extend(block_names.iter().map(|n| format!("dec{i}.{n}")));
        }
        v.extend(["dec_norm.gamma", "dec_norm.beta", "pred_w", "pred_b"].map(String::from));
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn tokens(&self) -> usize {
        self.enc_pos.nrows()
    }

    fn check_grid(&self, grid: &PatchGrid) -> Result<(), MaeError> {
        if grid.len() != self.tokens() || grid.patch_dim() != self.patch_embed.nrows() {
            return Err(MaeError::ShapeMismatch(format!(
                "grid has {} patches of {} cells, model expects {} of {}",
                grid.len(),
                grid.patch_dim(),
                self.tokens(),
                self.patch_embed.nrows()
            )));
        }
        Ok(())
    }
}

/// Encoder output `Z_enc`: row 0 is the class token, row `1 + i` belongs
/// to patch `order[i]`.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub tokens: Array2<f64>,
    pub order: Vec<usize>,
}

pub struct EncoderCache {
    inputs: Array2<f64>,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
}

pub struct DecoderCache {
    encoded: Array2<f64>,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
    normed: Array2<f64>,
}

/// Encodes the patches listed in `order` (any order, no repeats).
pub fn encode_tokens(params: &MaeParams, patches: &Array2<f64>, order: &[usize]) -> (Encoded, EncoderCache) {
    let d = params.patch_embed.ncols();
    let visible = patches.select(Axis(0), order);
    let mut x = Array2::zeros((order.len() + 1, d));
    x.row_mut(0).assign(&params.cls_token.row(0));
    let emb = visible.dot(&params.patch_embed) + params.enc_pos.select(Axis(0), order);
    x.slice_mut(s![1.., ..]).assign(&emb);
    let mut caches = Vec::with_capacity(params.enc_blocks.len());
    let mut h = x;
    for b in &params.enc_blocks {
        let (y, c) = b.forward(&h);
        caches.push(c);
        h = y;
    }
    let (z, norm) = params.enc_norm.forward(&h);
    (
        Encoded {
            tokens: z,
            order: order.to_vec(),
        },
        EncoderCache {
            inputs: visible,
            blocks: caches,
            norm,
        },
    )
}

/// Decodes to an `N x P^2` prediction matrix.
pub fn decode_tokens(params: &MaeParams, encoded: &Encoded, masked: &[usize]) -> (Array2<f64>, DecoderCache) {
    let n = params.tokens();
    let dd = params.dec_embed.ncols();
    let projected = encoded.tokens.dot(&params.dec_embed);
    let mut h = Array2::zeros((n + 1, dd));
    h.row_mut(0).assign(&projected.row(0));
    for (i, &v) in encoded.order.iter().enumerate() {
        h.row_mut(1 + v).assign(&projected.row(1 + i));
    }
    for &u in masked {
        h.row_mut(1 + u).assign(&params.mask_token.row(0));
    }
    h += &params.dec_pos;
    let mut caches = Vec::with_capacity(params.dec_blocks.len());
    for b in &params.dec_blocks {
        let (y, c) = b.forward(&h);
        caches.push(c);
        h = y;
    }
    let (normed, norm) = params.dec_norm.forward(&h);
    let pred = normed.slice(s![1.., ..]).dot(&params.pred_w) + &params.pred_b;
    (
        pred,
        DecoderCache {
            encoded: encoded.tokens.clone(),
            blocks: caches,
            norm,
            normed,
        },
    )
}

pub fn encode(grid: &PatchGrid, mask: &MaskPartition, params: &MaeParams) -> Result<Encoded, MaeError> {
    params.check_grid(grid)?;
    check_mask(mask, params.tokens())?;
    Ok(encode_tokens(params, &grid.patches, &mask.visible).0)
}

pub fn decode(
    encoded: &Encoded,
    mask: &MaskPartition,
    params: &MaeParams,
    like: &PatchGrid,
) -> Result<PatchGrid, MaeError> {
    check_mask(mask, params.tokens())?;
    if encoded.tokens.nrows() != mask.visible.len() + 1 || encoded.order.len() != mask.visible.len() {
        return Err(MaeError::ShapeMismatch(format!(
            "{} encoder tokens for {} visible patches",
            encoded.tokens.nrows(),
            mask.visible.len()
        )));
    }
    let (pred, _) = decode_tokens(params, encoded, &mask.masked);
    Ok(PatchGrid {
        patches: pred,
        grid_rows: like.grid_rows,
        grid_cols: like.grid_cols,
        patch: like.patch,
    })
}

fn check_mask(mask: &MaskPartition, n: usize) -> Result<(), MaeError> {
    if mask.len() != n {
        return Err(MaeError::ShapeMismatch(format!(
            "mask covers {} patches, model has {n}",
            mask.len()
        )));
    }
    Ok(())
}

/// Full reconstruction of `grid` under `mask`.
pub fn reconstruct(grid: &PatchGrid, mask: &MaskPartition, params: &MaeParams) -> Result<PatchGrid, MaeError> {
    let encoded = encode(grid, mask, params)?;
    decode(&encoded, mask, params, grid)
}

/// Per-row weights of the training loss: masked rows share weight 1 and
/// visible rows share `visible_weight`, each group averaged over its own
/// rows and cells. With no masked rows only the visible group counts.
fn row_weights(mask: &MaskPartition, n: usize, cells: usize, visible_weight: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    let vis_group = if mask.masked.is_empty() { 1.0 } else { visible_weight };
    if !mask.masked.is_empty() {
        let per = 1.0 / (mask.masked.len() * cells) as f64;
        for &u in &mask.masked {
            w[u] = per;
        }
    }
    if !mask.visible.is_empty() && vis_group > 0.0 {
        let per = vis_group / (mask.visible.len() * cells) as f64;
        for &v in &mask.visible {
            w[v] = per;
        }
    }
    w
}

/// Training loss and its gradient with respect to every parameter
/// (accumulated into `grad`).
///
/// The loss is the mean squared error over masked patches plus
/// `visible_weight` times the mean squared error over visible patches, both
/// against the per-patch normalized `target`.
pub fn loss_and_grad(
    params: &MaeParams,
    patches: &Array2<f64>,
    target: &Array2<f64>,
    mask: &MaskPartition,
    visible_weight: f64,
    grad: &mut MaeParams,
) -> f64 {
    let (encoded, enc_cache) = encode_tokens(params, patches, &mask.visible);
    let (pred, dec_cache) = decode_tokens(params, &encoded, &mask.masked);
    let w = row_weights(mask, pred.nrows(), pred.ncols(), visible_weight);
    let mut dpred = Array2::zeros(pred.raw_dim());
    let mut loss = 0.0;
    for (r, &wr) in w.iter().enumerate() {
        if wr == 0.0 {
            continue;
        }
        for c in 0..pred.ncols() {
            let e = pred[[r, c]] - target[[r, c]];
            loss += wr * e * e;
            dpred[[r, c]] = 2.0 * wr * e;
        }
    }
    backward(params, &encoded, &enc_cache, &dec_cache, &mask.masked, &dpred, grad);
    loss
}

/// Loss only, same definition as [`loss_and_grad`].
pub fn loss_value(
    params: &MaeParams,
    patches: &Array2<f64>,
    target: &Array2<f64>,
    mask: &MaskPartition,
    visible_weight: f64,
) -> f64 {
    let (encoded, _) = encode_tokens(params, patches, &mask.visible);
    let (pred, _) = decode_tokens(params, &encoded, &mask.masked);
    let w = row_weights(mask, pred.nrows(), pred.ncols(), visible_weight);
    let mut loss = 0.0;
    for (r, &wr) in w.iter().enumerate() {
        if wr == 0.0 {
            continue;
        }
        for c in 0..pred.ncols() {
            loss += wr * (pred[[r, c]] - target[[r, c]]).powi(2);
        }
    }
    loss
}

fn backward(
    params: &MaeParams,
    encoded: &Encoded,
    enc: &EncoderCache,
    dec: &DecoderCache,
    masked: &[usize],
    dpred: &Array2<f64>,
    grad: &mut MaeParams,
) {
    // Prediction head.
    grad.pred_w += &dec.normed.slice(s![1.., ..]).t().dot(dpred);
    grad.pred_b += &dpred.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dnormed = Array2::zeros(dec.normed.raw_dim());
    dnormed.slice_mut(s![1.., ..]).assign(&dpred.dot(&params.pred_w.t()));

    let mut dh = params.dec_norm.backward(&dec.norm, &dnormed, &mut grad.dec_norm);
    for ((b, c), g) in params
        .dec_blocks
        .iter()
        .zip(&dec.blocks)
        .zip(grad.dec_blocks.iter_mut())
        .rev()
    {
        dh = b.backward(c, &dh, g);
    }
    grad.dec_pos += &dh;
    for &u in masked {
        let mut row = grad.mask_token.row_mut(0);
        row += &dh.row(1 + u);
    }
    let mut dprojected = Array2::zeros((encoded.order.len() + 1, dh.ncols()));
    dprojected.row_mut(0).assign(&dh.row(0));
    for (i, &v) in encoded.order.iter().enumerate() {
        dprojected.row_mut(1 + i).assign(&dh.row(1 + v));
    }
    grad.dec_embed += &dec.encoded.t().dot(&dprojected);
    let dz = dprojected.dot(&params.dec_embed.t());

    let mut dx = params.enc_norm.backward(&enc.norm, &dz, &mut grad.enc_norm);
    for ((b, c), g) in params
        .enc_blocks
        .iter()
        .zip(&enc.blocks)
        .zip(grad.enc_blocks.iter_mut())
        .rev()
    {
        dx = b.backward(c, &dx, g);
    }
    {
        let mut row = grad.cls_token.row_mut(0);
        row += &dx.row(0);
    }
    let demb = dx.slice(s![1.., ..]);
    grad.patch_embed += &enc.inputs.t().dot(&demb);
    for (i, &v) in encoded.order.iter().enumerate() {
        let mut row = grad.enc_pos.row_mut(v);
        row += &demb.row(i);
    }
}

/// Top-K reconstruction score.
///
/// Per-patch error is the mean squared difference between the normalized
/// ground-truth patch and the reconstruction; the score averages the
/// `ceil(N * top_k)` largest errors.
pub fn anomaly_score(grid: &PatchGrid, recon: &PatchGrid, top_k: f64) -> (f64, Vec<f64>) {
    let truth = grid.normalized();
    let errors: Vec<f64> = truth
        .patches
        .rows()
        .into_iter()
        .zip(recon.patches.rows())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
        .collect();
    (top_k_mean(&errors, top_k), errors)
}

/// Mean of the `ceil(len * fraction)` largest values (at least one).
pub fn top_k_mean(errors: &[f64], fraction: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    let k = ((errors.len() as f64 * fraction) - 1e-9).ceil().max(1.0) as usize;
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[..k.min(sorted.len())].iter().sum::<f64>() / k as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyVerdict {
    pub score: f64,
    pub threshold: f64,
    pub triggered: bool,
    pub errors: Vec<f64>,
}

impl AnomalyVerdict {
    pub fn new(score: f64, threshold: f64, errors: Vec<f64>) -> Self {
        Self {
            score,
            threshold,
            triggered: score > threshold,
            errors,
        }
    }
}

/// Trained model bundled with its feature front end.
pub struct MaeModel {
    pub config: MaeConfig,
    pub mel: MelConfig,
    pub params: MaeParams,
    frontend: MelFrontend,
}

impl MaeModel {
    pub fn new(config: MaeConfig, mel: MelConfig, params: MaeParams) -> Result<Self, MaeError> {
        config.validate()?;
        if !config.matches_mel(&mel) {
            return Err(MaeError::ShapeMismatch(format!(
                "mel image {}x{} cannot be tiled into {}x{} patches of {}",
                mel.mel_bins, mel.frames, config.grid_rows, config.grid_cols, config.patch
            )));
        }
        let fresh = MaeParams::init(&config, 0);
        let ok = fresh.tensors().len() == params.tensors().len()
            && fresh
                .tensors()
                .iter()
                .zip(params.tensors())
                .all(|(a, b)| a.dim() == b.dim());
        if !ok {
            return Err(MaeError::ShapeMismatch("parameters do not match config".into()));
        }
        Ok(Self {
            config,
            mel,
            params,
            frontend: MelFrontend::new(mel),
        })
    }

    /// Standardized patch grid of a mono clip.
    pub fn features(&self, clip: &[f64]) -> Result<PatchGrid, MaeError> {
        let img = self.frontend.compute(clip)?.standardized();
        Ok(patchify(&img, self.config.patch)?)
    }

    /// Score of one clip under a seeded mask.
    pub fn score(&self, clip: &[f64], seed: u64) -> Result<(f64, Vec<f64>), MaeError> {
        let grid = self.features(clip)?;
        let mask = sample_mask(grid.len(), self.config.mask_ratio, seed)?;
        let recon = reconstruct(&grid, &mask, &self.params)?;
        Ok(anomaly_score(&grid, &recon, self.config.top_k))
    }
}

/// Sentinel stage on one single-channel clip.
pub fn sentinel_detect(
    clip: &Waveform,
    model: &MaeModel,
    threshold: f64,
    seed: u64,
) -> Result<AnomalyVerdict, MaeError> {
    let (score, errors) = model.score(&clip.samples, seed)?;
    Ok(AnomalyVerdict::new(score, threshold, errors))
}
