//! Adam pretraining on noise-only clips.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_grad, loss_value, MaeError, MaeModel, MaeParams};
use crate::features::{sample_mask, MaskPartition, PatchGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub mask_ratio: f64,
    /// Weight of the visible-patch term of the loss; 0 gives the masked-only
    /// objective.
    pub visible_weight: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            epochs: 30,
            batch: 8,
            seed: 0,
            mask_ratio: 0.10,
            visible_weight: 1.0,
        }
    }
}

/// Inputs and per-patch normalized targets, one pair per clip.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub inputs: Vec<Array2<f64>>,
    pub targets: Vec<Array2<f64>>,
}

impl TrainingSet {
    pub fn from_grids(grids: &[PatchGrid]) -> Self {
        Self {
            inputs: grids.iter().map(|g| g.patches.clone()).collect(),
            targets: grids.iter().map(|g| g.normalized().patches).collect(),
        }
    }

    pub fn from_clips(model: &MaeModel, clips: &[Vec<f64>]) -> Result<Self, MaeError> {
        let grids = clips.iter().map(|c| model.features(c)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_grids(&grids))
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub optimizer: String,
    /// Mean training loss of each epoch, as seen during the epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss on a fixed set of masks before the first update.
    pub initial_loss: f64,
    /// Loss on the same fixed masks after the last update.
    pub final_loss: f64,
}

/// Adam with bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: MaeParams,
    v: MaeParams,
}

impl Adam {
    pub fn new(params: &MaeParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut MaeParams, grad: &MaeParams) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

fn mask_seed(seed: u64, epoch: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ epoch.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ index.wrapping_mul(0x94D0_49BB_1331_11EB)
}

fn fixed_masks(set: &TrainingSet, n: usize, hyper: &TrainHyper) -> Result<Vec<MaskPartition>, MaeError> {
    (0..set.len())
        .map(|i| {
            Ok(sample_mask(
                n,
                hyper.mask_ratio,
                mask_seed(hyper.seed, u64::MAX, i as u64),
            )?)
        })
        .collect()
}

/// Mean loss over the set with one seeded mask per clip.
pub fn evaluate_loss(params: &MaeParams, set: &TrainingSet, hyper: &TrainHyper) -> Result<f64, MaeError> {
    if set.is_empty() {
        return Err(MaeError::EmptyTrainingSet);
    }
    let masks = fixed_masks(set, params.tokens(), hyper)?;
    let total: f64 = set
        .inputs
        .iter()
        .zip(&set.targets)
        .zip(&masks)
        .map(|((x, t), m)| loss_value(params, x, t, m, hyper.visible_weight))
        .sum();
    Ok(total / set.len() as f64)
}

/// Trains `params` on `set`. Deterministic given `hyper.seed`.
pub fn pretrain(
    mut params: MaeParams,
    set: &TrainingSet,
    hyper: &TrainHyper,
) -> Result<(MaeParams, TrainReport), MaeError> {
    if set.is_empty() {
        return Err(MaeError::EmptyTrainingSet);
    }
    for (x, t) in set.inputs.iter().zip(&set.targets) {
        if x.nrows() != params.tokens() || x.ncols() != params.patch_embed.nrows() || x.dim() != t.dim() {
            return Err(MaeError::ShapeMismatch(format!(
                "training grid {:?} does not fit model with {} tokens",
                x.dim(),
                params.tokens()
            )));
        }
    }
    let n = params.tokens();
    let initial_loss = evaluate_loss(&params, set, hyper)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut adam = Adam::new(&params, hyper.lr);
    let mut grad = params.zeros_like();
    let batch = hyper.batch.max(1);
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            for t in grad.tensors_mut() {
                t.fill(0.0);
            }
            for &i in chunk {
                let mask = sample_mask(n, hyper.mask_ratio, mask_seed(hyper.seed, epoch as u64, i as u64))?;
                total += loss_and_grad(
                    &params,
                    &set.inputs[i],
                    &set.targets[i],
                    &mask,
                    hyper.visible_weight,
                    &mut grad,
                );
            }
            let scale = 1.0 / chunk.len() as f64;
            for t in grad.tensors_mut() {
                t.mapv_inplace(|v| v * scale);
            }
            adam.update(&mut params, &grad);
        }
        let mean = total / set.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(MaeError::DivergedLoss { epoch });
        }
        epoch_losses.push(mean);
    }
    let final_loss = evaluate_loss(&params, set, hyper)?;
    if !final_loss.is_finite() {
        return Err(MaeError::DivergedLoss { epoch: hyper.epochs });
    }
    Ok((
        params,
        TrainReport {
            optimizer: format!("adam(lr={}, beta1=0.9, beta2=0.999, eps=1e-8)", hyper.lr),
            epoch_losses,
            initial_loss,
            final_loss,
        },
    ))
}
