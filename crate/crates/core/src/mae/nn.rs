//! Transformer building blocks with explicit backward passes.
//!
//! Activations are row-per-token matrices. Every `backward` accumulates
//! parameter gradients into a same-shaped gradient struct and returns the
//! gradient with respect to its input.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn randn(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

/// Xavier-uniform init.
fn xavier(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Linear {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: xavier(fan_in, fan_out, rng),
            b: Array2::zeros((1, fan_out)),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn tensors(&self) -> [&Array2<f64>; 2] {
        [&self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 2] {
        [&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array2::ones((1, dim)),
            beta: Array2::zeros((1, dim)),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *is = 1.0 / (var + LN_EPS).sqrt();
            let s = *is;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let g = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let mean_g = g.sum() / d;
            let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
            let is = cache.inv_std[i];
            Zip::from(dx.row_mut(i))
                .and(&g)
                .and(&xh)
                .for_each(|o, &gv, &xv| *o = is * (gv - mean_g - xv * mean_gx));
        }
        dx
    }

    pub fn tensors(&self) -> [&Array2<f64>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub heads: usize,
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct BlockCache {
    ln1: LayerNormCache,
    h1: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: LayerNormCache,
    h2: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

impl Block {
    pub fn new(dim: usize, heads: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(dim % heads == 0, "embedding dim must divide by head count");
        Self {
            heads,
            ln1: LayerNorm::new(dim),
            qkv: Linear::new(dim, 3 * dim, rng),
            proj: Linear::new(dim, dim, rng),
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(dim, hidden, rng),
            fc2: Linear::new(hidden, dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    fn dim(&self) -> usize {
        self.proj.w.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, BlockCache) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let t = x.nrows();

        let (h1, ln1) = self.ln1.forward(x);
        let qkv = self.qkv.forward(&h1);
        let mut attn = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut p = q.dot(&k.t()) * scale;
            softmax_rows(&mut p);
            attn.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&p.dot(&v));
            probs.push(p);
        }
        let x1 = x + &self.proj.forward(&attn);

        let (h2, ln2) = self.ln2.forward(&x1);
        let pre_act = self.fc1.forward(&h2);
        let act = pre_act.mapv(gelu);
        let y = &x1 + &self.fc2.forward(&act);
        (
            y,
            BlockCache {
                ln1,
                h1,
                qkv,
                probs,
                attn,
                ln2,
                h2,
                pre_act,
                act,
            },
        )
    }

    pub fn backward(&self, c: &BlockCache, dy: &Array2<f64>, grad: &mut Block) -> Array2<f64> {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // MLP branch.
        let dact = self.fc2.backward(&c.act, dy, &mut grad.fc2);
        let mut dpre = dact;
        Zip::from(&mut dpre)
            .and(&c.pre_act)
            .for_each(|g, &x| *g *= gelu_grad(x));
        let dh2 = self.fc1.backward(&c.h2, &dpre, &mut grad.fc1);
        let mut dx1 = dy + &self.ln2.backward(&c.ln2, &dh2, &mut grad.ln2);

        // Attention branch.
        let dattn = self.proj.backward(&c.attn, &dx1, &mut grad.proj);
        let mut dqkv = Array2::zeros(c.qkv.raw_dim());
        for h in 0..self.heads {
            let q = c.qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = c.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = c.qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let p = &c.probs[h];
            let dout = dattn.slice(s![.., h * dh..(h + 1) * dh]);
            let dp = dout.dot(&v.t());
            let dv = p.t().dot(&dout);
            let mut ds = dp;
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut drow)
                    .and(&prow)
                    .for_each(|g, &pv| *g = pv * (*g - dot) * scale);
            }
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dq);
            dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&dv);
        }
        let dh1 = self.qkv.backward(&c.h1, &dqkv, &mut grad.qkv);
        dx1 += &self.ln1.backward(&c.ln1, &dh1, &mut grad.ln1);
        dx1
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = Vec::with_capacity(12);
        v.extend(self.ln1.tensors());
        v.extend(self.qkv.tensors());
        v.extend(self.proj.tensors());
        v.extend(self.ln2.tensors());
        v.extend(self.fc1.tensors());
        v.extend(self.fc2.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = Vec::with_capacity(12);
        v.extend(self.ln1.tensors_mut());
        v.extend(self.qkv.tensors_mut());
        v.extend(self.proj.tensors_mut());
        v.extend(self.ln2.tensors_mut());
        v.extend(self.fc1.tensors_mut());
        v.extend(self.fc2.tensors_mut());
        v
    }
}
