//! Convolutional classifier trained from scratch: the binary NOISE gate and
//! the three-class baseline.
//!
//! Architecture: `[conv3x3 (same) -> ReLU -> maxpool 2x2] x N`, then a dense
//! ReLU layer with inverted dropout, then a sigmoid (one output,
//! `P(NOISE)`) or softmax (three outputs, NOISE/RSN/SOZ) head. All
//! parameters live in one flat vector in declaration order: for each conv
//! layer its weights `[out][in][3][3]` then biases, then the dense weights
//! `[units][inputs]` and biases, then the output weights and biases.
//!
//! # Checkpoint format
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "SOZNET01"
//! version    u32      1
//! input      3 x u32  height, width, channels
//! n_conv     u32, then n_conv x u32 filter counts
//! dense      u32      units
//! outputs    u32      1 (sigmoid) or 3 (softmax)
//! dropout    f64
//! lr         f64
//! n_tensors  u32
//! tensors    per tensor: u64 element count, then that many f64
//! ```

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BinaryLabel, Dataset, IcRecord, Label};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::raster::resize_image;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SOZNET01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// `(height, width, channels)`.
    pub input_dims: (usize, usize, usize),
    pub conv_filters: Vec<usize>,
    pub dense_units: usize,
    pub dropout: f64,
    pub lr: f64,
    /// 1 for the sigmoid head, 3 for the softmax head.
    pub outputs: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dims: (64, 112, 3),
            conv_filters: vec![64, 64, 256],
            dense_units: 704,
            dropout: 0.33,
            lr: 1e-4,
            outputs: 1,
        }
    }
}

impl NetworkConfig {
    /// Narrow network at low resolution for leave-one-out runs on a desk
    /// machine.
    pub fn compact() -> Self {
        Self {
            input_dims: (24, 32, 3),
            conv_filters: vec![8, 8, 16],
            dense_units: 32,
            dropout: 0.33,
            lr: 3e-3,
            outputs: 1,
        }
    }

    pub fn multiclass(mut self) -> Self {
        self.outputs = 3;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_dims;
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return Err(Error::arg("conv filter counts must be positive"));
        }
        let div = 1usize << self.conv_filters.len();
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::arg(format!(
                "input {h}x{w} must be divisible by {div} for {} pooling layers",
                self.conv_filters.len()
            )));
        }
        if c == 0 {
            return Err(Error::arg("input needs at least one channel"));
        }
        if self.dense_units == 0 {
            return Err(Error::arg("dense layer needs at least one unit"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.outputs != 1 && self.outputs != 3 {
            return Err(Error::arg("outputs must be 1 (sigmoid) or 3 (softmax)"));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        if self.outputs == 1 {
            2
        } else {
            self.outputs
        }
    }

    pub fn input_len(&self) -> usize {
        let (h, w, c) = self.input_dims;
        h * w * c
    }

    fn flat_len(&self) -> usize {
        let (h, w, _) = self.input_dims;
        let div = 1usize << self.conv_filters.len();
        (h / div) * (w / div) * self.conv_filters.last().copied().unwrap_or(0)
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    /// Loss weight per class index; `None` weighs all classes 1.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            batch_size: 32,
            patience: 5,
            val_fraction: 0.2,
            seed: 0,
            class_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg("max_epochs and batch_size must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::arg("patience must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(Error::arg(format!(
                "val_fraction must lie in (0, 0.5], got {}",
                self.val_fraction
            )));
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::arg("class weights must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Weights proportional to `1 / p_c`, scaled to mean 1.
pub fn inverse_frequency_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::arg("every class needs at least one sample"));
    }
    let total: usize = counts.iter().sum();
    let inv: Vec<f64> = counts.iter().map(|&c| total as f64 / c as f64).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    Ok(inv.into_iter().map(|x| x / mean).collect())
}

#[derive(Debug, Clone, PartialEq)]
struct ConvSlot {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w_px: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct DenseSlot {
    w: usize,
    b: usize,
    nin: usize,
    nout: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv: Vec<ConvSlot>,
    dense: DenseSlot,
    out: DenseSlot,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let (mut h, mut w, mut c) = cfg.input_dims;
        let mut off = 0;
        let mut conv = Vec::new();
        for &f in &cfg.conv_filters {
            let slot = ConvSlot {
                w: off,
                b: off + f * c * 9,
                cin: c,
                cout: f,
                h,
                w_px: w,
            };
            off = slot.b + f;
            conv.push(slot);
            c = f;
            h /= 2;
            w /= 2;
        }
        let flat = cfg.flat_len();
        let dense = DenseSlot {
            w: off,
            b: off + cfg.dense_units * flat,
            nin: flat,
            nout: cfg.dense_units,
        };
        off = dense.b + cfg.dense_units;
        let out = DenseSlot {
            w: off,
            b: off + cfg.outputs * cfg.dense_units,
            nin: cfg.dense_units,
            nout: cfg.outputs,
        };
        off = out.b + cfg.outputs;
        Self {
            conv,
            dense,
            out,
            total: off,
        }
    }

    /// `(offset, length)` of each tensor in declaration order.
    fn tensors(&self) -> Vec<(usize, usize)> {
        let mut t = Vec::new();
        for c in &self.conv {
            t.push((c.w, c.b - c.w));
            t.push((c.b, c.cout));
        }
        for d in [&self.dense, &self.out] {
            t.push((d.w, d.b - d.w));
            t.push((d.b, d.nout));
        }
        t
    }
}

/// `C = A·B + beta·C` with strided row-major views; `C` is `m x n` dense.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    let span = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows as isize - 1) * rs + (cols as isize - 1) * cs) as usize + 1
        }
    };
    assert!(a.len() >= span(m, k, a_strides));
    assert!(b.len() >= span(k, n, b_strides));
    // SAFETY: the assertions above keep every strided access in bounds, and
    // `c` does not alias `a` or `b` because it is a unique borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        row[y * w + x] = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            plane[sy as usize * w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    out[..c * hw].iter_mut().for_each(|v| *v = 0.0);
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy as usize >= h {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && (sx as usize) < w {
                            out[ch * hw + sy as usize * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations kept for backpropagation.
struct Cache {
    batch: usize,
    /// Input of each conv layer, `[batch][c][h][w]`.
    conv_in: Vec<Vec<f64>>,
    /// Post-ReLU conv output of each layer.
    conv_act: Vec<Vec<f64>>,
    /// Index into `conv_act` chosen by each pooling window.
    pool_idx: Vec<Vec<usize>>,
    flat: Vec<f64>,
    hidden_pre: Vec<f64>,
    /// Post-ReLU, post-dropout hidden activations.
    hidden: Vec<f64>,
    /// Dropout scale per hidden unit (0 or `1 / (1 - p)`).
    drop_mask: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseNet {
    pub config: NetworkConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

impl NoiseNet {
    /// He-uniform weights, zero biases.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |off: usize, len: usize, fan_in: usize, rng: &mut ChaCha8Rng| {
            let limit = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[off..off + len] {
                *p = rng.random_range(-limit..=limit);
            }
        };
        for c in &layout.conv {
            fill(c.w, c.b - c.w, c.cin * 9, &mut rng);
        }
        for d in [&layout.dense, &layout.out] {
            fill(d.w, d.b - d.w, d.nin, &mut rng);
        }
        Ok(Self {
            config: config.clone(),
            params,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn is_binary(&self) -> bool {
        self.config.outputs == 1
    }

    fn forward_batch(&self, inputs: &[&[f64]], drop_rng: Option<&mut ChaCha8Rng>) -> Cache {
        let b = inputs.len();
        let p = &self.params;
        let mut x: Vec<f64> = inputs.iter().flat_map(|s| s.iter().copied()).collect();
        let mut conv_in = Vec::new();
        let mut conv_act = Vec::new();
        let mut pool_idx = Vec::new();
        for slot in &self.layout.conv {
            let (c, h, w, f) = (slot.cin, slot.h, slot.w_px, slot.cout);
            let hw = h * w;
            let mut cols = vec![0.0; c * 9 * hw];
            let mut act = vec![0.0; b * f * hw];
            for s in 0..b {
                im2col(&x[s * c * hw..(s + 1) * c * hw], c, h, w, &mut cols);
                let out = &mut act[s * f * hw..(s + 1) * f * hw];
                for (o, row) in out.chunks_mut(hw).enumerate() {
                    row.fill(p[slot.b + o]);
                }
                gemm(f, c * 9, hw, &p[slot.w..slot.b], ((c * 9) as isize, 1), &cols, (hw as isize, 1), 1.0, out);
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            let (ph, pw) = (h / 2, w / 2);
            let mut pooled = vec![0.0; b * f * ph * pw];
            let mut idx = vec![0usize; b * f * ph * pw];
            for plane in 0..b * f {
                let base = plane * hw;
                for y in 0..ph {
                    for xx in 0..pw {
                        let mut best = base + 2 * y * w + 2 * xx;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let k = base + (2 * y + dy) * w + 2 * xx + dx;
                            if act[k] > act[best] {
                                best = k;
                            }
                        }
                        let o = plane * ph * pw + y * pw + xx;
                        pooled[o] = act[best];
                        idx[o] = best;
                    }
                }
            }
            conv_in.push(std::mem::replace(&mut x, pooled));
            conv_act.push(act);
            pool_idx.push(idx);
        }
        let flat = x;
        let d = &self.layout.dense;
        let mut hidden_pre = vec![0.0; b * d.nout];
        for row in hidden_pre.chunks_mut(d.nout) {
            row.copy_from_slice(&p[d.b..d.b + d.nout]);
        }
        gemm(b, d.nin, d.nout, &flat, (d.nin as isize, 1), &p[d.w..d.b], (1, d.nin as isize), 1.0, &mut hidden_pre);
        let keep = 1.0 - self.config.dropout;
        let drop_mask: Vec<f64> = match drop_rng {
            Some(rng) if self.config.dropout > 0.0 => (0..hidden_pre.len())
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
            _ => vec![1.0; hidden_pre.len()],
        };
        let hidden: Vec<f64> = hidden_pre
            .iter()
            .zip(&drop_mask)
            .map(|(v, m)| v.max(0.0) * m)
            .collect();
        let o = &self.layout.out;
        let mut logits = vec![0.0; b * o.nout];
        for row in logits.chunks_mut(o.nout) {
            row.copy_from_slice(&p[o.b..o.b + o.nout]);
        }
        gemm(b, o.nin, o.nout, &hidden, (o.nin as isize, 1), &p[o.w..o.b], (1, o.nin as isize), 1.0, &mut logits);
        Cache {
            batch: b,
            conv_in,
            conv_act,
            pool_idx,
            flat,
            hidden_pre,
            hidden,
            drop_mask,
            logits,
        }
    }

    /// Per-sample losses and the gradient of the logits for the weighted mean
    /// loss `Σ w_i ℓ_i / B`.
    fn loss_and_dlogits(&self, logits: &[f64], targets: &[usize], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let b = targets.len();
        let k = self.config.outputs;
        let mut losses = Vec::with_capacity(b);
        let mut dl = vec![0.0; logits.len()];
        for (s, &t) in targets.iter().enumerate() {
            let w = weights[t];
            if k == 1 {
                let z = logits[s];
                let y = if t == 1 { 1.0 } else { 0.0 };
                losses.push(w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()));
                dl[s] = w * (sigmoid(z) - y) / b as f64;
            } else {
                let row = &logits[s * k..(s + 1) * k];
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                losses.push(w * (lse - row[t]));
                for j in 0..k {
                    let pj = (row[j] - lse).exp();
                    let y = if j == t { 1.0 } else { 0.0 };
                    dl[s * k + j] = w * (pj - y) / b as f64;
                }
            }
        }
        (losses, dl)
    }

    fn backward(&self, cache: &Cache, dlogits: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        let b = cache.batch;
        let o = &self.layout.out;
        gemm(o.nout, b, o.nin, dlogits, (1, o.nout as isize), &cache.hidden, (o.nin as isize, 1), 1.0, &mut grad[o.w..o.b]);
        for s in 0..b {
            for j in 0..o.nout {
                grad[o.b + j] += dlogits[s * o.nout + j];
            }
        }
        let mut dh = vec![0.0; b * o.nin];
        gemm(b, o.nout, o.nin, dlogits, (o.nout as isize, 1), &p[o.w..o.b], (o.nin as isize, 1), 0.0, &mut dh);
        for ((g, pre), m) in dh.iter_mut().zip(&cache.hidden_pre).zip(&cache.drop_mask) {
            if *pre <= 0.0 {
                *g = 0.0;
            } else {
                *g *= m;
            }
        }
        let d = &self.layout.dense;
        gemm(d.nout, b, d.nin, &dh, (1, d.nout as isize), &cache.flat, (d.nin as isize, 1), 1.0, &mut grad[d.w..d.b]);
        for s in 0..b {
            for j in 0..d.nout {
                grad[d.b + j] += dh[s * d.nout + j];
            }
        }
        let mut dx = vec![0.0; b * d.nin];
        gemm(b, d.nout, d.nin, &dh, (d.nout as isize, 1), &p[d.w..d.b], (d.nin as isize, 1), 0.0, &mut dx);

        for (l, slot) in self.layout.conv.iter().enumerate().rev() {
            let (c, h, w, f) = (slot.cin, slot.h, slot.w_px, slot.cout);
            let hw = h * w;
            let act = &cache.conv_act[l];
            let mut dact = vec![0.0; b * f * hw];
            for (g, &k) in dx.iter().zip(&cache.pool_idx[l]) {
                if act[k] > 0.0 {
                    dact[k] += g;
                }
            }
            let input = &cache.conv_in[l];
            let mut cols = vec![0.0; c * 9 * hw];
            let mut dcols = vec![0.0; c * 9 * hw];
            let mut dinput = if l > 0 { vec![0.0; b * c * hw] } else { Vec::new() };
            for s in 0..b {
                let dout = &dact[s * f * hw..(s + 1) * f * hw];
                im2col(&input[s * c * hw..(s + 1) * c * hw], c, h, w, &mut cols);
                gemm(f, hw, c * 9, dout, (hw as isize, 1), &cols, (1, hw as isize), 1.0, &mut grad[slot.w..slot.b]);
                for (o, row) in dout.chunks(hw).enumerate() {
                    grad[slot.b + o] += row.iter().sum::<f64>();
                }
                if l > 0 {
                    gemm(c * 9, f, hw, &p[slot.w..slot.b], (1, (c * 9) as isize), dout, (hw as isize, 1), 0.0, &mut dcols);
                    col2im(&dcols, c, h, w, &mut dinput[s * c * hw..(s + 1) * c * hw]);
                }
            }
            dx = dinput;
        }
    }

    fn check_inputs(&self, inputs: &[&[f64]]) -> Result<()> {
        let n = self.config.input_len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != n) {
            return Err(Error::arg(format!(
                "input has {} values, network expects {n} ({:?})",
                bad.len(),
                self.config.input_dims
            )));
        }
        Ok(())
    }

    /// Class probabilities per input: `[P(NOISE)]` for the sigmoid head,
    /// `[P(NOISE), P(RSN), P(SOZ)]` for the softmax head. Sigmoid outputs are
    /// kept strictly inside (0, 1).
    pub fn predict_proba(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(inputs)?;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            let cache = self.forward_batch(chunk, None);
            let k = self.config.outputs;
            for row in cache.logits.chunks(k) {
                if k == 1 {
                    out.push(vec![sigmoid(row[0]).clamp(1e-15, 1.0 - 1e-15)]);
                } else {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    out.push(e.into_iter().map(|v| v / s).collect());
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_proba(&[input])?.remove(0))
    }

    /// Predicted class index per input (binary: 1 = NOISE).
    pub fn predict(&self, inputs: &[&[f64]]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(inputs)?
            .into_iter()
            .map(|p| {
                if p.len() == 1 {
                    usize::from(p[0] > 0.5)
                } else {
                    argmax(&p)
                }
            })
            .collect())
    }

    /// Mean weighted loss without dropout.
    pub fn loss(&self, inputs: &[&[f64]], targets: &[usize], weights: &[f64]) -> Result<f64> {
        self.check_inputs(inputs)?;
        let cache = self.forward_batch(inputs, None);
        let (losses, _) = self.loss_and_dlogits(&cache.logits, targets, weights);
        Ok(losses.iter().sum::<f64>() / targets.len() as f64)
    }

    /// Analytic gradient of [`NoiseNet::loss`].
    pub fn gradient(&self, inputs: &[&[f64]], targets: &[usize], weights: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        let cache = self.forward_batch(inputs, None);
        let (_, dl) = self.loss_and_dlogits(&cache.logits, targets, weights);
        let mut g = vec![0.0; self.params.len()];
        self.backward(&cache, &dl, &mut g);
        Ok(g)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.input_dims.0, c.input_dims.1, c.input_dims.2, c.conv_filters.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &f in &c.conv_filters {
            out.extend_from_slice(&(f as u32).to_le_bytes());
        }
        out.extend_from_slice(&(c.dense_units as u32).to_le_bytes());
        out.extend_from_slice(&(c.outputs as u32).to_le_bytes());
        out.extend_from_slice(&c.dropout.to_le_bytes());
        out.extend_from_slice(&c.lr.to_le_bytes());
        let tensors = self.layout.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (off, len) in tensors {
            out.extend_from_slice(&(len as u64).to_le_bytes());
            for v in &self.params[off..off + len] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("not a sozloc network checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let dims = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n_conv = r.u32()? as usize;
        if n_conv > 16 {
            return Err(format!("implausible conv layer count {n_conv}"));
        }
        let conv_filters = (0..n_conv).map(|_| r.u32().map(|v| v as usize)).collect::<std::result::Result<_, _>>()?;
        let config = NetworkConfig {
            input_dims: dims,
            conv_filters,
            dense_units: r.u32()? as usize,
            outputs: r.u32()? as usize,
            dropout: r.f64()?,
            lr: r.f64()?,
        };
        config.validate().map_err(|e| e.to_string())?;
        let layout = Layout::new(&config);
        let tensors = layout.tensors();
        if r.u32()? as usize != tensors.len() {
            return Err("tensor count does not match the configuration".into());
        }
        let mut params = vec![0.0; layout.total];
        for (i, (off, len)) in tensors.into_iter().enumerate() {
            let n = r.u64()? as usize;
            if n != len {
                return Err(format!("tensor {i} has {n} values, expected {len}"));
            }
            for p in &mut params[off..off + len] {
                *p = r.f64()?;
            }
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after the last tensor".into());
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err("checkpoint holds non-finite parameters".into());
        }
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::load(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err("checkpoint is truncated".into());
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

impl TrainingLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Seeded split holding out `val_fraction` of every class (at least one
/// sample from any class with two or more).
pub fn stratified_split(targets: &[usize], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let n_classes = targets.iter().max().map_or(0, |m| m + 1);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] == class).collect();
        idx.shuffle(&mut rng);
        let mut n_val = (val_fraction * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            n_val = n_val.clamp(1, idx.len() - 1);
        } else {
            n_val = 0;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch Adam on the weighted cross-entropy with early stopping on the
/// validation loss. Returns the parameters of the best validation epoch.
pub fn train(
    inputs: &[&[f64]],
    targets: &[usize],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<(NoiseNet, TrainingLog)> {
    train_cfg.validate()?;
    let mut net = NoiseNet::init(net_cfg, train_cfg.seed)?;
    net.check_inputs(inputs)?;
    if inputs.len() != targets.len() {
        return Err(Error::arg("inputs and targets differ in length"));
    }
    let k = net_cfg.n_classes();
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::arg(format!("target {t} out of range for {k} classes")));
    }
    let mut counts = vec![0usize; k];
    for &t in targets {
        counts[t] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::arg(format!(
            "training needs every class present, got counts {counts:?}"
        )));
    }
    let weights = match &train_cfg.class_weights {
        Some(w) if w.len() != k => {
            return Err(Error::arg(format!("expected {k} class weights, got {}", w.len())))
        }
        Some(w) => w.clone(),
        None => vec![1.0; k],
    };
    let (train_idx, val_idx) = stratified_split(targets, train_cfg.val_fraction, train_cfg.seed);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::arg("too few samples for a train/validation split"));
    }
    let val_x: Vec<&[f64]> = val_idx.iter().map(|&i| inputs[i]).collect();
    let val_y: Vec<usize> = val_idx.iter().map(|&i| targets[i]).collect();

    let mut order_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    order_rng.set_stream(2);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    drop_rng.set_stream(3);
    let mut adam = Adam::new(net.params.len());
    let mut grad = vec![0.0; net.params.len()];
    let mut order = train_idx.clone();
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
    };
    let mut best_params = net.params.clone();
    let mut best_val = f64::INFINITY;
    let mut waited = 0;
    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for batch in order.chunks(train_cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let cache = net.forward_batch(&xs, Some(&mut drop_rng));
            let (losses, dl) = net.loss_and_dlogits(&cache.logits, &ys, &weights);
            loss_sum += losses.iter().sum::<f64>();
            seen += losses.len();
            grad.iter_mut().for_each(|g| *g = 0.0);
            net.backward(&cache, &dl, &mut grad);
            adam.step(&mut net.params, &grad, net_cfg.lr);
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("parameters diverged in epoch {epoch}")));
        }
        let val_loss = net.loss(&val_x, &val_y, &weights)?;
        let pred = net.predict(&val_x)?;
        let correct = pred.iter().zip(&val_y).filter(|(a, b)| a == b).count();
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
            val_accuracy: correct as f64 / val_y.len() as f64,
        };
        debug!("epoch {epoch}: {rec:?}");
        log.epochs.push(rec);
        if val_loss < best_val {
            best_val = val_loss;
            best_params.copy_from_slice(&net.params);
            log.best_epoch = epoch;
            waited = 0;
        } else {
            waited += 1;
            if waited >= train_cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    if log.best_epoch == 0 {
        return Err(Error::Numeric("validation loss was never finite".into()));
    }
    net.params = best_params;
    info!(
        "trained {} epochs, best {} (val loss {:.4}, val acc {:.3})",
        log.epochs.len(),
        log.best_epoch,
        log.best().val_loss,
        log.best().val_accuracy
    );
    Ok((net, log))
}

/// Planar `[0, 1]` input of an IC image at the network's resolution.
pub fn prepare_input(ic: &IcRecord, cfg: &NetworkConfig) -> Result<Vec<f64>> {
    let (h, w, c) = cfg.input_dims;
    if c != 3 {
        return Err(Error::arg("IC images are RGB; the network must take 3 channels"));
    }
    Ok(resize_image(&ic.image, (h, w))?.to_planar_unit())
}

pub fn prepare_inputs(dataset: &Dataset, cfg: &NetworkConfig) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    let ics: Vec<&IcRecord> = dataset.ics().collect();
    ics.par_iter().map(|ic| prepare_input(ic, cfg)).collect()
}

/// Binary target index: 1 for NOISE, 0 otherwise.
pub fn binary_target(label: Label) -> usize {
    usize::from(label.binary() == BinaryLabel::Noise)
}

fn labels(dataset: &Dataset) -> Result<Vec<Label>> {
    dataset
        .ics()
        .map(|ic| {
            ic.label
                .ok_or_else(|| Error::arg(format!("IC {}/{} is unlabeled", ic.patient_id, ic.ic_id)))
        })
        .collect()
}

/// Trains the NOISE / NOT_NOISE gate on every labeled IC of `dataset`.
pub fn train_binary(
    dataset: &Dataset,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<(NoiseNet, TrainingLog)> {
    if net_cfg.outputs != 1 {
        return Err(Error::arg("the noise gate needs a single sigmoid output"));
    }
    let targets: Vec<usize> = labels(dataset)?.into_iter().map(binary_target).collect();
    let inputs = prepare_inputs(dataset, net_cfg)?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    train(&refs, &targets, net_cfg, train_cfg)
}

/// Trains the three-class baseline with inverse-frequency class weights
/// unless `train_cfg` already supplies weights.
pub fn train_multiclass_baseline(
    dataset: &Dataset,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<(NoiseNet, TrainingLog)> {
    if net_cfg.outputs != 3 {
        return Err(Error::arg("the baseline needs a three-way softmax output"));
    }
    let targets: Vec<usize> = labels(dataset)?.into_iter().map(Label::index).collect();
    let inputs = prepare_inputs(dataset, net_cfg)?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    train_weighted(&refs, &targets, net_cfg, train_cfg)
}

/// [`train`] with inverse-frequency weights filled in when none are given.
pub fn train_weighted(
    inputs: &[&[f64]],
    targets: &[usize],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<(NoiseNet, TrainingLog)> {
    let mut cfg = train_cfg.clone();
    if cfg.class_weights.is_none() {
        let mut counts = vec![0usize; net_cfg.n_classes()];
        for &t in targets {
            if t < counts.len() {
                counts[t] += 1;
            }
        }
        cfg.class_weights = Some(inverse_frequency_weights(&counts)?);
    }
    train(inputs, targets, net_cfg, &cfg)
}

/// Largest relative error between central differences (step `1e-4`) and the
/// analytic gradient, over every parameter. Dropout is not applied.
pub fn finite_difference_check(net: &NoiseNet, inputs: &[&[f64]], targets: &[usize]) -> Result<f64> {
    let weights = vec![1.0; net.config.n_classes()];
    let analytic = net.gradient(inputs, targets, &weights)?;
    let h = 1e-4;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..net.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.loss(inputs, targets, &weights)?;
        probe.params[i] = orig - h;
        let down = probe.loss(inputs, targets, &weights)?;
        probe.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(outputs: usize) -> NetworkConfig {
        NetworkConfig {
            input_dims: (8, 8, 3),
            conv_filters: vec![2, 2, 2],
            dense_units: 4,
            dropout: 0.0,
            lr: 1e-2,
            outputs,
        }
    }

    fn random_inputs(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..len).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn paper_config_parameter_count() {
        assert_eq!(NetworkConfig::default().param_count(), 20_372_929);
    }

    #[test]
    fn indivisible_input_rejected() {
        let cfg = NetworkConfig {
            input_dims: (60, 112, 3),
            ..NetworkConfig::default()
        };
        assert!(NoiseNet::init(&cfg, 1).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = NoiseNet::init(&tiny(1), 5).unwrap();
        let b = NoiseNet::init(&tiny(1), 5).unwrap();
        let c = NoiseNet::init(&tiny(1), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        let l = &a.layout;
        assert!(a.params[l.conv[0].b..l.conv[0].b + 2].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_size_rejected() {
        let net = NoiseNet::init(&tiny(1), 0).unwrap();
        assert!(net.forward(&[0.0; 10]).is_err());
    }

    #[test]
    fn im2col_round_trip_counts_overlaps() {
        // col2im of all-ones columns counts how many windows cover a pixel.
        let (c, h, w) = (1, 3, 3);
        let cols = vec![1.0; c * 9 * h * w];
        let mut out = vec![0.0; h * w];
        col2im(&cols, c, h, w, &mut out);
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for outputs in [1, 3] {
            let mut net = NoiseNet::init(&tiny(outputs), 11).unwrap();
            // Zero biases leave pre-activations exactly on the ReLU kink
            // wherever the input is dead. Seed 3 keeps every pre-activation
            // more than one step away from a kink.
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for p in &mut net.params {
                *p += rng.random_range(-0.05..0.05);
            }
            let xs = random_inputs(5, 192, 2);
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let ys: Vec<usize> = (0..5).map(|i| i % net.config.n_classes()).collect();
            let err = finite_difference_check(&net, &refs, &ys).unwrap();
            assert!(err < 1e-4, "outputs {outputs}: {err}");
        }
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let net = NoiseNet::init(&tiny(1), 3).unwrap();
        let xs = random_inputs(1, 192, 4);
        let one = net.loss(&[&xs[0]], &[1], &[1.0, 1.0]).unwrap();
        let x: &[f64] = &xs[0];
        let four = net.loss(&[x; 4], &[1; 4], &[1.0, 1.0]).unwrap();
        assert!((one - four).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = NoiseNet::init(&tiny(3), 9).unwrap();
        let bytes = net.to_bytes();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(NoiseNet::from_bytes(&bytes).unwrap(), net);
        assert!(NoiseNet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(NoiseNet::from_bytes(&bad).is_err());
    }

    #[test]
    fn class_weights_from_percentages() {
        let w = inverse_frequency_weights(&[511, 431, 56]).unwrap();
        let inv = [1.0 / 0.511, 1.0 / 0.431, 1.0 / 0.056];
        let mean = inv.iter().sum::<f64>() / 3.0;
        for (a, b) in w.iter().zip(inv) {
            assert!((a - b / mean).abs() < 1e-3);
        }
        assert_eq!(inverse_frequency_weights(&[5, 5, 5]).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn split_is_stratified() {
        let targets: Vec<usize> = (0..50).map(|i| usize::from(i % 5 == 0)).collect();
        let (tr, va) = stratified_split(&targets, 0.2, 1);
        assert_eq!(tr.len() + va.len(), 50);
        assert_eq!(va.iter().filter(|&&i| targets[i] == 1).count(), 2);
        assert_eq!(va.iter().filter(|&&i| targets[i] == 0).count(), 8);
    }
}
