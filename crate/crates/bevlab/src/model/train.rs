//! Analytic gradients and the training loop.
//!
//! Reverse-mode gradients are computed by hand through the 1x1 linear, the
//! rectifier, and the 3x3 convolution. The optimizer is decoupled-weight-
//! decay Adam over an f64 master copy of the parameters; the f32 parameters
//! are rewritten once at the end, so a zero learning rate leaves them
//! bit-identical. Shuffling draws one permutation per epoch from a single
//! seeded stream, which makes the visiting order a pure function of the
//! configured seed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bev::{BevFeatureMap, BevMask};
use crate::error::{Error, Result};
use crate::model::loss::bce_with_logits;
use crate::model::{forward_full, SegHeadParams};

/// Largest automatic positive-class weight; beyond this the loss surface
/// gets too cliff-like for the small head.
pub const MAX_AUTO_POS_WEIGHT: f64 = 50.0;

/// Training hyperparameters. Defaults are desk scale; every field can be
/// overridden from config or flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Step size. Zero is allowed and leaves parameters untouched.
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seed of the epoch shuffle stream.
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied to every parameter.
    pub weight_decay: f64,
    /// Positive-class weight; None derives negative/positive cell ratio of
    /// the training set, capped at [`MAX_AUTO_POS_WEIGHT`].
    pub pos_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            epochs: 40,
            batch_size: 4,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            pos_weight: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} {b} must be in [0, 1)")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::invalid(format!("eps {} must be > 0", self.eps)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        if let Some(w) = self.pos_weight {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!("positive-class weight {w} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Gradients of the mean loss with respect to every head parameter, in the
/// same layouts as [`SegHeadParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub l1_w: Vec<f64>,
    pub l1_b: Vec<f64>,
    pub l2_w: Vec<f64>,
    pub l2_b: f64,
}

impl ParamGrads {
    fn zeros(c_in: usize, hidden: usize) -> Self {
        ParamGrads {
            l1_w: vec![0.0; 9 * c_in * hidden],
            l1_b: vec![0.0; hidden],
            l2_w: vec![0.0; hidden],
            l2_b: 0.0,
        }
    }

    fn add_scaled(&mut self, other: &ParamGrads, s: f64) {
        for (a, b) in self.l1_w.iter_mut().zip(&other.l1_w) {
            *a += s * b;
        }
        for (a, b) in self.l1_b.iter_mut().zip(&other.l1_b) {
            *a += s * b;
        }
        for (a, b) in self.l2_w.iter_mut().zip(&other.l2_w) {
            *a += s * b;
        }
        self.l2_b += s * other.l2_b;
    }

    /// Flat gradient vector in the parameter order l1_w, l1_b, l2_w, l2_b.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat =
            Vec::with_capacity(self.l1_w.len() + self.l1_b.len() + self.l2_w.len() + 1);
        flat.extend_from_slice(&self.l1_w);
        flat.extend_from_slice(&self.l1_b);
        flat.extend_from_slice(&self.l2_w);
        flat.push(self.l2_b);
        flat
    }
}

/// Loss and exact gradients for one sample via reverse-mode chain rule.
/// The rectifier subgradient at exactly zero is taken as zero.
pub fn backward(
    params: &SegHeadParams,
    bev: &BevFeatureMap,
    labels: &BevMask,
    pos_weight: f64,
) -> Result<(f64, ParamGrads)> {
    let (logits, hidden_pre) = forward_full(params, bev)?;
    let lg = bce_with_logits(&logits, labels, pos_weight)?;
    let (nx, ny, c_in, hidden) = (bev.spec.nx, bev.spec.ny, params.c_in, params.hidden);
    let mut g = ParamGrads::zeros(c_in, hidden);
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            let gi = lg.grad[i];
            if gi == 0.0 {
                continue;
            }
            let z = &hidden_pre[i * hidden..(i + 1) * hidden];
            g.l2_b += gi;
            for h in 0..hidden {
                if z[h] <= 0.0 {
                    continue;
                }
                g.l2_w[h] += gi * z[h];
                let dz = gi * params.l2_w[h] as f64;
                g.l1_b[h] += dz;
                for ky in 0..3usize {
                    let sy = iy as isize + ky as isize - 1;
                    if sy < 0 || sy >= ny as isize {
                        continue;
                    }
                    for kx in 0..3usize {
                        let sx = ix as isize + kx as isize - 1;
                        if sx < 0 || sx >= nx as isize {
                            continue;
                        }
                        let cell = bev.cell(sx as usize, sy as usize);
                        let wbase = ((h * 3 + ky) * 3 + kx) * c_in;
                        for (c, &v) in cell.iter().enumerate() {
                            g.l1_w[wbase + c] += dz * v as f64;
                        }
                    }
                }
            }
        }
    }
    Ok((lg.loss, g))
}

/// Mean loss and mean gradient over a batch, accumulated in batch order.
pub fn batch_gradient(
    params: &SegHeadParams,
    batch: &[&(BevFeatureMap, BevMask)],
    pos_weight: f64,
) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut acc = ParamGrads::zeros(params.c_in, params.hidden);
    let mut loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for (bev, labels) in batch {
        let (l, g) = backward(params, bev, labels, pos_weight)?;
        loss += l * inv;
        acc.add_scaled(&g, inv);
    }
    Ok((loss, acc))
}

/// Negative/positive cell ratio of the dataset, capped; 1.0 when either
/// class is absent.
pub fn auto_pos_weight(data: &[(BevFeatureMap, BevMask)]) -> f64 {
    let pos: usize = data.iter().map(|(_, m)| m.count_ones()).sum();
    let total: usize = data.iter().map(|(_, m)| m.len()).sum();
    let neg = total - pos;
    if pos == 0 || neg == 0 {
        return 1.0;
    }
    (neg as f64 / pos as f64).min(MAX_AUTO_POS_WEIGHT)
}

/// Trained parameters plus the per-epoch mean loss curve.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: SegHeadParams,
    pub epoch_loss: Vec<f64>,
    /// The positive-class weight actually used.
    pub pos_weight: f64,
}

/// Trains the head with decoupled-weight-decay adaptive moments.
/// Deterministic for a fixed config: the shuffle stream, batch boundaries,
/// and accumulation orders are all fixed.
pub fn train(
    init: &SegHeadParams,
    data: &[(BevFeatureMap, BevMask)],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    init.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training needs a non-empty dataset"));
    }
    let spec0 = data[0].0.spec;
    for (i, (bev, labels)) in data.iter().enumerate() {
        if bev.channels != init.c_in {
            return Err(Error::invalid(format!(
                "sample {i} has {} channels, head expects {}",
                bev.channels, init.c_in
            )));
        }
        if bev.spec != spec0 || labels.nx != spec0.nx || labels.ny != spec0.ny {
            return Err(Error::invalid(format!("sample {i} disagrees with the dataset grid")));
        }
    }
    let pos_weight = cfg.pos_weight.unwrap_or_else(|| auto_pos_weight(data));

    let mut master: Vec<f64> = init.to_flat().iter().map(|&v| v as f64).collect();
    let n_params = master.len();
    let mut m = vec![0.0f64; n_params];
    let mut v = vec![0.0f64; n_params];
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut params = init.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&(BevFeatureMap, BevMask)> =
                chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = batch_gradient(&params, &batch, pos_weight)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            step += 1;
            let g = grads.to_flat();
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for j in 0..n_params {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                master[j] -=
                    cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * master[j]);
            }
            let flat32: Vec<f32> = master.iter().map(|&x| x as f32).collect();
            // Exploding parameters are a divergence, not a shape error.
            if flat32.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            params = SegHeadParams::from_flat(init.c_in, init.hidden, &flat32)?;
        }
        let mean = loss_sum / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epoch_loss.push(mean);
    }
    Ok(TrainResult { params, epoch_loss, pos_weight })
}

/// Writes a loss curve as `epoch,mean_loss` CSV, epochs 1-based.
pub fn write_loss_curve_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, l));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
