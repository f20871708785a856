//! BEV vehicle segmentation head.
//!
//! A deliberately small stand-in for a deep backbone: fixed hand-crafted
//! image features (see [`encoder`]) feed a two-layer trainable head over the
//! BEV grid, a 3x3 convolution into a rectifier into a 1x1 per-cell linear
//! logit. Forward and backward passes run in f64 on f32-stored parameters so
//! analytic gradients survive a finite-difference audit.

pub mod encoder;
pub mod loss;
pub mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bev::io::{read_float_block, write_float_block};
use crate::bev::{BevFeatureMap, BevMask};
use crate::error::{Error, Result};
use crate::standard_normal;
use train::TrainConfig;

/// Default hidden width of the segmentation head.
pub const DEFAULT_HIDDEN: usize = 16;

/// Schema version of the persisted parameter file sidecar.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Two-layer segmentation head: 3x3 conv (c_in -> hidden, zero padding, bias),
/// rectifier, then 1x1 linear (hidden -> 1 logit, bias).
///
/// Layouts: `l1_w[((h * 3 + ky) * 3 + kx) * c_in + c]` with (ky, kx) the
/// kernel row/column and (1, 1) the center tap; `l2_w[h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegHeadParams {
    pub c_in: usize,
    pub hidden: usize,
    pub l1_w: Vec<f32>,
    pub l1_b: Vec<f32>,
    pub l2_w: Vec<f32>,
    pub l2_b: f32,
}

/// Per-cell pre-sigmoid logits over an nx x ny grid, row-major `[iy * nx + ix]`.
#[derive(Debug, Clone)]
pub struct SegmentationLogits {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

/// Sidecar metadata persisted next to a parameter file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub schema_version: u32,
    pub c_in: usize,
    pub hidden: usize,
    pub seed: u64,
    pub train: Option<TrainConfig>,
}

impl SegHeadParams {
    /// Zero-initialized head (useful as a deterministic fixture).
    pub fn zeros(c_in: usize, hidden: usize) -> Self {
        SegHeadParams {
            c_in,
            hidden,
            l1_w: vec![0.0; 9 * c_in * hidden],
            l1_b: vec![0.0; hidden],
            l2_w: vec![0.0; hidden],
            l2_b: 0.0,
        }
    }

    /// He-style initialization: normal weights scaled by sqrt(2 / fan_in),
    /// zero biases. Deterministic for a fixed seed.
    pub fn he_init(c_in: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SegHeadParams::zeros(c_in, hidden);
        let s1 = (2.0 / (9 * c_in) as f64).sqrt();
        for w in p.l1_w.iter_mut() {
            *w = (standard_normal(&mut rng) * s1) as f32;
        }
        let s2 = (2.0 / hidden as f64).sqrt();
        for w in p.l2_w.iter_mut() {
            *w = (standard_normal(&mut rng) * s2) as f32;
        }
        p
    }

    /// Total trainable parameter count: 9*c_in*hidden + hidden + hidden + 1.
    pub fn n_params(&self) -> usize {
        9 * self.c_in * self.hidden + 2 * self.hidden + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.hidden == 0 {
            return Err(Error::invalid("segmentation head needs c_in >= 1 and hidden >= 1"));
        }
        if self.l1_w.len() != 9 * self.c_in * self.hidden
            || self.l1_b.len() != self.hidden
            || self.l2_w.len() != self.hidden
        {
            return Err(Error::invalid(format!(
                "parameter shapes inconsistent with c_in {} hidden {}",
                self.c_in, self.hidden
            )));
        }
        let finite = self.l1_w.iter().chain(&self.l1_b).chain(&self.l2_w).all(|v| v.is_finite())
            && self.l2_b.is_finite();
        if !finite {
            return Err(Error::invalid("segmentation head has non-finite parameters"));
        }
        Ok(())
    }

    /// Flat parameter vector in the fixed order l1_w, l1_b, l2_w, l2_b.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut flat = Vec::with_capacity(self.n_params());
        flat.extend_from_slice(&self.l1_w);
        flat.extend_from_slice(&self.l1_b);
        flat.extend_from_slice(&self.l2_w);
        flat.push(self.l2_b);
        flat
    }

    pub fn from_flat(c_in: usize, hidden: usize, flat: &[f32]) -> Result<Self> {
        let expect = 9 * c_in * hidden + 2 * hidden + 1;
        if flat.len() != expect {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} values, expected {expect}",
                flat.len()
            )));
        }
        let (l1_w, rest) = flat.split_at(9 * c_in * hidden);
        let (l1_b, rest) = rest.split_at(hidden);
        let (l2_w, rest) = rest.split_at(hidden);
        let p = SegHeadParams {
            c_in,
            hidden,
            l1_w: l1_w.to_vec(),
            l1_b: l1_b.to_vec(),
            l2_w: l2_w.to_vec(),
            l2_b: rest[0],
        };
        p.validate()?;
        Ok(p)
    }

    /// Persists parameters as a float block plus a JSON sidecar recording
    /// layer shapes, the init seed, and the training configuration.
    pub fn save(&self, path: &Path, seed: u64, train: Option<&TrainConfig>) -> Result<()> {
        self.validate()?;
        let flat = self.to_flat();
        write_float_block(path, (flat.len() as u32, 1, 1), &flat)?;
        let sidecar = ModelSidecar {
            schema_version: MODEL_SCHEMA_VERSION,
            c_in: self.c_in,
            hidden: self.hidden,
            seed,
            train: train.cloned(),
        };
        let sidecar_path = crate::bev::io::sidecar_path(path);
        let text = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&sidecar_path, text).map_err(|e| Error::io(&sidecar_path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ModelSidecar)> {
        let sidecar_path = crate::bev::io::sidecar_path(path);
        let text =
            std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        let sidecar: ModelSidecar = serde_json::from_str(&text)?;
        if sidecar.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Format {
                what: "model sidecar",
                path: sidecar_path,
                detail: format!("unsupported schema version {}", sidecar.schema_version),
            });
        }
        let (dims, flat) = read_float_block(path)?;
        let expect = 9 * sidecar.c_in * sidecar.hidden + 2 * sidecar.hidden + 1;
        if dims.0 as usize != expect || dims.1 != 1 || dims.2 != 1 {
            return Err(Error::Format {
                what: "model parameters",
                path: path.to_path_buf(),
                detail: format!("block dims {dims:?} do not match sidecar shapes"),
            });
        }
        let p = SegHeadParams::from_flat(sidecar.c_in, sidecar.hidden, &flat)?;
        Ok((p, sidecar))
    }
}

impl SegmentationLogits {
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.nx + ix]
    }
}

/// Forward pass: logits = l2(relu(conv3x3(bev))). Zero padding keeps the
/// output grid the size of the input grid.
pub fn forward(params: &SegHeadParams, bev: &BevFeatureMap) -> Result<SegmentationLogits> {
    Ok(forward_full(params, bev)?.0)
}

/// Forward pass that also returns the pre-rectifier hidden activations
/// `z[(iy * nx + ix) * hidden + h]` needed by the backward pass.
pub(crate) fn forward_full(
    params: &SegHeadParams,
    bev: &BevFeatureMap,
) -> Result<(SegmentationLogits, Vec<f64>)> {
    params.validate()?;
    if bev.channels != params.c_in {
        return Err(Error::invalid(format!(
            "feature map has {} channels, head expects {}",
            bev.channels, params.c_in
        )));
    }
    let (nx, ny, c_in, hidden) = (bev.spec.nx, bev.spec.ny, params.c_in, params.hidden);
    let mut hidden_pre = vec![0.0f64; nx * ny * hidden];
    let mut logits = vec![0.0f64; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let z = &mut hidden_pre[(iy * nx + ix) * hidden..(iy * nx + ix + 1) * hidden];
            for (h, zh) in z.iter_mut().enumerate() {
                *zh = params.l1_b[h] as f64;
            }
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
                    for (h, zh) in z.iter_mut().enumerate() {
                        let wbase = ((h * 3 + ky) * 3 + kx) * c_in;
                        let mut acc = 0.0f64;
                        for (c, &v) in cell.iter().enumerate() {
                            acc += params.l1_w[wbase + c] as f64 * v as f64;
                        }
                        *zh += acc;
                    }
                }
            }
            let mut logit = params.l2_b as f64;
            for (h, &zh) in z.iter().enumerate() {
                logit += params.l2_w[h] as f64 * zh.max(0.0);
            }
            logits[iy * nx + ix] = logit;
        }
    }
    Ok((SegmentationLogits { nx, ny, data: logits }, hidden_pre))
}

/// Binarizes logits into a BEV mask: cell = 1 iff sigmoid(logit) >= 0.5,
/// equivalently logit >= 0 (the zero boundary counts as vehicle).
pub fn predict(params: &SegHeadParams, bev: &BevFeatureMap) -> Result<BevMask> {
    let logits = forward(params, bev)?;
    let mut mask = BevMask::new(logits.nx, logits.ny);
    for iy in 0..logits.ny {
        for ix in 0..logits.nx {
            mask.set(ix, iy, logits.get(ix, iy) >= 0.0);
        }
    }
    Ok(mask)
}
