//! Segmentation metrics: intersection-over-union and occlusion degradation.

pub mod matrix;
pub mod panels;

use crate::bev::BevMask;
use crate::error::{Error, Result};

/// Cell-count based IoU. `both_empty` flags the degenerate 0/0 case, which
/// is defined as a perfect score so empty scenes do not poison averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoUResult {
    pub intersection: usize,
    pub union: usize,
    pub iou: f64,
    pub both_empty: bool,
}

impl IoUResult {
    pub fn percent(&self) -> f64 {
        100.0 * self.iou
    }
}

/// IoU between two binary BEV masks of equal shape.
pub fn iou(pred: &BevMask, gt: &BevMask) -> Result<IoUResult> {
    let mut acc = IoUAccumulator::new();
    acc.add(pred, gt)?;
    Ok(acc.result())
}

/// Pools intersections and unions across scenes (dataset-level IoU), the
/// default aggregation; per-scene ratio averaging is a separate helper.
#[derive(Debug, Clone, Copy, Default)]
pub struct IoUAccumulator {
    pub intersection: usize,
    pub union: usize,
}

impl IoUAccumulator {
    pub fn new() -> Self {
        IoUAccumulator::default()
    }

    pub fn add(&mut self, pred: &BevMask, gt: &BevMask) -> Result<()> {
        if pred.nx != gt.nx || pred.ny != gt.ny {
            return Err(Error::invalid(format!(
                "mask shapes differ: {}x{} vs {}x{}",
                pred.nx, pred.ny, gt.nx, gt.ny
            )));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            self.intersection += (p & g) as usize;
            self.union += (p | g) as usize;
        }
        Ok(())
    }

    pub fn result(&self) -> IoUResult {
        let both_empty = self.union == 0;
        IoUResult {
            intersection: self.intersection,
            union: self.union,
            iou: if both_empty { 1.0 } else { self.intersection as f64 / self.union as f64 },
            both_empty,
        }
    }
}

/// Mean of per-scene IoU ratios, the alternative aggregation.
pub fn mean_scene_iou(pairs: &[(BevMask, BevMask)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("mean over zero scenes"));
    }
    let mut sum = 0.0;
    for (pred, gt) in pairs {
        sum += iou(pred, gt)?.iou;
    }
    Ok(sum / pairs.len() as f64)
}

/// Relative IoU drop, percent: 100 * (clean - occluded) / clean.
/// Full precision; reports truncate to one decimal via [`report_one_decimal`].
pub fn degradation_percent(clean_iou_pct: f64, occluded_iou_pct: f64) -> Result<f64> {
    if !(clean_iou_pct.is_finite() && clean_iou_pct > 0.0) {
        return Err(Error::invalid(format!(
            "degradation needs a positive clean IoU, got {clean_iou_pct}"
        )));
    }
    Ok(100.0 * (clean_iou_pct - occluded_iou_pct) / clean_iou_pct)
}

/// One-decimal report value, truncated toward zero. Truncation, not
/// rounding, is the convention that reproduces the reference degradation
/// row exactly.
pub fn report_one_decimal(x: f64) -> f64 {
    (x * 10.0).trunc() / 10.0
}
