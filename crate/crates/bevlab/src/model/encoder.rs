//! Fixed image feature encoder.
//!
//! Eight channels, no trainable parameters: normalized RGB, luminance
//! gradient magnitude, and four oriented edge responses. Everything is
//! clamped to [0, 1] so downstream consumers can rely on the range.

use crate::error::{Error, Result};
use crate::img::Image;

/// Output channel count of [`encode_features`].
pub const FEATURE_CHANNELS: usize = 8;

/// Unit directions of the edge responses at 0, 45, 90, and 135 degrees from
/// the image x axis. Exact components, so an axis-aligned edge produces an
/// exactly zero response in the perpendicular channel.
const ORIENTATIONS: [(f64, f64); 4] = [
    (1.0, 0.0),
    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (0.0, 1.0),
    (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
];

/// Encodes a 3-channel color image into 8 fixed feature channels:
/// 0..=2 RGB, 3 luminance gradient magnitude (central differences),
/// 4..=7 directional derivative magnitudes at 0/45/90/135 degrees.
///
/// Border gradients use replicated neighbors. A response at orientation
/// theta is |cos(theta) gx + sin(theta) gy|, so an ideal vertical step edge
/// peaks at 0 degrees and vanishes at 90.
pub fn encode_features(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "feature encoder expects a 3-channel image, got {} channels",
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let mut luma = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(x, y);
            luma[y * w + x] = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
        }
    }
    let mut out = Image::new(w, h, FEATURE_CHANNELS);
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(x, y);
            let o = out.pixel_mut(x, y);
            for c in 0..3 {
                o[c] = p[c].clamp(0.0, 1.0);
            }
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(h - 1);
            let gx = (luma[y * w + xr] - luma[y * w + xl]) / 2.0;
            let gy = (luma[yd * w + x] - luma[yu * w + x]) / 2.0;
            o[3] = (gx * gx + gy * gy).sqrt().clamp(0.0, 1.0) as f32;
            for (k, &(cx, cy)) in ORIENTATIONS.iter().enumerate() {
                o[4 + k] = (cx * gx + cy * gy).abs().clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(out)
}
