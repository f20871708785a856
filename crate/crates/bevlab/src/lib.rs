//! Multi-camera bird's-eye-view vehicle segmentation lab.
//!
//! The crate simulates driving scenes around a six-camera surround rig,
//! synthesizes camera lens occlusions, lifts image features and range
//! sensors into a shared BEV grid, trains a small segmentation head, and
//! measures how occlusions degrade segmentation across sensor-fusion
//! configurations.

pub mod bev;
pub mod config;
pub mod error;
pub mod eval;
pub mod geom;
pub mod img;
pub mod model;
pub mod occlusion;
pub mod ops;
pub mod points;
pub mod scene;

pub use error::{Error, Result};

/// Standard normal via Box-Muller; two uniforms per draw keeps the stream
/// layout independent of the platform's float rounding.
pub(crate) fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Stable per-purpose RNG seed derivation (splitmix64 over the parts).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= splitmix64(p.wrapping_add(h));
        h = splitmix64(h);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
