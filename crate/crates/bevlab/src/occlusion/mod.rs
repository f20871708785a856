//! Camera lens occlusion synthesis: binary masks (random box, cross-camera
//! overlap, procedural soiling), translucent or opaque compositing, and
//! projection of lens masks into BEV cells.

pub mod blur;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::bev::{BevGridSpec, BevMask};
use crate::error::{Error, Result};
use crate::geom::{project_point, unproject_pixel, CameraModel, Pose, NEAR_PLANE};
use crate::img::Image;
use blur::{blur_region_into, GaussianKernel};

/// Kernel size used when nothing else is configured; pairs with the
/// default sigma (size - 1) / 6.
pub const DEFAULT_KERNEL_SIZE: usize = 251;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    None,
    /// One axis-aligned square box at a random position.
    Random,
    /// The region of this camera's image that at least one other camera
    /// also sees.
    Overlap,
    /// Procedural soiling blobs mimicking lens dirt and droplets.
    Realistic,
}

impl OcclusionMode {
    pub const ALL: [OcclusionMode; 4] = [
        OcclusionMode::None,
        OcclusionMode::Random,
        OcclusionMode::Overlap,
        OcclusionMode::Realistic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OcclusionMode::None => "none",
            OcclusionMode::Random => "random",
            OcclusionMode::Overlap => "overlap",
            OcclusionMode::Realistic => "realistic",
        }
    }
}

impl std::str::FromStr for OcclusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(OcclusionMode::None),
            "random" => Ok(OcclusionMode::Random),
            "overlap" => Ok(OcclusionMode::Overlap),
            "realistic" => Ok(OcclusionMode::Realistic),
            other => Err(Error::invalid(format!(
                "unknown occlusion mode `{other}` (none, random, overlap, realistic)"
            ))),
        }
    }
}

impl std::fmt::Display for OcclusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opacity {
    /// Masked pixels are replaced by a Gaussian blur of the image.
    Blur,
    /// Masked pixels are replaced by mid-gray.
    Opaque,
}

impl Opacity {
    pub fn as_str(self) -> &'static str {
        match self {
            Opacity::Blur => "blur",
            Opacity::Opaque => "opaque",
        }
    }
}

impl std::str::FromStr for Opacity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blur" => Ok(Opacity::Blur),
            "opaque" => Ok(Opacity::Opaque),
            other => Err(Error::invalid(format!(
                "unknown opacity `{other}` (blur, opaque)"
            ))),
        }
    }
}

impl std::fmt::Display for Opacity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary per-pixel lens mask; 1 marks occluded pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl OcclusionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        OcclusionMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        OcclusionMask {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    /// Accepts only images whose pixels are exactly 0 or 1 (e.g. 0 / 255
    /// in an 8-bit file).
    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::invalid(format!(
                "mask image must have 1 channel, has {}",
                img.channels()
            )));
        }
        let mut bad = 0usize;
        let data: Vec<u8> = img
            .data()
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    0
                } else if v == 1.0 {
                    1
                } else {
                    bad += 1;
                    0
                }
            })
            .collect();
        if bad > 0 {
            return Err(Error::NonBinaryMask { count: bad });
        }
        Ok(OcclusionMask {
            width: img.width(),
            height: img.height(),
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count_ones() as f64 / self.data.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Tight bounds (x0, x1, y0, y1) of the masked pixels, half-open.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut x0 = usize::MAX;
        let mut x1 = 0usize;
        let mut y0 = usize::MAX;
        let mut y1 = 0usize;
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            if let Some(first) = row.iter().position(|&v| v != 0) {
                let last = self.width - row.iter().rev().position(|&v| v != 0).unwrap();
                x0 = x0.min(first);
                x1 = x1.max(last);
                y0 = y0.min(y);
                y1 = y1.max(y + 1);
            }
        }
        (x0 != usize::MAX).then_some((x0, x1, y0, y1))
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(
            self.width,
            self.height,
            1,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("mask dimensions are consistent")
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        self.to_image().write_pgm(path)
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        OcclusionMask::from_image(&Image::read_pgm(path)?)
    }

    /// Nearest-neighbor resample for masks whose dimensions do not match
    /// the target camera.
    pub fn resized_nearest(&self, width: usize, height: usize) -> OcclusionMask {
        let mut out = OcclusionMask::empty(width, height);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sy = sy.min(self.height - 1);
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                let sx = sx.min(self.width - 1);
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }
}

/// One axis-aligned square of side floor(side_fraction * min(w, h)) at a
/// uniformly random position.
pub fn random_box_mask(
    width: usize,
    height: usize,
    seed: u64,
    side_fraction: f64,
) -> Result<OcclusionMask> {
    if !(0.0..=1.0).contains(&side_fraction) {
        return Err(Error::invalid(format!(
            "side fraction must be in [0, 1], got {side_fraction}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    let side = (side_fraction * width.min(height) as f64).floor() as usize;
    let mut mask = OcclusionMask::empty(width, height);
    if side == 0 {
        return Ok(mask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = rng.gen_range(0..=width - side);
    let y0 = rng.gen_range(0..=height - side);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            mask.set(x, y, true);
        }
    }
    Ok(mask)
}

/// Marks the pixels of `camera` whose world point at `reference_range`
/// meters is also in view of at least one other rig camera. The rig is
/// evaluated at the identity ego pose; lens masks are rig-fixed.
pub fn overlap_region_mask(
    rig: &[CameraModel],
    camera: &str,
    reference_range: f64,
) -> Result<OcclusionMask> {
    if reference_range <= NEAR_PLANE {
        return Err(Error::invalid(format!(
            "reference range {reference_range} must exceed the near plane {NEAR_PLANE}"
        )));
    }
    let cam = rig
        .iter()
        .find(|c| c.name == camera)
        .ok_or_else(|| Error::invalid(format!("camera `{camera}` is not in the rig")))?;
    let ego = Pose::identity();
    let (w, h) = (
        cam.intrinsics.width as usize,
        cam.intrinsics.height as usize,
    );
    let mut mask = OcclusionMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = unproject_pixel(cam, x as f64, y as f64, reference_range, &ego)?;
            let seen_elsewhere = rig
                .iter()
                .filter(|other| other.name != cam.name)
                .any(|other| project_point(other, &p, &ego).is_some());
            mask.set(x, y, seen_elsewhere);
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilingParams {
    /// Number of Gaussian dirt blobs.
    pub n_blobs: usize,
    /// Target masked fraction of the image, in (0, 1).
    pub coverage: f64,
}

impl Default for SoilingParams {
    fn default() -> Self {
        SoilingParams {
            n_blobs: 12,
            coverage: 0.35,
        }
    }
}

/// Sums randomly placed anisotropic Gaussian bumps and thresholds the
/// field at the quantile that leaves `coverage` of pixels masked. Zero
/// blobs yield an empty mask.
pub fn procedural_soiling_mask(
    width: usize,
    height: usize,
    seed: u64,
    params: &SoilingParams,
) -> Result<OcclusionMask> {
    if !(params.coverage > 0.0 && params.coverage < 1.0) {
        return Err(Error::invalid(format!(
            "soiling coverage must be inside (0, 1), got {}",
            params.coverage
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    let mut mask = OcclusionMask::empty(width, height);
    if params.n_blobs == 0 {
        return Ok(mask);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = vec![0f32; width * height];

    // Broad positive base so the threshold quantile never lands on a
    // plateau of exact zeros.
    let (wf, hf) = (width as f64, height as f64);
    let base_sx = 0.6 * wf;
    let base_sy = 0.6 * hf;
    for y in 0..height {
        let dy = (y as f64 - hf / 2.0) / base_sy;
        for x in 0..width {
            let dx = (x as f64 - wf / 2.0) / base_sx;
            field[y * width + x] = (0.05 * (-0.5 * (dx * dx + dy * dy)).exp()) as f32;
        }
    }

    let min_dim = wf.min(hf);
    let mut col = vec![0f32; height];
    let mut row = vec![0f32; width];
    for _ in 0..params.n_blobs {
        let cx = rng.gen_range(0.0..wf);
        let cy = rng.gen_range(0.0..hf);
        let sx = rng.gen_range(0.05..0.16) * min_dim;
        let sy = rng.gen_range(0.05..0.16) * min_dim;
        let amp = rng.gen_range(0.4..1.0) as f32;

        for (y, c) in col.iter_mut().enumerate() {
            let d = (y as f64 - cy) / sy;
            *c = if d.abs() < 4.0 {
                (-0.5 * d * d).exp() as f32
            } else {
                0.0
            };
        }
        for (x, r) in row.iter_mut().enumerate() {
            let d = (x as f64 - cx) / sx;
            *r = if d.abs() < 4.0 {
                (-0.5 * d * d).exp() as f32
            } else {
                0.0
            };
        }
        for y in 0..height {
            if col[y] == 0.0 {
                continue;
            }
            let k = amp * col[y];
            let line = &mut field[y * width..(y + 1) * width];
            for (f, &r) in line.iter_mut().zip(&row) {
                *f += k * r;
            }
        }
    }

    let mut sorted = field.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("field is finite"));
    let k = ((1.0 - params.coverage) * sorted.len() as f64).floor() as usize;
    let threshold = sorted[k.min(sorted.len() - 1)];
    for (m, &f) in mask.data.iter_mut().zip(&field) {
        *m = (f > threshold) as u8;
    }
    Ok(mask)
}

/// Composites an occlusion onto an image. Blur opacity replaces masked
/// pixels with the Gaussian-blurred image (unmasked pixels are untouched
/// bit-for-bit); opaque opacity paints masked pixels mid-gray.
pub fn apply_occlusion(
    img: &Image,
    mask: &OcclusionMask,
    opacity: Opacity,
    kernel: &GaussianKernel,
) -> Result<Image> {
    if mask.width() != img.width() || mask.height() != img.height() {
        return Err(Error::invalid(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width(),
            mask.height(),
            img.width(),
            img.height()
        )));
    }
    let mut out = img.clone();
    match opacity {
        Opacity::Opaque => {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if mask.get(x, y) {
                        out.pixel_mut(x, y).fill(0.5);
                    }
                }
            }
        }
        Opacity::Blur => {
            let Some((x0, x1, y0, y1)) = mask.bounding_box() else {
                return Ok(out);
            };
            // Blur only where masked pixels can live; the region pass is
            // bit-identical to a full-image blur there.
            let mut blurred = img.clone();
            blur_region_into(img, kernel, x0, x1, y0, y1, &mut blurred);
            for y in y0..y1 {
                for x in x0..x1 {
                    if mask.get(x, y) {
                        let src = blurred.pixel(x, y).to_vec();
                        out.pixel_mut(x, y).copy_from_slice(&src);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Projects per-camera lens masks into the BEV grid: a cell is occluded
/// when at least half of its in-view (camera, z-level) voxel projections
/// land on masked pixels. Cells no camera sees stay unmarked.
pub fn project_occlusion_to_bev(
    masks: &[OcclusionMask],
    rig: &[CameraModel],
    spec: &BevGridSpec,
) -> Result<BevMask> {
    spec.validate()?;
    if masks.len() != rig.len() {
        return Err(Error::invalid(format!(
            "{} masks for {} cameras",
            masks.len(),
            rig.len()
        )));
    }
    for (mask, cam) in masks.iter().zip(rig) {
        if mask.width() != cam.intrinsics.width as usize
            || mask.height() != cam.intrinsics.height as usize
        {
            return Err(Error::invalid(format!(
                "mask {}x{} does not match camera `{}`",
                mask.width(),
                mask.height(),
                cam.name
            )));
        }
    }

    let ego = Pose::identity();
    let mut out = BevMask::from_spec(spec);
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            let (x, y) = spec.cell_center(ix, iy);
            let mut in_view = 0u32;
            let mut occluded = 0u32;
            for iz in 0..spec.nz {
                let p = Vector3::new(x, y, spec.voxel_center_z(iz));
                for (cam, mask) in rig.iter().zip(masks) {
                    let Some(pix) = project_point(cam, &p, &ego) else {
                        continue;
                    };
                    in_view += 1;
                    let mx = (pix.u.round() as usize).min(mask.width() - 1);
                    let my = (pix.v.round() as usize).min(mask.height() - 1);
                    if mask.get(mx, my) {
                        occluded += 1;
                    }
                }
            }
            if in_view > 0 && 2 * occluded >= in_view {
                out.set(ix, iy, true);
            }
        }
    }
    Ok(out)
}
