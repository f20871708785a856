//! Qualitative panel rendering.
//!
//! Six panels per scene, left to right: occluded camera mosaic, camera BEV
//! feature magnitude, BEV occlusion mask (red), camera-only prediction,
//! fused prediction with fusion-recovered cells outlined, ground truth.
//! Every panel is the BEV grid upscaled by the same integer factor; BEV
//! cells map to k x k pixel blocks with +x right and +y up.

use crate::bev::{BevFeatureMap, BevMask};
use crate::error::{Error, Result};
use crate::img::Image;

/// Pure highlight color of fusion-recovered cells; used nowhere else in the
/// panels, so counting cells that contain it recovers the overlay count.
pub const RECOVERED_COLOR: [f32; 3] = [0.0, 1.0, 0.0];

/// The six panels plus the recovered-cell count drawn in panel 5.
pub struct PanelSet {
    pub images: Vec<Image>,
    pub recovered: usize,
}

fn block_origin(ix: usize, iy: usize, ny: usize, k: usize) -> (usize, usize) {
    (ix * k, (ny - 1 - iy) * k)
}

fn fill_block(img: &mut Image, ix: usize, iy: usize, ny: usize, k: usize, color: [f32; 3]) {
    let (x0, y0) = block_origin(ix, iy, ny, k);
    for y in y0..y0 + k {
        for x in x0..x0 + k {
            img.pixel_mut(x, y).copy_from_slice(&color);
        }
    }
}

fn outline_block(img: &mut Image, ix: usize, iy: usize, ny: usize, k: usize, color: [f32; 3]) {
    let (x0, y0) = block_origin(ix, iy, ny, k);
    for y in y0..y0 + k {
        for x in x0..x0 + k {
            let border = x == x0 || x == x0 + k - 1 || y == y0 || y == y0 + k - 1;
            if border || k == 1 {
                img.pixel_mut(x, y).copy_from_slice(&color);
            }
        }
    }
}

fn mask_panel(mask: &BevMask, k: usize, on: [f32; 3], off: [f32; 3]) -> Image {
    let mut img = Image::new(mask.nx * k, mask.ny * k, 3);
    for iy in 0..mask.ny {
        for ix in 0..mask.nx {
            fill_block(&mut img, ix, iy, mask.ny, k, if mask.get(ix, iy) { on } else { off });
        }
    }
    img
}

/// Nearest-neighbor fit of `src` into the (x0, y0, w, h) region of `dst`,
/// preserving aspect ratio and centering.
fn blit_fitted(dst: &mut Image, src: &Image, x0: usize, y0: usize, w: usize, h: usize) {
    let sx = w as f64 / src.width() as f64;
    let sy = h as f64 / src.height() as f64;
    let s = sx.min(sy);
    let tw = ((src.width() as f64 * s) as usize).max(1).min(w);
    let th = ((src.height() as f64 * s) as usize).max(1).min(h);
    let ox = x0 + (w - tw) / 2;
    let oy = y0 + (h - th) / 2;
    for y in 0..th {
        for x in 0..tw {
            let u = ((x as f64 + 0.5) / s) as usize;
            let v = ((y as f64 + 0.5) / s) as usize;
            let px = src.pixel(u.min(src.width() - 1), v.min(src.height() - 1));
            let out = dst.pixel_mut(ox + x, oy + y);
            for c in 0..3 {
                out[c] = px[c.min(px.len() - 1)];
            }
        }
    }
}

fn camera_mosaic(images: &[Image], width: usize, height: usize) -> Image {
    let mut canvas = Image::new(width, height, 3);
    let cols = 2usize;
    let rows = images.len().div_ceil(cols);
    let (cw, ch) = (width / cols, height / rows.max(1));
    for (i, img) in images.iter().enumerate() {
        let (cx, cy) = (i % cols, i / cols);
        blit_fitted(&mut canvas, img, cx * cw, cy * ch, cw, ch);
    }
    canvas
}

fn feature_magnitude_panel(bev: &BevFeatureMap, k: usize) -> Image {
    let (nx, ny) = (bev.spec.nx, bev.spec.ny);
    let mut mag = vec![0.0f64; nx * ny];
    let mut peak = 0.0f64;
    for iy in 0..ny {
        for ix in 0..nx {
            let cell = bev.cell(ix, iy);
            let m = cell.iter().map(|v| v.abs() as f64).sum::<f64>() / cell.len() as f64;
            mag[iy * nx + ix] = m;
            peak = peak.max(m);
        }
    }
    let mut img = Image::new(nx * k, ny * k, 3);
    for iy in 0..ny {
        for ix in 0..nx {
            let g = if peak > 0.0 { (mag[iy * nx + ix] / peak) as f32 } else { 0.0 };
            fill_block(&mut img, ix, iy, ny, k, [g, g, g]);
        }
    }
    img
}

/// Renders the six panels. All BEV inputs must share the camera feature
/// map's grid; `upscale` is the integer cell size in pixels.
pub fn render_panels(
    occluded_images: &[Image],
    cam_bev: &BevFeatureMap,
    occlusion_bev: &BevMask,
    cam_pred: &BevMask,
    fused_pred: &BevMask,
    gt: &BevMask,
    upscale: usize,
) -> Result<PanelSet> {
    if upscale == 0 {
        return Err(Error::invalid("panel upscale factor must be >= 1"));
    }
    if occluded_images.is_empty() {
        return Err(Error::invalid("panel mosaic needs at least one camera image"));
    }
    let (nx, ny) = (cam_bev.spec.nx, cam_bev.spec.ny);
    for (name, m) in [
        ("occlusion", occlusion_bev),
        ("camera prediction", cam_pred),
        ("fused prediction", fused_pred),
        ("ground truth", gt),
    ] {
        if m.nx != nx || m.ny != ny {
            return Err(Error::invalid(format!(
                "{name} mask is {}x{}, expected the {nx}x{ny} grid",
                m.nx, m.ny
            )));
        }
    }
    let k = upscale;
    let white = [1.0, 1.0, 1.0];
    let black = [0.0, 0.0, 0.0];
    let red = [0.85, 0.05, 0.05];

    let mut fused_panel = mask_panel(fused_pred, k, white, black);
    let mut recovered = 0;
    for iy in 0..ny {
        for ix in 0..nx {
            if fused_pred.get(ix, iy) && !cam_pred.get(ix, iy) && gt.get(ix, iy) {
                outline_block(&mut fused_panel, ix, iy, ny, k, RECOVERED_COLOR);
                recovered += 1;
            }
        }
    }

    let images = vec![
        camera_mosaic(occluded_images, nx * k, ny * k),
        feature_magnitude_panel(cam_bev, k),
        mask_panel(occlusion_bev, k, red, black),
        mask_panel(cam_pred, k, white, black),
        fused_panel,
        mask_panel(gt, k, white, black),
    ];
    Ok(PanelSet { images, recovered })
}
