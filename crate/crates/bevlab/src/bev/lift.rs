//! Parameter-free lift of camera-plane features onto the BEV voxel grid.
//!
//! Each voxel center is projected into every camera; the voxel feature is
//! the mean of the bilinearly sampled features over the cameras that see
//! it, and zero where no camera does. The grid is anchored to the ego
//! frame, so camera extrinsics alone decide visibility.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::bev::{BevGridSpec, VoxelGrid};
use crate::error::{Error, Result};
use crate::geom::{CameraModel, NEAR_PLANE};
use crate::img::Image;

struct CamView<'a> {
    rot_cam_from_ego: Matrix3<f64>,
    cam_center_ego: Vector3<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: f64,
    height: f64,
    features: &'a Image,
}

impl CamView<'_> {
    /// Matches `geom::project_point` for an identity ego pose.
    #[inline]
    fn project(&self, p_ego: &Vector3<f64>) -> Option<(f64, f64)> {
        let p = self.rot_cam_from_ego * (p_ego - self.cam_center_ego);
        if p.z < NEAR_PLANE {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        let in_view = u >= 0.0 && u < self.width && v >= 0.0 && v < self.height;
        in_view.then_some((u, v))
    }
}

/// Lifts per-camera feature images into a voxel grid. `features[i]` must
/// match `rig[i]`'s image dimensions, and all images must share one
/// channel count.
pub fn lift_camera_features(
    features: &[Image],
    rig: &[CameraModel],
    spec: &BevGridSpec,
) -> Result<VoxelGrid> {
    spec.validate()?;
    if features.len() != rig.len() {
        return Err(Error::invalid(format!(
            "{} feature images for {} cameras",
            features.len(),
            rig.len()
        )));
    }
    if rig.is_empty() {
        return Err(Error::invalid("camera rig is empty"));
    }
    let channels = features[0].channels();
    for (img, cam) in features.iter().zip(rig) {
        if img.channels() != channels {
            return Err(Error::invalid(
                "all feature images must share one channel count",
            ));
        }
        if img.width() != cam.intrinsics.width as usize
            || img.height() != cam.intrinsics.height as usize
        {
            return Err(Error::invalid(format!(
                "feature image {}x{} does not match camera `{}` at {}x{}",
                img.width(),
                img.height(),
                cam.name,
                cam.intrinsics.width,
                cam.intrinsics.height
            )));
        }
    }

    let views: Vec<CamView> = rig
        .iter()
        .zip(features)
        .map(|(cam, img)| CamView {
            rot_cam_from_ego: cam.extrinsics.rotation().transpose(),
            cam_center_ego: *cam.extrinsics.translation(),
            fx: cam.intrinsics.fx,
            fy: cam.intrinsics.fy,
            cx: cam.intrinsics.cx,
            cy: cam.intrinsics.cy,
            width: cam.intrinsics.width as f64,
            height: cam.intrinsics.height as f64,
            features: img,
        })
        .collect();

    let mut grid = VoxelGrid::new(*spec, channels);
    let row_len = spec.nx * spec.nz * channels;
    let spec = *spec;

    grid.data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(iy, row)| {
            let mut sample = vec![0f32; channels];
            let mut acc = vec![0f64; channels];
            for ix in 0..spec.nx {
                let (x, y) = spec.cell_center(ix, iy);
                for iz in 0..spec.nz {
                    let p = Vector3::new(x, y, spec.voxel_center_z(iz));
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let mut hits = 0u32;
                    for view in &views {
                        if let Some((u, v)) = view.project(&p) {
                            view.features.sample_bilinear(u, v, &mut sample);
                            for (a, &s) in acc.iter_mut().zip(&sample) {
                                *a += s as f64;
                            }
                            hits += 1;
                        }
                    }
                    if hits > 0 {
                        let inv = 1.0 / hits as f64;
                        let base = (ix * spec.nz + iz) * channels;
                        for c in 0..channels {
                            row[base + c] = (acc[c] * inv) as f32;
                        }
                    }
                }
            }
        });

    Ok(grid)
}
