//! Synthetic driving scenes: oriented vehicle boxes on a flat ground plane
//! around a six-camera surround rig.

pub mod render;
pub mod sensors;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::bev::{BevGridSpec, BevMask};
use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, CameraModel, Pose};
use crate::mix_seed;

/// Seed-stream tags so every consumer of a scene seed draws independently.
pub mod streams {
    pub const GROUND_TEXTURE: u64 = 1;
    pub const RADAR: u64 = 2;
    pub const OCCLUSION: u64 = 3;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleBox {
    /// 1-based instance id; 0 is reserved for background in id images.
    pub id: u32,
    /// World-frame box center; `center.z == half_extents.z` when parked on
    /// the ground plane.
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    /// Heading about world z; 0 points along world +x.
    pub yaw: f64,
    /// World-frame ground velocity (vx, vy), m/s.
    pub velocity: [f64; 2],
}

impl VehicleBox {
    pub fn rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    /// Footprint corners in the world xy plane, counterclockwise.
    pub fn footprint_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hx, hy) = (self.half_extents.x, self.half_extents.y);
        let mut out = [[0.0; 2]; 4];
        for (i, (sx, sy)) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .into_iter()
            .enumerate()
        {
            let lx = sx * hx;
            let ly = sy * hy;
            out[i] = [
                self.center.x + c * lx - s * ly,
                self.center.y + s * lx + c * ly,
            ];
        }
        out
    }

    /// True when the world xy point lies in the closed footprint rectangle.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        let (s, c) = self.yaw.sin_cos();
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= self.half_extents.x && ly.abs() <= self.half_extents.y
    }

    /// Circumradius of the footprint rectangle.
    pub fn footprint_radius(&self) -> f64 {
        self.half_extents.x.hypot(self.half_extents.y)
    }
}

/// Separating-axis test on the two footprint rectangles; touching edges do
/// not count as overlap.
pub fn footprints_overlap(a: &VehicleBox, b: &VehicleBox) -> bool {
    let ca = a.footprint_corners();
    let cb = b.footprint_corners();
    for boxes in [(&ca, a.yaw), (&cb, b.yaw)] {
        let (_, yaw) = boxes;
        let (s, c) = yaw.sin_cos();
        for axis in [[c, s], [-s, c]] {
            let project = |corners: &[[f64; 2]; 4]| {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for p in corners {
                    let d = p[0] * axis[0] + p[1] * axis[1];
                    min = min.min(d);
                    max = max.max(d);
                }
                (min, max)
            };
            let (amin, amax) = project(&ca);
            let (bmin, bmax) = project(&cb);
            if amax <= bmin || bmax <= amin {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneParams {
    pub n_vehicles: usize,
    /// Vehicles are placed with footprints inside the square
    /// |x|, |y| <= world_extent.
    pub world_extent: f64,
    /// Radius of the vehicle-free disc around the ego, meters.
    pub ego_clearance: f64,
    /// Moving vehicles draw speed from (2, max_speed) m/s along heading.
    pub max_speed: f64,
    /// Probability that a vehicle is parked (zero velocity).
    pub parked_fraction: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            n_vehicles: 12,
            world_extent: 50.0,
            ego_clearance: 3.0,
            max_speed: 15.0,
            parked_fraction: 0.3,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles > 250 {
            return Err(Error::invalid(
                "at most 250 vehicles (ids must fit 8-bit id images)",
            ));
        }
        if !(self.world_extent > 0.0) {
            return Err(Error::invalid("world extent must be positive"));
        }
        if self.ego_clearance < 0.0 {
            return Err(Error::invalid("ego clearance must be non-negative"));
        }
        if !(self.max_speed > 2.0) {
            return Err(Error::invalid("max speed must exceed 2 m/s"));
        }
        if !(0.0..=1.0).contains(&self.parked_fraction) {
            return Err(Error::invalid("parked fraction must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Seed the scene was generated from; sensor and occlusion synthesis
    /// derive their own streams from it.
    pub seed: u64,
    /// Stream for the procedural ground texture.
    pub ground_seed: u64,
    /// World-from-ego transform.
    pub ego_pose: Pose,
    pub vehicles: Vec<VehicleBox>,
}

impl Scene {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Places `n_vehicles` boxes by rejection sampling: a candidate is kept if
/// its footprint stays inside the world square, clears the ego disc, and
/// overlaps no previously placed vehicle. Fails after 10 * n^2 candidate
/// draws. The same seed always yields the identical scene.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n_vehicles;
    let max_attempts = 10 * n * n;
    let mut attempts = 0usize;
    let mut vehicles: Vec<VehicleBox> = Vec::with_capacity(n);

    while vehicles.len() < n {
        if attempts >= max_attempts {
            return Err(Error::PlacementFailed {
                placed: vehicles.len(),
                requested: n,
                attempts,
            });
        }
        attempts += 1;

        let hx: f64 = rng.gen_range(1.8..2.7);
        let hy: f64 = rng.gen_range(0.75..1.05);
        let hz: f64 = rng.gen_range(0.55..0.95);
        let candidate_radius = hx.hypot(hy);
        let margin = params.world_extent - candidate_radius;
        if margin <= 0.0 {
            continue;
        }
        let cx = rng.gen_range(-margin..margin);
        let cy = rng.gen_range(-margin..margin);
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let parked = rng.gen_bool(params.parked_fraction);
        let speed = if parked {
            0.0
        } else {
            rng.gen_range(2.0..params.max_speed)
        };

        let candidate = VehicleBox {
            id: vehicles.len() as u32 + 1,
            center: Vector3::new(cx, cy, hz),
            half_extents: Vector3::new(hx, hy, hz),
            yaw,
            velocity: [speed * yaw.cos(), speed * yaw.sin()],
        };

        if f64::hypot(cx, cy) < params.ego_clearance + candidate_radius {
            continue;
        }
        if vehicles.iter().any(|v| footprints_overlap(v, &candidate)) {
            continue;
        }
        vehicles.push(candidate);
    }

    Ok(Scene {
        seed,
        ground_seed: mix_seed(&[seed, streams::GROUND_TEXTURE]),
        ego_pose: Pose::identity(),
        vehicles,
    })
}

/// Camera layout loosely following a production surround rig: six cameras
/// at 800x448, 70 degree horizontal FOV except a 110 degree rear camera,
/// yawed so adjacent fields of view overlap and the union covers 360
/// degrees.
pub fn nuscenes_like_rig() -> Vec<CameraModel> {
    scaled_rig(1.0)
}

/// Same rig at a scaled image resolution (fields of view unchanged);
/// scale 1 is the full 800x448. Resolution trades render and encode cost
/// against image detail, so experiment configs can shrink it.
pub fn scaled_rig(scale: f64) -> Vec<CameraModel> {
    assert!(scale > 0.0 && scale.is_finite(), "rig scale must be positive");
    let width = ((800.0 * scale).round() as u32).max(8);
    let height = ((448.0 * scale).round() as u32).max(8);
    // Ego-from-camera base rotation for a camera looking along ego +x:
    // camera x -> ego -y, camera y -> ego -z, camera z -> ego +x.
    let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let deg = std::f64::consts::PI / 180.0;
    let layout: [(&str, f64, [f64; 3], f64); 6] = [
        ("cam_front", 0.0, [1.7, 0.0, 1.6], 70.0),
        ("cam_front_left", 55.0, [1.2, 0.5, 1.6], 70.0),
        ("cam_front_right", -55.0, [1.2, -0.5, 1.6], 70.0),
        ("cam_back_left", 110.0, [0.0, 0.5, 1.6], 70.0),
        ("cam_back_right", -110.0, [0.0, -0.5, 1.6], 70.0),
        ("cam_back", 180.0, [-0.6, 0.0, 1.6], 110.0),
    ];
    layout
        .into_iter()
        .map(|(name, yaw_deg, t, hfov_deg)| {
            let yaw = Pose::from_yaw(yaw_deg * deg, Vector3::zeros());
            let rotation = yaw.rotation() * base;
            CameraModel {
                name: name.into(),
                intrinsics: CameraIntrinsics::from_hfov(width, height, hfov_deg * deg),
                extrinsics: Pose::new(rotation, Vector3::new(t[0], t[1], t[2]))
                    .expect("rig rotations are orthonormal by construction"),
            }
        })
        .collect()
}

/// Rasterizes vehicle footprints onto the grid: a cell is 1 when its
/// center lies inside any vehicle footprint. Cells and vehicle centers are
/// compared in the world frame via the scene's ego pose.
pub fn ground_truth_bev(scene: &Scene, spec: &BevGridSpec) -> Result<BevMask> {
    spec.validate()?;
    let mut mask = BevMask::from_spec(spec);
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            let (x, y) = spec.cell_center(ix, iy);
            let p = scene.ego_pose.transform_point(&Vector3::new(x, y, 0.0));
            if scene
                .vehicles
                .iter()
                .any(|v| v.footprint_contains(p.x, p.y))
            {
                mask.set(ix, iy, true);
            }
        }
    }
    Ok(mask)
}
