//! Idealized range sensors: a spinning multi-ring lidar traced against the
//! exact scene geometry, and a sparse radar with noisy returns and radial
//! velocity.
//!
//! Both emit ego-frame point clouds. Radial velocity is the line-of-sight
//! speed of the hit relative to the (static) sensor: negative approaching,
//! positive receding, 0 for all lidar returns.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{ray_obb_intersect, Ray};
use crate::{mix_seed, standard_normal};
use crate::points::{PointCloud, RangePoint};
use crate::scene::{streams, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarParams {
    /// Beams per ring, spread uniformly over 360 degrees.
    pub n_azimuth: usize,
    /// Ring elevations in degrees; negative points below horizontal.
    pub elevations_deg: Vec<f64>,
    /// Sensor position in the ego frame.
    pub mount: [f64; 3],
    pub max_range: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        LidarParams {
            n_azimuth: 360,
            elevations_deg: vec![-25.0, -18.0, -12.0, -8.0, -5.0, -3.0, -1.5, -0.5],
            mount: [0.0, 0.0, 1.9],
            max_range: 120.0,
        }
    }
}

/// Traces every beam against vehicles and the ground plane, keeping the
/// nearest hit within range. Deterministic: no noise model.
pub fn raycast_lidar(scene: &Scene, params: &LidarParams) -> PointCloud {
    let mount_world = scene
        .ego_pose
        .transform_point(&Vector3::new(params.mount[0], params.mount[1], params.mount[2]));
    let mut points = Vec::new();

    for ring in &params.elevations_deg {
        let elev = ring.to_radians();
        let (se, ce) = elev.sin_cos();
        for step in 0..params.n_azimuth {
            let az = 2.0 * std::f64::consts::PI * step as f64 / params.n_azimuth as f64;
            let (sa, ca) = az.sin_cos();
            let dir_ego = Vector3::new(ca * ce, sa * ce, se);
            let dir = scene.ego_pose.transform_dir(&dir_ego);
            let ray = Ray {
                origin: mount_world,
                direction: dir,
            };

            let mut t_hit = if dir.z < -1e-12 {
                -mount_world.z / dir.z
            } else {
                f64::INFINITY
            };
            for v in &scene.vehicles {
                if let Some(hit) =
                    ray_obb_intersect(&ray, &v.center, &v.half_extents, &v.rotation())
                {
                    if hit.t < t_hit {
                        t_hit = hit.t;
                    }
                }
            }
            if t_hit > params.max_range {
                continue;
            }
            let p_world = ray.at(t_hit);
            let p = scene.ego_pose.inverse_transform_point(&p_world);
            points.push(RangePoint {
                x: p.x,
                y: p.y,
                z: p.z,
                radial_velocity: 0.0,
            });
        }
    }
    PointCloud { points }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarParams {
    /// Returns sampled per vehicle.
    pub returns_per_vehicle: usize,
    /// Gaussian position noise on each return, meters.
    pub noise_sigma: f64,
    /// Gaussian noise on measured radial velocity, m/s.
    pub velocity_sigma: f64,
    /// Ground clutter returns per scene.
    pub clutter: usize,
    /// Clutter falls within this ego-frame radius, meters.
    pub clutter_range: f64,
    /// Sensor position in the ego frame.
    pub mount: [f64; 3],
}

impl Default for RadarParams {
    fn default() -> Self {
        RadarParams {
            returns_per_vehicle: 6,
            noise_sigma: 0.3,
            velocity_sigma: 0.1,
            clutter: 10,
            clutter_range: 40.0,
            mount: [0.0, 0.0, 0.5],
        }
    }
}

/// Samples noisy returns from each vehicle body plus ground clutter.
/// Seeded from the scene's radar stream, so the same scene always yields
/// the same cloud. Radar is modeled without occlusion: every vehicle
/// reflects regardless of line of sight.
pub fn simulate_radar(scene: &Scene, params: &RadarParams) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[scene.seed, streams::RADAR]));
    let mount_ego = Vector3::new(params.mount[0], params.mount[1], params.mount[2]);
    let mut points = Vec::new();

    for v in &scene.vehicles {
        let rot = v.rotation();
        for _ in 0..params.returns_per_vehicle {
            let lx = rng.gen_range(-v.half_extents.x..v.half_extents.x);
            let ly = rng.gen_range(-v.half_extents.y..v.half_extents.y);
            let nx = standard_normal(&mut rng) * params.noise_sigma;
            let ny = standard_normal(&mut rng) * params.noise_sigma;
            let hit_world = v.center + rot * Vector3::new(lx, ly, 0.0);
            let hit_world = Vector3::new(hit_world.x + nx, hit_world.y + ny, 0.6);
            let p = scene.ego_pose.inverse_transform_point(&hit_world);

            // Line of sight in the ego frame; vehicle velocity is world xy,
            // rotated into ego axes for the dot product.
            let los = p - mount_ego;
            let los_xy = f64::hypot(los.x, los.y).max(1e-9);
            let vel_world = Vector3::new(v.velocity[0], v.velocity[1], 0.0);
            let vel_ego = scene.ego_pose.rotation().transpose() * vel_world;
            let vr = (vel_ego.x * los.x + vel_ego.y * los.y) / los_xy
                + standard_normal(&mut rng) * params.velocity_sigma;

            points.push(RangePoint {
                x: p.x,
                y: p.y,
                z: p.z,
                radial_velocity: vr,
            });
        }
    }

    for _ in 0..params.clutter {
        let r = rng.gen_range(2.0..params.clutter_range);
        let az = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let vr = standard_normal(&mut rng) * params.velocity_sigma;
        points.push(RangePoint {
            x: r * az.cos(),
            y: r * az.sin(),
            z: 0.0,
            radial_velocity: vr,
        });
    }

    PointCloud { points }
}
