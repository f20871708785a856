//! Ray-cast renderer for synthetic scenes.
//!
//! Every pixel gets the exact first hit of its viewing ray against the
//! vehicle boxes and the textured ground plane, so image content, depth,
//! and instance ids are mutually consistent and agree with the same
//! ray-box test the range sensors use. Per-camera ray tables can be
//! precomputed once per rig pose and reused across scenes.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::{camera_ray, ray_obb_intersect, CameraModel, Pose, Ray, NEAR_PLANE};
use crate::img::{IdImage, Image};
use crate::scene::Scene;

/// Precomputed unit viewing rays and ground intersections for one camera
/// at a fixed ego pose.
pub struct CameraRays {
    pub ego_pose: Pose,
    pub origin: Vector3<f64>,
    width: usize,
    height: usize,
    dirs: Vec<Vector3<f64>>,
    ground_t: Vec<f64>,
}

pub fn precompute_rays(cam: &CameraModel, ego_pose: &Pose) -> CameraRays {
    let width = cam.intrinsics.width as usize;
    let height = cam.intrinsics.height as usize;
    let mut dirs = Vec::with_capacity(width * height);
    let mut ground_t = Vec::with_capacity(width * height);
    let origin = camera_ray(cam, 0.0, 0.0, ego_pose).origin;
    for y in 0..height {
        for x in 0..width {
            let ray = camera_ray(cam, x as f64, y as f64, ego_pose);
            // Ground plane z = 0; only rays pointing down can hit it.
            let t = if ray.direction.z < -1e-12 {
                -ray.origin.z / ray.direction.z
            } else {
                f64::INFINITY
            };
            dirs.push(ray.direction);
            ground_t.push(t);
        }
    }
    CameraRays {
        ego_pose: ego_pose.clone(),
        origin,
        width,
        height,
        dirs,
        ground_t,
    }
}

pub struct RenderOutput {
    pub color: Image,
    pub ids: IdImage,
    /// Euclidean first-hit distance per pixel; infinite for sky.
    pub depth: Vec<f32>,
}

/// Renders one camera view of the scene.
pub fn render_camera(scene: &Scene, cam: &CameraModel) -> Result<RenderOutput> {
    let rays = precompute_rays(cam, &scene.ego_pose);
    render_camera_cached(scene, cam, &rays)
}

/// Renders using a precomputed ray table; the table's ego pose must match
/// the scene's.
pub fn render_camera_cached(
    scene: &Scene,
    cam: &CameraModel,
    rays: &CameraRays,
) -> Result<RenderOutput> {
    if rays.ego_pose != scene.ego_pose {
        return Err(Error::invalid(
            "ray table was built for a different ego pose",
        ));
    }
    let (w, h) = (rays.width, rays.height);
    let mut color = Image::new(w, h, 3);
    let mut ids = IdImage::new(w, h);
    let mut depth = vec![f64::INFINITY; w * h];

    // Background pass: textured ground below the horizon, sky above.
    for i in 0..w * h {
        let t = rays.ground_t[i];
        let rgb = if t.is_finite() {
            depth[i] = t;
            let p = rays.origin + rays.dirs[i] * t;
            ground_color(p.x, p.y, scene.ground_seed)
        } else {
            sky_color(rays.dirs[i].z)
        };
        let px = i * 3;
        color.data_mut()[px..px + 3].copy_from_slice(&rgb);
    }

    // Vehicle pass: slab-test the pixels under each box's screen bounds.
    let cam_from_world = scene.ego_pose.compose(&cam.extrinsics).invert();
    for vehicle in &scene.vehicles {
        let Some((x0, x1, y0, y1)) =
            screen_bounds(vehicle, cam, &cam_from_world, w, h)
        else {
            continue;
        };
        let rot = vehicle.rotation();
        let rot_t = rot.transpose();
        let o_local = rot_t * (rays.origin - vehicle.center);
        let half = vehicle.half_extents;
        let base = vehicle_base_color(vehicle.id);

        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * w + x;
                let d_local = rot_t * rays.dirs[i];
                let Some((t, axis, sign)) = slab_hit(&o_local, &d_local, &half) else {
                    continue;
                };
                if t >= depth[i] {
                    continue;
                }
                depth[i] = t;
                ids.ids[i] = vehicle.id.min(255) as u8;
                let normal = rot.column(axis) * sign;
                let rgb = shade(base, &normal.into());
                let px = i * 3;
                color.data_mut()[px..px + 3].copy_from_slice(&rgb);
            }
        }
    }

    Ok(RenderOutput {
        color,
        ids,
        depth: depth.into_iter().map(|t| t as f32).collect(),
    })
}

/// Same slab test as `geom::ray_obb_intersect`, specialized to a ray
/// already transformed into the box frame.
#[inline]
fn slab_hit(
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    half: &Vector3<f64>,
) -> Option<(f64, usize, f64)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = 0usize;
    let mut enter_sign = 1.0f64;
    let mut exit_axis = 0usize;
    let mut exit_sign = 1.0f64;
    for axis in 0..3 {
        let hx = half[axis];
        if d[axis].abs() < 1e-12 {
            if o[axis].abs() > hx {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let mut t0 = (-hx - o[axis]) * inv;
        let mut t1 = (hx - o[axis]) * inv;
        let sign0 = -d[axis].signum();
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_enter {
            t_enter = t0;
            enter_axis = axis;
            enter_sign = sign0;
        }
        if t1 < t_exit {
            t_exit = t1;
            exit_axis = axis;
            exit_sign = -sign0;
        }
    }
    if t_enter > t_exit || t_exit < 0.0 {
        return None;
    }
    if t_enter >= 0.0 {
        Some((t_enter, enter_axis, enter_sign))
    } else {
        Some((t_exit, exit_axis, exit_sign))
    }
}

/// Conservative pixel bounds of the box: the projected-corner rectangle
/// when all corners are in front of the near plane, the full image when
/// the box crosses it, `None` when fully behind (safe by convexity).
fn screen_bounds(
    vehicle: &crate::scene::VehicleBox,
    cam: &CameraModel,
    cam_from_world: &Pose,
    w: usize,
    h: usize,
) -> Option<(usize, usize, usize, usize)> {
    let rot = vehicle.rotation();
    let mut any_front = false;
    let mut all_front = true;
    let mut umin = f64::INFINITY;
    let mut umax = f64::NEG_INFINITY;
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let corner_local = Vector3::new(
                    sx * vehicle.half_extents.x,
                    sy * vehicle.half_extents.y,
                    sz * vehicle.half_extents.z,
                );
                let corner = vehicle.center + rot * corner_local;
                let p = cam_from_world.transform_point(&corner);
                if p.z < NEAR_PLANE {
                    all_front = false;
                    continue;
                }
                any_front = true;
                let u = cam.intrinsics.fx * p.x / p.z + cam.intrinsics.cx;
                let v = cam.intrinsics.fy * p.y / p.z + cam.intrinsics.cy;
                umin = umin.min(u);
                umax = umax.max(u);
                vmin = vmin.min(v);
                vmax = vmax.max(v);
            }
        }
    }
    if !any_front {
        return None;
    }
    if !all_front {
        return Some((0, w, 0, h));
    }
    // One pixel of slack; the corner rectangle already bounds the hull.
    let x0 = (umin.floor() - 1.0).max(0.0) as usize;
    let y0 = (vmin.floor() - 1.0).max(0.0) as usize;
    let x1 = ((umax.ceil() + 2.0) as usize).min(w);
    let y1 = ((vmax.ceil() + 2.0) as usize).min(h);
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Some((x0, x1, y0, y1))
}

fn hash_cell(ix: i64, iy: i64, seed: u64, tag: u64) -> f32 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(ix as u64)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9)
        .wrapping_add(iy as u64)
        .wrapping_mul(0x94D0_49BB_1331_11EB)
        .wrapping_add(tag);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32
}

/// Checkerboard asphalt with two scales of hashed brightness variation;
/// rich in edges for the image feature encoder.
fn ground_color(x: f64, y: f64, seed: u64) -> [f32; 3] {
    let cx = (x / 2.0).floor();
    let cy = (y / 2.0).floor();
    let parity = ((cx as i64 & 1) ^ (cy as i64 & 1)) as f32;
    let mut v = 0.38 + 0.10 * parity;
    v += (hash_cell(cx as i64, cy as i64, seed, 11) - 0.5) * 0.10;
    let fx = (x / 0.5).floor() as i64;
    let fy = (y / 0.5).floor() as i64;
    v += (hash_cell(fx, fy, seed, 13) - 0.5) * 0.06;
    let tint = (hash_cell(fx, fy, seed, 17) - 0.5) * 0.05;
    [
        (v + tint).clamp(0.0, 1.0),
        v.clamp(0.0, 1.0),
        (v - tint).clamp(0.0, 1.0),
    ]
}

fn sky_color(dir_z: f64) -> [f32; 3] {
    let t = (dir_z.max(0.0) / 0.35).min(1.0) as f32;
    let horizon = [0.66, 0.72, 0.80];
    let zenith = [0.36, 0.50, 0.74];
    [
        horizon[0] + (zenith[0] - horizon[0]) * t,
        horizon[1] + (zenith[1] - horizon[1]) * t,
        horizon[2] + (zenith[2] - horizon[2]) * t,
    ]
}

/// Distinct hue per vehicle id via the golden-ratio walk.
fn vehicle_base_color(id: u32) -> [f32; 3] {
    let h = (id as f32 * 0.618_034) % 1.0;
    hsv_to_rgb(h, 0.6, 0.75)
}

fn shade(base: [f32; 3], normal: &Vector3<f64>) -> [f32; 3] {
    let light = Vector3::new(0.35, 0.25, 0.90).normalize();
    let lambert = normal.dot(&light).max(0.0) as f32;
    let k = 0.45 + 0.55 * lambert;
    [base[0] * k, base[1] * k, base[2] * k]
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match (i as i32).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Exposes the renderer's ray for one pixel; range sensors and tests use
/// it to check depth consistency.
pub fn pixel_ray(cam: &CameraModel, x: usize, y: usize, ego_pose: &Pose) -> Ray {
    camera_ray(cam, x as f64, y as f64, ego_pose)
}

#[allow(unused)]
fn obb_hit_distance(ray: &Ray, vehicle: &crate::scene::VehicleBox) -> Option<f64> {
    ray_obb_intersect(ray, &vehicle.center, &vehicle.half_extents, &vehicle.rotation())
        .map(|hit| hit.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::project_point;
    use crate::scene::{nuscenes_like_rig, VehicleBox};

    fn one_box_scene(center: Vector3<f64>, yaw: f64) -> Scene {
        Scene {
            seed: 5,
            ground_seed: 99,
            ego_pose: Pose::identity(),
            vehicles: vec![VehicleBox {
                id: 1,
                center,
                half_extents: Vector3::new(2.2, 0.9, 0.8),
                yaw,
                velocity: [0.0, 0.0],
            }],
        }
    }

    #[test]
    fn center_pixel_hits_the_box_at_ray_obb_distance() {
        let rig = nuscenes_like_rig();
        let cam = &rig[0];
        let scene = one_box_scene(Vector3::new(10.0, 0.0, 0.8), 0.3);
        let out = render_camera(&scene, cam).unwrap();

        // The box center projects in view; that pixel must carry its id.
        let pix = project_point(cam, &scene.vehicles[0].center, &scene.ego_pose).unwrap();
        let (x, y) = (pix.u.round() as usize, pix.v.round() as usize);
        assert_eq!(out.ids.get(x, y), 1);

        let ray = pixel_ray(cam, x, y, &scene.ego_pose);
        let expect = obb_hit_distance(&ray, &scene.vehicles[0]).unwrap();
        assert_eq!(out.depth[y * 800 + x], expect as f32);
    }

    #[test]
    fn box_pixels_stay_inside_the_projected_corner_hull() {
        let rig = nuscenes_like_rig();
        let cam = &rig[0];
        let scene = one_box_scene(Vector3::new(14.0, 2.0, 0.8), -0.8);
        let out = render_camera(&scene, cam).unwrap();

        // Conservative oracle: every pixel with the box id must fall in the
        // axis-aligned bounds of the projected corners, padded a pixel.
        let v = &scene.vehicles[0];
        let rot = v.rotation();
        let mut umin = f64::INFINITY;
        let mut umax = f64::NEG_INFINITY;
        let mut vmin = f64::INFINITY;
        let mut vmax = f64::NEG_INFINITY;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let corner = v.center
                        + rot * Vector3::new(
                            sx * v.half_extents.x,
                            sy * v.half_extents.y,
                            sz * v.half_extents.z,
                        );
                    let pix = project_point(cam, &corner, &scene.ego_pose).unwrap();
                    umin = umin.min(pix.u);
                    umax = umax.max(pix.u);
                    vmin = vmin.min(pix.v);
                    vmax = vmax.max(pix.v);
                }
            }
        }
        let mut seen = 0usize;
        for y in 0..448 {
            for x in 0..800 {
                if out.ids.get(x, y) == 1 {
                    seen += 1;
                    let (uf, vf) = (x as f64, y as f64);
                    assert!(uf >= umin - 1.0 && uf <= umax + 1.0, "pixel ({x},{y})");
                    assert!(vf >= vmin - 1.0 && vf <= vmax + 1.0, "pixel ({x},{y})");
                }
            }
        }
        assert!(seen > 200, "box should cover many pixels, saw {seen}");
    }

    #[test]
    fn nearer_box_occludes_farther_box() {
        let mut scene = one_box_scene(Vector3::new(8.0, 0.0, 0.8), 0.0);
        scene.vehicles.push(VehicleBox {
            id: 2,
            center: Vector3::new(16.0, 0.0, 0.8),
            half_extents: Vector3::new(1.5, 0.7, 0.7),
            yaw: 0.0,
            velocity: [0.0, 0.0],
        });
        let rig = nuscenes_like_rig();
        let out = render_camera(&scene, &rig[0]).unwrap();
        let n2 = out.ids.ids.iter().filter(|&&i| i == 2).count();
        // The small far box sits entirely in the near box's shadow.
        assert_eq!(n2, 0);
        assert!(out.ids.ids.iter().any(|&i| i == 1));

        // Swap order of insertion; the result must not change.
        let mut swapped = scene.clone();
        swapped.vehicles.reverse();
        let out2 = render_camera(&swapped, &rig[0]).unwrap();
        assert_eq!(out.ids, out2.ids);
        assert_eq!(out.color, out2.color);
    }

    #[test]
    fn background_splits_into_sky_and_textured_ground() {
        let scene = Scene {
            seed: 1,
            ground_seed: 7,
            ego_pose: Pose::identity(),
            vehicles: vec![],
        };
        let rig = nuscenes_like_rig();
        let cam = &rig[0];
        let out = render_camera(&scene, cam).unwrap();

        // Top center: sky (infinite depth, id 0).
        assert_eq!(out.ids.get(400, 10), 0);
        assert!(out.depth[10 * 800 + 400].is_infinite());

        // Bottom center: ground, at the analytic plane distance.
        let (x, y) = (400usize, 440usize);
        let ray = pixel_ray(cam, x, y, &scene.ego_pose);
        assert!(ray.direction.z < 0.0);
        let t = -ray.origin.z / ray.direction.z;
        assert_eq!(out.depth[y * 800 + x], t as f32);

        // Ground texture varies (not a constant fill).
        let row = 430usize;
        let mut distinct = std::collections::BTreeSet::new();
        for x in 0..800 {
            distinct.insert((out.color.get(x, row, 1) * 255.0) as u8);
        }
        assert!(distinct.len() > 3, "ground row too uniform: {distinct:?}");

        // Different ground seed changes the texture deterministically.
        let mut other = scene.clone();
        other.ground_seed = 8;
        let out2 = render_camera(&other, cam).unwrap();
        assert_ne!(out.color, out2.color);
        let out3 = render_camera(&scene, cam).unwrap();
        assert_eq!(out.color, out3.color);
    }

    #[test]
    fn cached_and_uncached_paths_agree() {
        let scene = one_box_scene(Vector3::new(9.0, -1.0, 0.8), 1.2);
        let rig = nuscenes_like_rig();
        let cam = &rig[2];
        let rays = precompute_rays(cam, &scene.ego_pose);
        let a = render_camera(&scene, cam).unwrap();
        let b = render_camera_cached(&scene, cam, &rays).unwrap();
        assert_eq!(a.color, b.color);
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.depth, b.depth);

        // A ray table for a different ego pose is rejected.
        let moved = Pose::from_yaw(0.5, Vector3::zeros());
        let stale = precompute_rays(cam, &moved);
        assert!(render_camera_cached(&scene, cam, &stale).is_err());
    }

    #[test]
    fn behind_camera_box_is_skipped_entirely() {
        let scene = one_box_scene(Vector3::new(-15.0, 0.0, 0.8), 0.0);
        let rig = nuscenes_like_rig();
        let out = render_camera(&scene, &rig[0]).unwrap();
        assert!(out.ids.ids.iter().all(|&i| i == 0));
    }
}
