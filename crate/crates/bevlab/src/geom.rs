//! Rigid transforms, pinhole cameras, and ray-box intersection.
//!
//! Conventions used throughout the crate:
//! * World frame: z up, ground plane at z = 0.
//! * Ego frame: x forward, y left, z up, origin at the ground under the rig.
//! * Camera frame: +z forward (optical axis), +x right, +y down.
//! * `Pose` maps child-frame coordinates into the parent frame, so camera
//!   extrinsics are ego-from-camera and `Scene::ego_pose` is world-from-ego.
//! * Pixel coordinates are continuous; (u, v) = (3.0, 7.0) is the center of
//!   the pixel at column 3, row 7. A point is in view when 0 <= u < width
//!   and 0 <= v < height at depth >= `NEAR_PLANE`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Minimum camera-frame depth for a point to be considered visible, meters.
pub const NEAR_PLANE: f64 = 0.1;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rigid transform mapping child-frame points into the parent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Fails unless `rotation` is orthonormal with determinant +1
    /// (within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err:.3e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation determinant is {:.12}, expected +1",
                rotation.determinant()
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    /// Rotation about the parent z axis; yaw 0 keeps the frames aligned.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        Pose {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self` is parent-from-mid, `other` is mid-from-child; the result is
    /// parent-from-child.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> Pose {
        let rot_t = self.rotation.transpose();
        Pose {
            rotation: rot_t,
            translation: -(rot_t * self.translation),
        }
    }

    /// Child-frame point to parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Parent-frame point to child frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Child-frame direction to parent frame (no translation).
    pub fn transform_dir(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * d
    }
}

#[derive(Serialize, Deserialize, Clone)]
struct PoseRepr {
    /// Row-major 3x3 rotation.
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let r = &p.rotation;
        PoseRepr {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        let m = r.rotation;
        Pose::new(
            Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]),
            Vector3::new(r.translation[0], r.translation[1], r.translation[2]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Pinhole intrinsics for a given horizontal field of view, principal
    /// point at the image center and square pixels.
    pub fn from_hfov(width: u32, height: u32, hfov_rad: f64) -> Self {
        let fx = width as f64 / 2.0 / (hfov_rad / 2.0).tan();
        CameraIntrinsics {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        Ok(())
    }

    pub fn hfov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }
}

impl Default for CameraIntrinsics {
    /// 800x448 at 70 degrees horizontal field of view.
    fn default() -> Self {
        CameraIntrinsics::from_hfov(800, 448, 70f64.to_radians())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    /// Ego-from-camera transform.
    pub extrinsics: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelProjection {
    pub u: f64,
    pub v: f64,
    /// Camera-frame z of the point, meters.
    pub depth: f64,
}

/// Projects a world point through a camera mounted on an ego at `ego_pose`.
/// Returns `None` when the point is behind the near plane or outside the
/// image bounds; being out of view is an expected outcome, not an error.
pub fn project_point(
    cam: &CameraModel,
    p_world: &Vector3<f64>,
    ego_pose: &Pose,
) -> Option<PixelProjection> {
    let p_ego = ego_pose.inverse_transform_point(p_world);
    let p_cam = cam.extrinsics.inverse_transform_point(&p_ego);
    if p_cam.z < NEAR_PLANE {
        return None;
    }
    let u = cam.intrinsics.fx * p_cam.x / p_cam.z + cam.intrinsics.cx;
    let v = cam.intrinsics.fy * p_cam.y / p_cam.z + cam.intrinsics.cy;
    let in_view = u >= 0.0
        && u < cam.intrinsics.width as f64
        && v >= 0.0
        && v < cam.intrinsics.height as f64;
    in_view.then_some(PixelProjection { u, v, depth: p_cam.z })
}

/// Inverse of `project_point` at a known camera-frame depth.
pub fn unproject_pixel(
    cam: &CameraModel,
    u: f64,
    v: f64,
    depth: f64,
    ego_pose: &Pose,
) -> Result<Vector3<f64>> {
    if depth < NEAR_PLANE {
        return Err(Error::invalid(format!(
            "unprojection depth {depth} is closer than the near plane {NEAR_PLANE}"
        )));
    }
    let p_cam = Vector3::new(
        (u - cam.intrinsics.cx) / cam.intrinsics.fx * depth,
        (v - cam.intrinsics.cy) / cam.intrinsics.fy * depth,
        depth,
    );
    let p_ego = cam.extrinsics.transform_point(&p_cam);
    Ok(ego_pose.transform_point(&p_ego))
}

/// World-frame viewing ray through pixel (u, v).
pub fn camera_ray(cam: &CameraModel, u: f64, v: f64, ego_pose: &Pose) -> Ray {
    let world_from_cam = ego_pose.compose(&cam.extrinsics);
    let d_cam = Vector3::new(
        (u - cam.intrinsics.cx) / cam.intrinsics.fx,
        (v - cam.intrinsics.cy) / cam.intrinsics.fy,
        1.0,
    );
    let direction = world_from_cam.transform_dir(&d_cam).normalize();
    Ray {
        origin: *world_from_cam.translation(),
        direction,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if n < 1e-12 {
            return Err(Error::invalid("ray direction must be nonzero"));
        }
        Ok(Ray {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Intersection of a ray with an oriented box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbHit {
    /// Distance along the (unit) ray direction.
    pub t: f64,
    /// Box axis (0, 1, 2) of the face that was hit.
    pub axis: usize,
    /// +1 if the face on the positive side of the axis, -1 otherwise.
    pub sign: f64,
    /// True when the ray origin is inside the box (t is then the exit).
    pub inside: bool,
}

/// Slab-method ray vs oriented-box test. Returns the smallest non-negative
/// hit distance, or the exit distance when the origin is inside the box.
pub fn ray_obb_intersect(
    ray: &Ray,
    center: &Vector3<f64>,
    half_extents: &Vector3<f64>,
    rotation: &Matrix3<f64>,
) -> Option<ObbHit> {
    // Work in the box frame: o + t d with the box axis-aligned at the origin.
    let rot_t = rotation.transpose();
    let o = rot_t * (ray.origin - center);
    let d = rot_t * ray.direction;

    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = 0usize;
    let mut enter_sign = 1.0f64;
    let mut exit_axis = 0usize;
    let mut exit_sign = 1.0f64;

    for axis in 0..3 {
        let h = half_extents[axis];
        if d[axis].abs() < 1e-12 {
            if o[axis].abs() > h {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let mut t0 = (-h - o[axis]) * inv;
        let mut t1 = (h - o[axis]) * inv;
        // The entering face is on the side the ray approaches from, which
        // also holds when t0/t1 swap (that happens exactly when d < 0).
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
        Some(ObbHit {
            t: t_enter,
            axis: enter_axis,
            sign: enter_sign,
            inside: false,
        })
    } else {
        Some(ObbHit {
            t: t_exit,
            axis: exit_axis,
            sign: exit_sign,
            inside: true,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigCalibration {
    pub schema_version: u32,
    pub cameras: Vec<CameraCalib>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraCalib {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major ego-from-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

pub const RIG_SCHEMA_VERSION: u32 = 1;

pub fn rig_to_calibration(rig: &[CameraModel]) -> RigCalibration {
    RigCalibration {
        schema_version: RIG_SCHEMA_VERSION,
        cameras: rig
            .iter()
            .map(|cam| {
                let repr = PoseRepr::from(cam.extrinsics.clone());
                CameraCalib {
                    name: cam.name.clone(),
                    width: cam.intrinsics.width,
                    height: cam.intrinsics.height,
                    fx: cam.intrinsics.fx,
                    fy: cam.intrinsics.fy,
                    cx: cam.intrinsics.cx,
                    cy: cam.intrinsics.cy,
                    rotation: repr.rotation,
                    translation: repr.translation,
                }
            })
            .collect(),
    }
}

pub fn rig_from_calibration(calib: &RigCalibration) -> Result<Vec<CameraModel>> {
    if calib.schema_version != RIG_SCHEMA_VERSION {
        return Err(Error::invalid(format!(
            "unsupported rig schema version {}, expected {RIG_SCHEMA_VERSION}",
            calib.schema_version
        )));
    }
    let mut names = std::collections::BTreeSet::new();
    calib
        .cameras
        .iter()
        .map(|c| {
            if !names.insert(c.name.clone()) {
                return Err(Error::invalid(format!("duplicate camera name `{}`", c.name)));
            }
            let intrinsics = CameraIntrinsics {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
            };
            intrinsics.validate()?;
            let extrinsics = Pose::try_from(PoseRepr {
                rotation: c.rotation,
                translation: c.translation,
            })?;
            Ok(CameraModel {
                name: c.name.clone(),
                intrinsics,
                extrinsics,
            })
        })
        .collect()
}

pub fn save_rig(rig: &[CameraModel], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&rig_to_calibration(rig))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_rig(path: &Path) -> Result<Vec<CameraModel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let calib: RigCalibration = serde_json::from_str(&text)?;
    rig_from_calibration(&calib)
}
