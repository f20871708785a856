//! End-to-end acceptance checks, run sequentially so the timed criteria
//! are not skewed by each other. Each criterion prints one PASS/FAIL line;
//! the binary exits nonzero when any criterion fails.

use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bevlab::bev::lift::lift_camera_features;
use bevlab::bev::{voxelize_points, BevFeatureMap, BevGridSpec, BevMask, ModalitySet};
use bevlab::eval::matrix::{run_matrix, ExperimentConfig, ExperimentMatrix};
use bevlab::eval::{degradation_percent, iou, report_one_decimal};
use bevlab::geom::{
    project_point, ray_obb_intersect, unproject_pixel, CameraIntrinsics, CameraModel, Pose, Ray,
};
use bevlab::img::Image;
use bevlab::model::loss::bce_with_logits_raw;
use bevlab::model::train::backward;
use bevlab::model::SegHeadParams;
use bevlab::occlusion::blur::{gaussian_blur, GaussianKernel};
use bevlab::occlusion::{apply_occlusion, OcclusionMask, OcclusionMode, Opacity};
use bevlab::ops::{cmd_matrix, sha256_file, OutOpts};
use bevlab::points::{PointCloud, RangePoint};

fn main() {
    // Failures are reported through our own PASS/FAIL lines; the default
    // hook would interleave its own traceback with them.
    std::panic::set_hook(Box::new(|_| {}));

    type Criterion = fn() -> String;
    let criteria: [(u32, Criterion); 10] = [
        (1, degradation_row_reproduces_reference),
        (2, loss_reproduces_hand_values_and_stays_finite),
        (3, analytic_gradients_match_central_differences),
        (4, lift_identity_frustum_average_and_linearity),
        (5, voxelization_matches_brute_force_binning),
        (6, separable_blur_matches_direct_convolution),
        (7, projection_round_trips_and_ray_box_oracle),
        (8, default_matrix_reproduces_orderings),
        (9, iou_matches_brute_force_counting),
        (10, matrix_command_is_byte_deterministic),
    ];

    let mut passed = 0;
    for (n, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(detail) => {
                passed += 1;
                println!("criterion {n}: PASS - {detail}");
            }
            Err(payload) => println!("criterion {n}: FAIL - {}", panic_text(&payload)),
        }
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    if passed < criteria.len() {
        std::process::exit(1);
    }
}

fn panic_text(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic without message".to_string()
    }
}

/// Criterion 1: the degradation formula turns the reference clean/occluded
/// IoU pairs into the reference degradation row, truncated to one decimal.
fn degradation_row_reproduces_reference() -> String {
    let pairs = [(47.4, 34.3), (55.7, 43.1), (60.8, 50.3), (64.5, 54.5)];
    let expected = [27.6, 22.6, 17.2, 15.5];
    for ((clean, occluded), want) in pairs.into_iter().zip(expected) {
        let got = report_one_decimal(degradation_percent(clean, occluded).unwrap());
        assert!(
            (got - want).abs() <= 0.05,
            "degradation({clean}, {occluded}) = {got}, want {want}"
        );
    }
    "degradation row (27.6, 22.6, 17.2, 15.5) within 0.05".to_string()
}

/// Criterion 2: hand-computed loss values and numeric stability of the
/// log-sum-exp form across the full logit range.
fn loss_reproduces_hand_values_and_stays_finite() -> String {
    let ln2 = bce_with_logits_raw(&[0.0], &[1.0], 1.0).unwrap().loss;
    assert!(
        (ln2 - std::f64::consts::LN_2).abs() < 1e-6,
        "loss at x=0, y=1 is {ln2}, want ln 2"
    );
    let miss = bce_with_logits_raw(&[2.0], &[0.0], 1.0).unwrap().loss;
    assert!(
        (miss - 2.126928).abs() < 1e-6,
        "loss at x=2, y=0 is {miss}, want 2.126928"
    );
    for x in [-1e4, -100.0, -1.0, 0.0, 1.0, 100.0, 1e4] {
        for y in [0.0, 1.0] {
            let out = bce_with_logits_raw(&[x], &[y], 2.0).unwrap();
            assert!(
                out.loss.is_finite() && out.grad[0].is_finite(),
                "loss or gradient not finite at x={x}, y={y}"
            );
        }
    }
    "ln 2 and 2.126928 within 1e-6, finite across |x| <= 1e4".to_string()
}

fn grid_8x8() -> BevGridSpec {
    BevGridSpec {
        x_extent: 4.0,
        y_extent: 4.0,
        z_min: 0.0,
        z_max: 1.0,
        nx: 8,
        ny: 8,
        nz: 1,
    }
}

fn random_features_and_mask(channels: usize, seed: u64) -> (BevFeatureMap, BevMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = grid_8x8();
    let mut map = BevFeatureMap::new(spec, channels, ModalitySet::empty());
    for v in map.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut mask = BevMask::new(spec.nx, spec.ny);
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            mask.set(ix, iy, rng.gen_bool(0.3));
        }
    }
    (map, mask)
}

/// Independent recomputation of the rectifier inputs: a 3x3 zero-padded
/// convolution with weights laid out `l1_w[((h*3+ky)*3+kx)*c_in + c]`.
fn rectifier_inputs(p: &SegHeadParams, bev: &BevFeatureMap) -> Vec<f64> {
    let (nx, ny) = (bev.spec.nx, bev.spec.ny);
    let mut out = vec![0.0f64; nx * ny * p.hidden];
    for iy in 0..ny {
        for ix in 0..nx {
            for h in 0..p.hidden {
                let mut z = p.l1_b[h] as f64;
                for ky in 0..3usize {
                    let sy = iy as isize + ky as isize - 1;
                    if sy < 0 || sy >= ny as isize {
                        continue;
                    }
                    for kx in 0..3usize {
                        let sx = ix as isize + kx as isize - 1;
                        if sx < 0 || sx >= nx as isize {
                            continue;
                        }
                        let cell = bev.cell(sx as usize, sy as usize);
                        let base = ((h * 3 + ky) * 3 + kx) * p.c_in;
                        for (c, &v) in cell.iter().enumerate() {
                            z += p.l1_w[base + c] as f64 * v as f64;
                        }
                    }
                }
                out[(iy * nx + ix) * p.hidden + h] = z;
            }
        }
    }
    out
}

/// Criterion 3: analytic gradients against central finite differences on
/// 20 random 8x8 fixtures. Fixtures keep every rectifier input away from
/// zero, where the loss is not differentiable; the differences use the
/// realized f32 step so parameter representation error cancels.
fn analytic_gradients_match_central_differences() -> String {
    let start = Instant::now();
    let (channels, hidden) = (3, 4);
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let (map, mask, params) = 'fixture: {
            for attempt in 0..1000u64 {
                let (map, mask) = random_features_and_mask(channels, 900 * trial + attempt);
                let mut p = SegHeadParams::he_init(channels, hidden, 5100 * trial + attempt);
                let mut rng = ChaCha8Rng::seed_from_u64(77 * trial + attempt);
                for b in p.l1_b.iter_mut() {
                    *b = rng.gen_range(-0.3..0.3);
                }
                p.l2_b = rng.gen_range(-0.3..0.3);
                if rectifier_inputs(&p, &map).iter().all(|&z| z.abs() > 5e-3) {
                    break 'fixture (map, mask, p);
                }
            }
            panic!("no kink-free fixture found for trial {trial}")
        };
        let pos_weight = 1.0 + (trial % 4) as f64;
        let (_, grads) = backward(&params, &map, &mask, pos_weight).unwrap();
        let analytic = grads.to_flat();

        let flat = params.to_flat();
        let h = 1e-3f32;
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[j] = flat[j] + h;
            minus[j] = flat[j] - h;
            let dp = plus[j] as f64 - minus[j] as f64;
            let loss_at = |w: &[f32]| {
                let p = SegHeadParams::from_flat(channels, hidden, w).unwrap();
                backward(&p, &map, &mask, pos_weight).unwrap().0
            };
            let fd = (loss_at(&plus) - loss_at(&minus)) / dp;
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(
                rel < 1e-4,
                "trial {trial} param {j}: analytic {a} vs fd {fd}, rel {rel}"
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "gradient check took {secs:.1} s, budget 10 s");
    format!("20 trials, worst relative error {worst:.2e} ({secs:.1} s)")
}

fn lift_camera(name: &str, y_offset: f64) -> CameraModel {
    // Forward camera: camera +z is ego +x, +x is ego -y, +y is ego -z.
    let rot = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    CameraModel {
        name: name.into(),
        intrinsics: CameraIntrinsics::from_hfov(64, 48, 1.2),
        extrinsics: Pose::new(rot, Vector3::new(0.0, y_offset, 1.5)).unwrap(),
    }
}

fn lift_spec() -> BevGridSpec {
    BevGridSpec {
        x_extent: 8.0,
        y_extent: 8.0,
        z_min: 0.0,
        z_max: 2.0,
        nx: 16,
        ny: 16,
        nz: 2,
    }
}

fn random_image(width: usize, height: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(width, height, channels);
    for v in img.data_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    img
}

/// Criterion 4: lift returns the exact pixel when a voxel projects onto
/// integer coordinates, leaves voxels outside every frustum at zero,
/// averages overlapping cameras, and is linear in the feature images.
fn lift_identity_frustum_average_and_linearity() -> String {
    let start = Instant::now();
    let spec = lift_spec();

    // Integer-pixel identity: shift the principal point so one voxel
    // center lands exactly on a pixel, then the bilinear weights collapse.
    let mut cam = lift_camera("f", 0.0);
    let (vx, vy, vz) = (12usize, 8usize, 0usize);
    let (x, y) = spec.cell_center(vx, vy);
    let p = Vector3::new(x, y, spec.voxel_center_z(vz));
    let ego = Pose::identity();
    let pix = project_point(&cam, &p, &ego).expect("fixture voxel must be in view");
    let (tu, tv) = (pix.u.round(), pix.v.round());
    cam.intrinsics.cx += tu - pix.u;
    cam.intrinsics.cy += tv - pix.v;
    let pix = project_point(&cam, &p, &ego).expect("shifted voxel still in view");
    assert!((pix.u - tu).abs() < 1e-9 && (pix.v - tv).abs() < 1e-9);

    let img = random_image(64, 48, 2, 40);
    let grid = lift_camera_features(&[img.clone()], &[cam.clone()], &spec).unwrap();
    for c in 0..2 {
        let want = img.get(tu as usize, tv as usize, c);
        let got = grid.get(vx, vy, vz, c);
        assert!(
            (got - want).abs() < 1e-6,
            "channel {c}: lifted {got} vs pixel {want}"
        );
    }

    // Zero outside every frustum, hidden and visible voxels both present.
    let (mut hidden, mut visible) = (0usize, 0usize);
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            for iz in 0..spec.nz {
                let (x, y) = spec.cell_center(ix, iy);
                let p = Vector3::new(x, y, spec.voxel_center_z(iz));
                if project_point(&cam, &p, &ego).is_none() {
                    hidden += 1;
                    for c in 0..2 {
                        assert_eq!(grid.get(ix, iy, iz, c), 0.0, "voxel ({ix},{iy},{iz})");
                    }
                } else {
                    visible += 1;
                }
            }
        }
    }
    assert!(hidden > 0 && visible > 0, "fixture must split the grid");

    // Midpoint average where two constant-image cameras overlap.
    let rig = vec![lift_camera("a", 0.6), lift_camera("b", -0.6)];
    let mut img_a = Image::new(64, 48, 1);
    img_a.data_mut().fill(0.2);
    let mut img_b = Image::new(64, 48, 1);
    img_b.data_mut().fill(0.8);
    let grid = lift_camera_features(&[img_a, img_b], &rig, &spec).unwrap();
    let mut overlapping = 0usize;
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            for iz in 0..spec.nz {
                let (x, y) = spec.cell_center(ix, iy);
                let p = Vector3::new(x, y, spec.voxel_center_z(iz));
                let in_a = project_point(&rig[0], &p, &ego).is_some();
                let in_b = project_point(&rig[1], &p, &ego).is_some();
                if in_a && in_b {
                    overlapping += 1;
                    let v = grid.get(ix, iy, iz, 0) as f64;
                    assert!((v - 0.5).abs() < 1e-6, "overlap voxel holds {v}, want 0.5");
                }
            }
        }
    }
    assert!(overlapping > 0, "cameras must overlap somewhere");

    // Linearity over random feature pairs: lift(a*A + b*B) equals the
    // same combination of the individual lifts.
    let cam = lift_camera("f", 0.0);
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4200 + trial);
        let img_a = random_image(64, 48, 1, 8800 + trial);
        let img_b = random_image(64, 48, 1, 9900 + trial);
        let (a, b) = (rng.gen_range(-1.5..1.5f64), rng.gen_range(-1.5..1.5f64));
        let mut combined = Image::new(64, 48, 1);
        for (o, (&va, &vb)) in combined
            .data_mut()
            .iter_mut()
            .zip(img_a.data().iter().zip(img_b.data()))
        {
            *o = (a * va as f64 + b * vb as f64) as f32;
        }
        let lift_a = lift_camera_features(&[img_a], &[cam.clone()], &spec).unwrap();
        let lift_b = lift_camera_features(&[img_b], &[cam.clone()], &spec).unwrap();
        let lift_c = lift_camera_features(&[combined], &[cam.clone()], &spec).unwrap();
        for ((&la, &lb), &lc) in lift_a
            .data()
            .iter()
            .zip(lift_b.data())
            .zip(lift_c.data())
        {
            let want = a * la as f64 + b * lb as f64;
            let err = (lc as f64 - want).abs();
            worst = worst.max(err);
            assert!(err < 1e-5, "linearity violated: {lc} vs {want}");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "lift checks took {secs:.1} s, budget 30 s");
    format!("identity, frustum, average exact; linearity worst {worst:.2e} ({secs:.1} s)")
}

/// Criterion 5: voxel occupancy equals a brute-force binning oracle, and
/// duplicated points cannot push a voxel past 1.
fn voxelization_matches_brute_force_binning() -> String {
    let start = Instant::now();
    let spec = BevGridSpec {
        x_extent: 6.0,
        y_extent: 5.0,
        z_min: -1.0,
        z_max: 2.0,
        nx: 12,
        ny: 10,
        nz: 3,
    };
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(31_000 + trial);
        let n = rng.gen_range(0..300usize);
        let mut cloud = PointCloud::default();
        for _ in 0..n {
            // Sampling wider than the grid exercises the out-of-range drop.
            cloud.points.push(RangePoint {
                x: rng.gen_range(-9.0..9.0),
                y: rng.gen_range(-8.0..8.0),
                z: rng.gen_range(-2.5..3.5),
                radial_velocity: rng.gen_range(-20.0..20.0),
            });
        }
        let grid = voxelize_points(&cloud, &spec).unwrap();

        let mut oracle = vec![0u8; spec.nx * spec.ny * spec.nz];
        for p in &cloud.points {
            let fx = (p.x + spec.x_extent) / spec.cell_size();
            let fy = (p.y + spec.y_extent) / spec.cell_size();
            let fz = (p.z - spec.z_min) / spec.z_cell_size();
            if fx < 0.0 || fy < 0.0 || fz < 0.0 {
                continue;
            }
            let (ix, iy, iz) = (fx.floor() as usize, fy.floor() as usize, fz.floor() as usize);
            if ix < spec.nx && iy < spec.ny && iz < spec.nz {
                oracle[(iy * spec.nx + ix) * spec.nz + iz] = 1;
            }
        }
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                for iz in 0..spec.nz {
                    let want = oracle[(iy * spec.nx + ix) * spec.nz + iz] as f32;
                    let got = grid.get(ix, iy, iz, 0);
                    assert_eq!(got, want, "trial {trial} voxel ({ix},{iy},{iz})");
                }
            }
        }

        // Triplicating every point must not change any voxel.
        let mut tripled = PointCloud::default();
        for p in &cloud.points {
            for _ in 0..3 {
                tripled.points.push(*p);
            }
        }
        let grid3 = voxelize_points(&tripled, &spec).unwrap();
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                for iz in 0..spec.nz {
                    let v = grid3.get(ix, iy, iz, 0);
                    assert!(v == 0.0 || v == 1.0, "occupancy left binary range: {v}");
                    assert_eq!(v, grid.get(ix, iy, iz, 0), "duplicates changed a voxel");
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "voxel checks took {secs:.1} s, budget 30 s");
    format!("1000 clouds exact, duplicates stay binary ({secs:.1} s)")
}

/// Criterion 6: the separable blur equals direct 2D convolution, kernels
/// are normalized, an empty mask leaves pixels bit-identical, and the
/// largest kernel stays under its time budget.
fn separable_blur_matches_direct_convolution() -> String {
    for size in [3usize, 7, 31, 251] {
        let k = GaussianKernel::with_default_sigma(size).unwrap();
        let sum: f64 = k.weights().iter().map(|&w| w as f64).sum();
        assert!(
            (sum - 1.0).abs() < 1e-6,
            "kernel {size} weights sum to {sum}"
        );
    }

    let mut worst = 0.0f64;
    for size in [3usize, 7, 31] {
        let kernel = GaussianKernel::with_default_sigma(size).unwrap();
        let img = random_image(40, 28, 3, 600 + size as u64);
        let blurred = gaussian_blur(&img, &kernel);
        let r = kernel.size() as i64 / 2;
        let w = kernel.weights();
        for y in 0..img.height() {
            for x in 0..img.width() {
                for c in 0..img.channels() {
                    let mut acc = 0.0f64;
                    for (t, &wy) in w.iter().enumerate() {
                        let sy = (y as i64 + t as i64 - r).clamp(0, img.height() as i64 - 1);
                        for (s, &wx) in w.iter().enumerate() {
                            let sx = (x as i64 + s as i64 - r).clamp(0, img.width() as i64 - 1);
                            acc += wy as f64
                                * wx as f64
                                * img.get(sx as usize, sy as usize, c) as f64;
                        }
                    }
                    let err = (blurred.get(x, y, c) as f64 - acc).abs();
                    worst = worst.max(err);
                    assert!(err < 1e-5, "kernel {size} pixel ({x},{y},{c}): err {err}");
                }
            }
        }
    }

    let img = random_image(64, 40, 3, 61);
    let empty = OcclusionMask::empty(64, 40);
    let kernel = GaussianKernel::with_default_sigma(7).unwrap();
    for opacity in [Opacity::Blur, Opacity::Opaque] {
        let out = apply_occlusion(&img, &empty, opacity, &kernel).unwrap();
        let identical = out
            .data()
            .iter()
            .zip(img.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(identical, "empty mask changed pixels under {opacity:?}");
    }

    let big = random_image(800, 448, 3, 62);
    let kernel = GaussianKernel::with_default_sigma(251).unwrap();
    let start = Instant::now();
    let blurred = gaussian_blur(&big, &kernel);
    let secs = start.elapsed().as_secs_f64();
    assert!(blurred.get(400, 224, 0).is_finite());
    assert!(secs < 1.0, "251-tap blur of 800x448 took {secs:.2} s, budget 1 s");
    format!("direct-convolution worst error {worst:.2e}, 251-tap blur {secs:.2} s")
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let rot = Rotation3::from_euler_angles(
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-3.0..3.0),
    );
    let t = Vector3::new(
        rng.gen_range(-10.0..10.0),
        rng.gen_range(-10.0..10.0),
        rng.gen_range(-10.0..10.0),
    );
    Pose::new(rot.into_inner(), t).unwrap()
}

/// Criterion 7: projection round-trips through unprojection, and the slab
/// ray/box test agrees with an independent inside/outside bisection oracle
/// plus an on-surface check of the reported hit.
fn projection_round_trips_and_ray_box_oracle() -> String {
    let cam = lift_camera("probe", 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(7700);
    let mut round_trips = 0usize;
    let mut attempts = 0usize;
    let mut worst_rt = 0.0f64;
    while round_trips < 1000 {
        attempts += 1;
        assert!(attempts < 40_000, "camera fixture rejects too many samples");
        let ego = random_pose(&mut rng);
        let p_ego = Vector3::new(
            rng.gen_range(2.0..40.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-1.0..4.0),
        );
        let p_world = ego.transform_point(&p_ego);
        let Some(pix) = project_point(&cam, &p_world, &ego) else {
            continue;
        };
        let back = unproject_pixel(&cam, pix.u, pix.v, pix.depth, &ego).unwrap();
        let err = (back - p_world).norm();
        worst_rt = worst_rt.max(err);
        assert!(err < 1e-6, "round trip error {err} at sample {round_trips}");
        round_trips += 1;
    }

    // Box-frame classification used by the oracle; pure geometry, no slabs.
    let inside = |q: &Vector3<f64>, h: &Vector3<f64>| {
        q.x.abs() <= h.x && q.y.abs() <= h.y && q.z.abs() <= h.z
    };
    let mut worst_ray = 0.0f64;
    for case in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(88_000 + case);
        let center = Vector3::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        );
        let half = Vector3::new(
            rng.gen_range(0.3..2.5),
            rng.gen_range(0.3..2.5),
            rng.gen_range(0.3..2.5),
        );
        let rot = Rotation3::from_euler_angles(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.2..1.2),
            rng.gen_range(-3.0..3.0),
        )
        .into_inner();
        let to_box = |p: &Vector3<f64>| rot.transpose() * (p - center);

        match case % 3 {
            0 => {
                // Entry from outside, aimed through a random interior point.
                let p_in = center
                    + rot
                        * Vector3::new(
                            rng.gen_range(-0.9..0.9) * half.x,
                            rng.gen_range(-0.9..0.9) * half.y,
                            rng.gen_range(-0.9..0.9) * half.z,
                        );
                let origin = loop {
                    let o = center
                        + Vector3::new(
                            rng.gen_range(-12.0..12.0),
                            rng.gen_range(-12.0..12.0),
                            rng.gen_range(-12.0..12.0),
                        );
                    if !inside(&to_box(&o), &half) && (o - p_in).norm() > 1.0 {
                        break o;
                    }
                };
                let ray = Ray::new(origin, p_in - origin).unwrap();
                let hit = ray_obb_intersect(&ray, &center, &half, &rot)
                    .expect("ray through interior point must hit");
                assert!(!hit.inside, "outside origin misreported as inside");

                // Bisect the single outside-to-inside transition.
                let (mut lo, mut hi) = (0.0f64, (p_in - origin).norm());
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if inside(&to_box(&ray.at(mid)), &half) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let err = (hit.t - hi).abs();
                worst_ray = worst_ray.max(err);
                assert!(err < 1e-6, "case {case}: entry {} vs oracle {hi}", hit.t);

                let q = to_box(&ray.at(hit.t));
                assert!(
                    (q[hit.axis].abs() - half[hit.axis]).abs() < 1e-7,
                    "case {case}: hit not on its face"
                );
                assert!(q[hit.axis] * hit.sign > 0.0, "case {case}: wrong face sign");
            }
            1 => {
                // Exit from an interior origin.
                let origin = center
                    + rot
                        * Vector3::new(
                            rng.gen_range(-0.9..0.9) * half.x,
                            rng.gen_range(-0.9..0.9) * half.y,
                            rng.gen_range(-0.9..0.9) * half.z,
                        );
                let dir = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if dir.norm() < 1e-3 {
                    continue;
                }
                let ray = Ray::new(origin, dir).unwrap();
                let hit = ray_obb_intersect(&ray, &center, &half, &rot)
                    .expect("interior origin must exit");
                assert!(hit.inside, "interior origin not flagged");

                let far = (origin - center).norm() + half.norm() + 1.0;
                assert!(!inside(&to_box(&ray.at(far)), &half));
                let (mut lo, mut hi) = (0.0f64, far);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if inside(&to_box(&ray.at(mid)), &half) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let err = (hit.t - lo).abs();
                worst_ray = worst_ray.max(err);
                assert!(err < 1e-6, "case {case}: exit {} vs oracle {lo}", hit.t);
            }
            _ => {
                // Strictly receding ray from outside the circumsphere:
                // the distance to the box center never shrinks.
                let dir_out = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if dir_out.norm() < 1e-3 {
                    continue;
                }
                let origin =
                    center + dir_out.normalize() * (half.norm() + rng.gen_range(0.5..6.0));
                let mut d = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if d.norm() < 1e-3 {
                    continue;
                }
                if d.dot(&(center - origin)) > 0.0 {
                    d = -d;
                }
                let ray = Ray::new(origin, d).unwrap();
                assert!(
                    ray_obb_intersect(&ray, &center, &half, &rot).is_none(),
                    "case {case}: receding ray reported a hit"
                );
                for k in 0..256 {
                    let t = k as f64 * (30.0 / 255.0);
                    assert!(!inside(&to_box(&ray.at(t)), &half));
                }
            }
        }
    }
    format!(
        "1000 round trips worst {worst_rt:.1e}, ray oracle worst {worst_ray:.1e}"
    )
}

/// Criterion 8: the default experiment matrix reproduces the reference
/// orderings per seed: clean IoU rises with each added sensor, realistic
/// degradation shrinks with each added sensor, and camera-only degradation
/// orders realistic > random > overlap.
fn default_matrix_reproduces_orderings() -> String {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.seeds.len(), 3, "default config must carry three seeds");
    assert_eq!((cfg.train_scenes, cfg.val_scenes), (200, 50));

    let start = Instant::now();
    let (matrix, failed) = run_matrix(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(failed, 0, "{failed} matrix cells failed to train");

    let modality_order = ["C", "C+R", "C+L", "C+R+L"];
    let seed_iou = |matrix: &ExperimentMatrix, label: &str, occ: OcclusionMode, k: usize| {
        let set = ModalitySet::parse(label).unwrap();
        let cell = matrix
            .cell(set, occ)
            .unwrap_or_else(|| panic!("cell {label}/{occ:?} missing"));
        cell.per_seed[k]
            .iou_pct
            .unwrap_or_else(|| panic!("cell {label}/{occ:?} seed {k} has no IoU"))
    };

    let mut clean_ok = 0usize;
    let mut monotone_ok = 0usize;
    let mut camera_ok = 0usize;
    for k in 0..cfg.seeds.len() {
        let clean: Vec<f64> = modality_order
            .iter()
            .map(|m| seed_iou(&matrix, m, OcclusionMode::None, k))
            .collect();
        if clean.windows(2).all(|w| w[0] < w[1]) {
            clean_ok += 1;
        }

        let degradation: Vec<f64> = modality_order
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let occluded = seed_iou(&matrix, m, OcclusionMode::Realistic, k);
                degradation_percent(clean[i], occluded).unwrap()
            })
            .collect();
        if degradation.windows(2).all(|w| w[0] > w[1]) {
            monotone_ok += 1;
        }

        let cam_clean = clean[0];
        let deg = |occ: OcclusionMode| {
            degradation_percent(cam_clean, seed_iou(&matrix, "C", occ, k)).unwrap()
        };
        let (real, random, overlap) = (
            deg(OcclusionMode::Realistic),
            deg(OcclusionMode::Random),
            deg(OcclusionMode::Overlap),
        );
        if real > random && random > overlap {
            camera_ok += 1;
        }
    }
    assert!(clean_ok >= 2, "clean IoU ordering held in {clean_ok}/3 seeds");
    assert!(
        monotone_ok >= 2,
        "degradation decrease held in {monotone_ok}/3 seeds"
    );
    assert!(
        camera_ok >= 2,
        "camera occlusion ordering held in {camera_ok}/3 seeds"
    );
    assert!(secs < 900.0, "matrix took {secs:.0} s, budget 900 s");
    format!(
        "clean order {clean_ok}/3, degradation order {monotone_ok}/3, camera order {camera_ok}/3 ({secs:.0} s)"
    )
}

/// Criterion 9: IoU equals brute-force cell counting on random masks, and
/// the shifted-block hand example is exactly 1/3.
fn iou_matches_brute_force_counting() -> String {
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(12_000 + trial);
        let nx = rng.gen_range(1..24usize);
        let ny = rng.gen_range(1..24usize);
        let density = rng.gen_range(0.0..1.0);
        let mut pred = BevMask::new(nx, ny);
        let mut gt = BevMask::new(nx, ny);
        for iy in 0..ny {
            for ix in 0..nx {
                pred.set(ix, iy, rng.gen_bool(density));
                gt.set(ix, iy, rng.gen_bool(density));
            }
        }
        let (mut bi, mut bu) = (0usize, 0usize);
        for iy in 0..ny {
            for ix in 0..nx {
                let (p, g) = (pred.get(ix, iy), gt.get(ix, iy));
                bi += (p && g) as usize;
                bu += (p || g) as usize;
            }
        }
        let r = iou(&pred, &gt).unwrap();
        assert_eq!((r.intersection, r.union), (bi, bu), "trial {trial} counts");
        let want = if bu == 0 { 1.0 } else { bi as f64 / bu as f64 };
        assert_eq!(r.iou, want, "trial {trial} ratio");
    }

    // Two 2x2 blocks offset by one cell along x: intersection 2, union 6.
    let mut pred = BevMask::new(6, 6);
    let mut gt = BevMask::new(6, 6);
    for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
        pred.set(x, y, true);
    }
    for (x, y) in [(2, 1), (3, 1), (2, 2), (3, 2)] {
        gt.set(x, y, true);
    }
    let r = iou(&pred, &gt).unwrap();
    assert_eq!((r.intersection, r.union), (2, 6));
    assert_eq!(r.iou, 1.0 / 3.0, "shifted block IoU must be exactly 1/3");
    "1000 random masks exact, shifted block exactly 1/3".to_string()
}

fn small_matrix_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![7];
    cfg.train_scenes = 2;
    cfg.val_scenes = 1;
    cfg.scene.n_vehicles = 4;
    cfg.scene.world_extent = 14.0;
    cfg.image_scale = 0.05;
    cfg.grid = BevGridSpec {
        x_extent: 8.0,
        y_extent: 8.0,
        z_min: -0.5,
        z_max: 3.5,
        nx: 16,
        ny: 16,
        nz: 2,
    };
    cfg.occlusion.kernel_size = 7;
    cfg.train.epochs = 2;
    cfg.hidden = 4;
    cfg.modalities = vec![
        ModalitySet::parse("c").unwrap(),
        ModalitySet::parse("c+r+l").unwrap(),
    ];
    cfg.occlusions = vec![OcclusionMode::None, OcclusionMode::Realistic];
    cfg
}

/// Criterion 10: running the matrix command twice with one config yields
/// byte-identical result and feature files, compared by content hash.
fn matrix_command_is_byte_deterministic() -> String {
    let cfg = small_matrix_config();
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for run in 0..2 {
        let opts = OutOpts {
            out: Some(tmp.path().join(format!("run{run}"))),
            root: None,
            force: false,
        };
        let (dir, _) = cmd_matrix(&cfg, 1, 2, &opts).unwrap();
        dirs.push(dir);
    }

    let matrix_hashes: Vec<String> = dirs
        .iter()
        .map(|d| sha256_file(&d.join("results").join("matrix.json")).unwrap())
        .collect();
    assert_eq!(matrix_hashes[0], matrix_hashes[1], "matrix.json differs");

    let feature_files = |dir: &std::path::Path| -> Vec<(String, String)> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir.join("features")).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.push((name, sha256_file(&path).unwrap()));
        }
        out.sort();
        out
    };
    let (a, b) = (feature_files(&dirs[0]), feature_files(&dirs[1]));
    assert!(!a.is_empty(), "no feature files were written");
    assert_eq!(a, b, "feature files differ between runs");
    format!(
        "matrix.json and {} feature files hash-identical across reruns",
        a.len()
    )
}
