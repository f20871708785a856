//! Experiment matrix: occlusion modes x sensor modalities.
//!
//! For each scene seed the harness generates train and validation scenes,
//! trains one segmentation head per modality on clean data, then evaluates
//! every (modality, occlusion) pair on the same validation scenes with only
//! the camera stream occluded. Results pool intersections and unions across
//! scenes and seeds; a per-seed breakdown is kept for ordering checks.
//! Everything is seeded through fixed sub-streams so a rerun reproduces the
//! matrix byte for byte.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bev::{
    flatten_z, fuse, voxelize_points, voxelize_points_with_speed, BevFeatureMap, BevGridSpec,
    BevMask, Modality, ModalitySet,
};
use crate::error::{Error, Result};
use crate::eval::{degradation_percent, report_one_decimal, IoUAccumulator};
use crate::geom::CameraModel;
use crate::img::Image;
use crate::mix_seed;
use crate::model::encoder::encode_features;
use crate::model::train::{train, TrainConfig};
use crate::model::{predict, SegHeadParams};
use crate::occlusion::blur::GaussianKernel;
use crate::occlusion::{
    apply_occlusion, overlap_region_mask, procedural_soiling_mask, project_occlusion_to_bev,
    random_box_mask, OcclusionMask, OcclusionMode, Opacity, SoilingParams,
};
use crate::scene::render::{precompute_rays, render_camera_cached, CameraRays};
use crate::scene::sensors::{raycast_lidar, simulate_radar, LidarParams, RadarParams};
use crate::scene::{generate_scene, ground_truth_bev, scaled_rig, Scene, SceneParams};

/// Seed-derivation tags for the matrix sub-streams.
mod streams {
    pub const SCENE_TRAIN: u64 = 21;
    pub const SCENE_VAL: u64 = 22;
    pub const HEAD_INIT: u64 = 23;
    pub const TRAIN_SHUFFLE: u64 = 24;
    pub const RANDOM_BOX: u64 = 25;
}

/// Schema version of matrix.json.
pub const MATRIX_SCHEMA_VERSION: u32 = 1;

/// Occlusion synthesis settings shared by the occlude command and the
/// experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionSettings {
    /// Gaussian kernel size for blur opacity; odd.
    pub kernel_size: usize,
    /// Kernel sigma; None derives (size - 1) / 6.
    pub sigma: Option<f64>,
    pub opacity: Opacity,
    /// Target masked fraction for realistic soiling.
    pub coverage: f64,
    /// Soiling blob count.
    pub n_blobs: usize,
    /// Square side as a fraction of the short image side, random mode.
    pub box_fraction: f64,
    /// Range at which image points are tested for cross-camera visibility,
    /// overlap mode, meters.
    pub overlap_reference_range: f64,
}

impl Default for OcclusionSettings {
    fn default() -> Self {
        OcclusionSettings {
            kernel_size: crate::occlusion::DEFAULT_KERNEL_SIZE,
            sigma: None,
            opacity: Opacity::Blur,
            coverage: 0.35,
            n_blobs: 12,
            box_fraction: 0.4,
            // Short reference range: the overlap test only masks regions
            // that stay redundant across cameras even for near content.
            overlap_reference_range: 3.0,
        }
    }
}

impl OcclusionSettings {
    pub fn kernel(&self) -> Result<GaussianKernel> {
        match self.sigma {
            Some(s) => GaussianKernel::new(self.kernel_size, s),
            None => GaussianKernel::with_default_sigma(self.kernel_size),
        }
    }
}

/// Full experiment configuration. Defaults are desk scale: 200 train and 50
/// validation scenes per seed at quarter image resolution, a small grid, and
/// a short schedule, sized so the complete default matrix finishes in
/// minutes on one CPU core; every field widens back to larger studies
/// through config or flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Scene-generation seeds; each trains and evaluates independently.
    pub seeds: Vec<u64>,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub scene: SceneParams,
    /// Camera resolution as a fraction of the full 800x448 rig.
    pub image_scale: f64,
    pub grid: BevGridSpec,
    pub lidar: LidarParams,
    pub radar: RadarParams,
    pub occlusion: OcclusionSettings,
    pub train: TrainConfig,
    /// Hidden width of the segmentation head.
    pub hidden: usize,
    pub modalities: Vec<ModalitySet>,
    pub occlusions: Vec<OcclusionMode>,
    /// Retrain each head on data occluded the same way it is evaluated,
    /// instead of the default train-clean / evaluate-occluded protocol.
    pub retrain_per_condition: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let cam = ModalitySet::single(Modality::Camera);
        let cr = cam.union(ModalitySet::single(Modality::Radar));
        let cl = cam.union(ModalitySet::single(Modality::Lidar));
        let crl = cr.union(cl);
        ExperimentConfig {
            seeds: vec![101, 102, 103],
            train_scenes: 200,
            val_scenes: 50,
            scene: SceneParams {
                n_vehicles: 10,
                world_extent: 18.0,
                parked_fraction: 0.2,
                ..SceneParams::default()
            },
            image_scale: 0.25,
            grid: BevGridSpec {
                x_extent: 16.0,
                y_extent: 16.0,
                z_min: -0.5,
                z_max: 3.5,
                nx: 64,
                ny: 64,
                nz: 4,
            },
            lidar: LidarParams::default(),
            // Sparse, noisy, cluttered positions but a clean velocity
            // channel: radar carries less shape information than lidar, as
            // on real rigs, while staying useful when cameras are occluded.
            radar: RadarParams {
                returns_per_vehicle: 3,
                noise_sigma: 0.7,
                velocity_sigma: 0.1,
                clutter: 30,
                clutter_range: 18.0,
                ..RadarParams::default()
            },
            // Kernel scaled to the quarter-resolution images; the standalone
            // default stays the full-size one.
            occlusion: OcclusionSettings { kernel_size: 31, ..OcclusionSettings::default() },
            train: TrainConfig {
                epochs: 10,
                lr: 5e-3,
                pos_weight: Some(2.0),
                ..TrainConfig::default()
            },
            hidden: 12,
            modalities: vec![cam, cr, cl, crl],
            occlusions: OcclusionMode::ALL.to_vec(),
            retrain_per_condition: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("experiment needs at least one seed"));
        }
        if self.modalities.is_empty() {
            return Err(Error::invalid("experiment needs at least one modality"));
        }
        if self.occlusions.is_empty() {
            return Err(Error::invalid("experiment needs at least one occlusion mode"));
        }
        for m in &self.modalities {
            if m.is_empty() {
                return Err(Error::invalid("empty modality set in experiment"));
            }
        }
        if self.train_scenes == 0 || self.val_scenes == 0 {
            return Err(Error::invalid("experiment needs train and validation scenes"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("head hidden width must be >= 1"));
        }
        if !(self.image_scale > 0.0 && self.image_scale <= 2.0) {
            return Err(Error::invalid("image_scale must be in (0, 2]"));
        }
        self.scene.validate()?;
        self.grid.validate()?;
        self.train.validate()?;
        self.occlusion.kernel()?;
        Ok(())
    }

    /// Content hash of the serialized configuration.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("config serializes").as_bytes());
        hex::encode(h.finalize())
    }
}

/// Per-seed IoU contribution of one matrix cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedIoU {
    pub seed: u64,
    pub iou_pct: Option<f64>,
    pub failed: bool,
}

/// One (modality, occlusion) cell, pooled over scenes and seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixCell {
    pub modality: ModalitySet,
    pub occlusion: OcclusionMode,
    /// Pooled IoU percent over all succeeding seeds; None if all failed.
    pub iou_pct: Option<f64>,
    pub intersection: u64,
    pub union: u64,
    pub n_scenes: usize,
    pub per_seed: Vec<SeedIoU>,
    /// True when any contributing seed failed to train.
    pub failed: bool,
}

/// Degradation row entry: clean vs realistic occlusion per modality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegradationEntry {
    pub modality: ModalitySet,
    pub clean_iou_pct: f64,
    pub realistic_iou_pct: f64,
    pub degradation_pct: f64,
}

/// The full matrix result, serialized to results/matrix.json. Contains no
/// timestamps: a rerun under the same config must be byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    pub schema_version: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub modalities: Vec<ModalitySet>,
    pub occlusions: Vec<OcclusionMode>,
    pub cells: Vec<MatrixCell>,
    pub degradation: Vec<DegradationEntry>,
}

impl ExperimentMatrix {
    pub fn cell(&self, modality: ModalitySet, occlusion: OcclusionMode) -> Option<&MatrixCell> {
        self.cells.iter().find(|c| c.modality == modality && c.occlusion == occlusion)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.failed).count()
    }

    /// CSV mirror: occlusion conditions as rows, modalities as columns, one
    /// decimal (truncated), with the degradation row last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition");
        for m in &self.modalities {
            out.push(',');
            out.push_str(&m.label());
        }
        out.push('\n');
        for &mode in &self.occlusions {
            out.push_str(mode.as_str());
            for &m in &self.modalities {
                out.push(',');
                match self.cell(m, mode).and_then(|c| c.iou_pct) {
                    Some(p) => out.push_str(&format!("{}", report_one_decimal(p))),
                    None => out.push_str("failed"),
                }
            }
            out.push('\n');
        }
        if !self.degradation.is_empty() {
            out.push_str("degradation_pct");
            for &m in &self.modalities {
                out.push(',');
                match self.degradation.iter().find(|d| d.modality == m) {
                    Some(d) => out.push_str(&format!("{}", report_one_decimal(d.degradation_pct))),
                    None => out.push_str("failed"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<ExperimentMatrix> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Clean per-scene BEV inputs: camera features, radar, LiDAR, ground truth.
pub struct SceneMaps {
    pub cam: BevFeatureMap,
    pub radar: BevFeatureMap,
    pub lidar: BevFeatureMap,
    pub gt: BevMask,
}

/// Renders every rig camera of a scene. Ray tables are precomputed per
/// camera and valid while the ego pose is unchanged.
pub fn render_rig(
    scene: &Scene,
    rig: &[CameraModel],
    rays: &[CameraRays],
) -> Result<Vec<Image>> {
    rig.iter()
        .zip(rays)
        .map(|(cam, r)| Ok(render_camera_cached(scene, cam, r)?.color))
        .collect()
}

/// Encodes and lifts camera images into the BEV camera feature map.
pub fn camera_bev_map(
    images: &[Image],
    rig: &[CameraModel],
    grid: &BevGridSpec,
) -> Result<BevFeatureMap> {
    let encoded: Vec<Image> = images.iter().map(encode_features).collect::<Result<_>>()?;
    Ok(flatten_z(crate::bev::lift::lift_camera_features(&encoded, rig, grid)?, Modality::Camera))
}

/// Builds the clean sensor maps and ground truth of one scene.
pub fn scene_maps(
    scene: &Scene,
    rig: &[CameraModel],
    rays: &[CameraRays],
    cfg: &ExperimentConfig,
) -> Result<SceneMaps> {
    let images = render_rig(scene, rig, rays)?;
    let cam = camera_bev_map(&images, rig, &cfg.grid)?;
    let radar = voxelize_points_with_speed(
        &simulate_radar(scene, &cfg.radar),
        &cfg.grid,
        Modality::Radar,
    )?;
    let lidar = flatten_z(
        voxelize_points(&raycast_lidar(scene, &cfg.lidar), &cfg.grid)?,
        Modality::Lidar,
    );
    let gt = ground_truth_bev(scene, &cfg.grid)?;
    Ok(SceneMaps { cam, radar, lidar, gt })
}

/// Occlusion masks for every rig camera under one mode. None mode yields
/// empty masks; overlap masks depend only on the rig and are cached by the
/// caller where that matters.
pub fn rig_occlusion_masks(
    mode: OcclusionMode,
    scene_seed: u64,
    rig: &[CameraModel],
    settings: &OcclusionSettings,
) -> Result<Vec<OcclusionMask>> {
    let soiling = SoilingParams { n_blobs: settings.n_blobs, coverage: settings.coverage };
    rig.iter()
        .enumerate()
        .map(|(i, cam)| {
            let (w, h) = (cam.intrinsics.width as usize, cam.intrinsics.height as usize);
            match mode {
                OcclusionMode::None => Ok(OcclusionMask::empty(w, h)),
                OcclusionMode::Random => random_box_mask(
                    w,
                    h,
                    mix_seed(&[scene_seed, streams::RANDOM_BOX, i as u64]),
                    settings.box_fraction,
                ),
                OcclusionMode::Overlap => {
                    overlap_region_mask(rig, &cam.name, settings.overlap_reference_range)
                }
                OcclusionMode::Realistic => procedural_soiling_mask(
                    w,
                    h,
                    mix_seed(&[scene_seed, crate::scene::streams::OCCLUSION, i as u64]),
                    &soiling,
                ),
            }
        })
        .collect()
}

/// Applies per-camera occlusion masks to rendered images.
pub fn occlude_rig_images(
    images: &[Image],
    masks: &[OcclusionMask],
    settings: &OcclusionSettings,
    kernel: &GaussianKernel,
) -> Result<Vec<Image>> {
    images
        .iter()
        .zip(masks)
        .map(|(img, mask)| apply_occlusion(img, mask, settings.opacity, kernel))
        .collect()
}

/// Concatenates the per-modality maps selected by `modality`.
pub fn fuse_for(
    modality: ModalitySet,
    maps: &SceneMaps,
) -> Result<BevFeatureMap> {
    let mut parts: Vec<&BevFeatureMap> = Vec::new();
    if modality.contains(Modality::Camera) {
        parts.push(&maps.cam);
    }
    if modality.contains(Modality::Radar) {
        parts.push(&maps.radar);
    }
    if modality.contains(Modality::Lidar) {
        parts.push(&maps.lidar);
    }
    fuse(&parts)
}

/// Input channel count of a fused map under the configured grid.
pub fn fused_channels(modality: ModalitySet, grid: &BevGridSpec) -> usize {
    let mut c = 0;
    if modality.contains(Modality::Camera) {
        c += grid.nz * crate::model::encoder::FEATURE_CHANNELS;
    }
    if modality.contains(Modality::Radar) {
        c += grid.nz + 1;
    }
    if modality.contains(Modality::Lidar) {
        c += grid.nz;
    }
    c
}

struct SeedOutcome {
    /// Pooled per (modality index, occlusion index).
    acc: HashMap<(usize, usize), IoUAccumulator>,
    /// Modalities whose training diverged.
    failed: Vec<bool>,
}

/// Qualitative capture of one (validation scene, occlusion mode) pair:
/// everything panel rendering and feature dumps need. Camera prediction is
/// present when the matrix includes a camera-only modality; the fused
/// prediction and features come from the widest configured modality.
pub struct SceneSample {
    pub seed: u64,
    pub occlusion: OcclusionMode,
    pub scene_index: usize,
    pub occluded_images: Vec<Image>,
    pub occlusion_bev: BevMask,
    pub cam_pred: Option<BevMask>,
    pub fused_pred: BevMask,
    pub fused_features: BevFeatureMap,
    pub gt: BevMask,
}

/// Runs the full matrix. Training failures mark the affected cells and the
/// run continues; the failed-cell count is returned alongside the matrix.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<(ExperimentMatrix, usize)> {
    let (matrix, failed, _) = run_matrix_sampled(cfg, 0)?;
    Ok((matrix, failed))
}

/// Runs the full matrix, additionally capturing qualitative samples for the
/// first `sample_scenes` validation scenes of the first seed under every
/// configured occlusion mode.
pub fn run_matrix_sampled(
    cfg: &ExperimentConfig,
    sample_scenes: usize,
) -> Result<(ExperimentMatrix, usize, Vec<SceneSample>)> {
    cfg.validate()?;
    let rig = scaled_rig(cfg.image_scale);
    let kernel = cfg.occlusion.kernel()?;
    let mut samples = Vec::new();
    let mut per_seed: Vec<SeedOutcome> = Vec::new();
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        let collect = if si == 0 { sample_scenes } else { 0 };
        per_seed.push(run_seed(cfg, seed, &rig, &kernel, collect, &mut samples)?);
    }

    let mut cells = Vec::new();
    for (mi, &modality) in cfg.modalities.iter().enumerate() {
        for (oi, &occlusion) in cfg.occlusions.iter().enumerate() {
            let mut pooled = IoUAccumulator::new();
            let mut per_seed_rows = Vec::new();
            let mut n_scenes = 0;
            let mut any_failed = false;
            for (si, outcome) in per_seed.iter().enumerate() {
                let seed = cfg.seeds[si];
                if outcome.failed[mi] {
                    any_failed = true;
                    per_seed_rows.push(SeedIoU { seed, iou_pct: None, failed: true });
                    continue;
                }
                let acc = outcome.acc[&(mi, oi)];
                pooled.intersection += acc.intersection;
                pooled.union += acc.union;
                n_scenes += cfg.val_scenes;
                per_seed_rows.push(SeedIoU {
                    seed,
                    iou_pct: Some(acc.result().percent()),
                    failed: false,
                });
            }
            let iou_pct =
                if n_scenes > 0 { Some(pooled.result().percent()) } else { None };
            cells.push(MatrixCell {
                modality,
                occlusion,
                iou_pct,
                intersection: pooled.intersection as u64,
                union: pooled.union as u64,
                n_scenes,
                per_seed: per_seed_rows,
                failed: any_failed,
            });
        }
    }

    let matrix = ExperimentMatrix {
        schema_version: MATRIX_SCHEMA_VERSION,
        config_hash: cfg.content_hash(),
        seeds: cfg.seeds.clone(),
        modalities: cfg.modalities.clone(),
        occlusions: cfg.occlusions.clone(),
        degradation: degradation_rows(cfg, &cells),
        cells,
    };
    let failed = matrix.failed_cells();
    Ok((matrix, failed, samples))
}

fn degradation_rows(cfg: &ExperimentConfig, cells: &[MatrixCell]) -> Vec<DegradationEntry> {
    if !cfg.occlusions.contains(&OcclusionMode::None)
        || !cfg.occlusions.contains(&OcclusionMode::Realistic)
    {
        return Vec::new();
    }
    let mut rows = Vec::new();
    for &m in &cfg.modalities {
        let find = |mode| {
            cells
                .iter()
                .find(|c| c.modality == m && c.occlusion == mode)
                .and_then(|c| c.iou_pct)
        };
        let (Some(clean), Some(realistic)) =
            (find(OcclusionMode::None), find(OcclusionMode::Realistic))
        else {
            continue;
        };
        let Ok(d) = degradation_percent(clean, realistic) else {
            continue;
        };
        rows.push(DegradationEntry {
            modality: m,
            clean_iou_pct: clean,
            realistic_iou_pct: realistic,
            degradation_pct: d,
        });
    }
    rows
}

fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    rig: &[CameraModel],
    kernel: &GaussianKernel,
    collect_scenes: usize,
    samples: &mut Vec<SceneSample>,
) -> Result<SeedOutcome> {
    // Sample sources: the exact camera-only modality if configured, and the
    // widest modality as the fused prediction.
    let cam_mi = cfg
        .modalities
        .iter()
        .position(|&m| m == ModalitySet::single(Modality::Camera));
    let fused_mi = (0..cfg.modalities.len())
        .max_by_key(|&mi| fused_channels(cfg.modalities[mi], &cfg.grid))
        .expect("config validated as non-empty");
    let rays: Vec<CameraRays> = {
        // All scenes share the identity ego pose, so one ray table per
        // camera serves every render.
        let ego = crate::geom::Pose::identity();
        rig.iter().map(|cam| precompute_rays(cam, &ego)).collect()
    };

    log::info!("seed {seed}: building {} training scenes", cfg.train_scenes);
    let mut train_maps = Vec::with_capacity(cfg.train_scenes);
    let mut train_scenes = Vec::with_capacity(cfg.train_scenes);
    for i in 0..cfg.train_scenes {
        let scene =
            generate_scene(mix_seed(&[seed, streams::SCENE_TRAIN, i as u64]), &cfg.scene)?;
        train_maps.push(scene_maps(&scene, rig, &rays, cfg)?);
        train_scenes.push(scene);
    }

    // Heads per (modality, training condition). The default protocol trains
    // once per modality on clean data; retrain-per-condition trains one head
    // per (modality, occlusion) pair on matching occluded data.
    let n_modes = cfg.occlusions.len();
    let mut heads: Vec<Vec<Option<SegHeadParams>>> =
        vec![vec![None; n_modes]; cfg.modalities.len()];
    let mut failed = vec![false; cfg.modalities.len()];

    let train_conditions: Vec<Option<OcclusionMode>> = if cfg.retrain_per_condition {
        cfg.occlusions.iter().map(|&m| Some(m)).collect()
    } else {
        vec![None]
    };
    for (ci, condition) in train_conditions.iter().enumerate() {
        // Camera maps under the training condition; clean protocol reuses
        // the clean maps directly.
        let cond_maps: Vec<BevFeatureMap> = match condition {
            None | Some(OcclusionMode::None) => Vec::new(),
            Some(mode) => {
                let mut maps = Vec::with_capacity(cfg.train_scenes);
                for scene in &train_scenes {
                    let images = render_rig(scene, rig, &rays)?;
                    let masks = rig_occlusion_masks(*mode, scene.seed, rig, &cfg.occlusion)?;
                    let occluded = occlude_rig_images(&images, &masks, &cfg.occlusion, kernel)?;
                    maps.push(camera_bev_map(&occluded, rig, &cfg.grid)?);
                }
                maps
            }
        };
        for (mi, &modality) in cfg.modalities.iter().enumerate() {
            if failed[mi] {
                continue;
            }
            let mut dataset: Vec<(BevFeatureMap, BevMask)> =
                Vec::with_capacity(cfg.train_scenes);
            for (i, maps) in train_maps.iter().enumerate() {
                let fused = if cond_maps.is_empty() {
                    fuse_for(modality, maps)?
                } else {
                    let swapped = SceneMaps {
                        cam: cond_maps[i].clone(),
                        radar: maps.radar.clone(),
                        lidar: maps.lidar.clone(),
                        gt: maps.gt.clone(),
                    };
                    fuse_for(modality, &swapped)?
                };
                dataset.push((fused, maps.gt.clone()));
            }
            let channels = dataset[0].0.channels;
            let init = SegHeadParams::he_init(
                channels,
                cfg.hidden,
                mix_seed(&[seed, streams::HEAD_INIT, modality.bits() as u64]),
            );
            let mut tcfg = cfg.train.clone();
            tcfg.seed = mix_seed(&[
                cfg.train.seed,
                seed,
                streams::TRAIN_SHUFFLE,
                modality.bits() as u64,
                ci as u64,
            ]);
            log::info!(
                "seed {seed}: training {} ({channels} channels, condition {:?})",
                modality.label(),
                condition
            );
            match train(&init, &dataset, &tcfg) {
                Ok(out) => {
                    let slot = if cfg.retrain_per_condition { ci } else { 0 };
                    heads[mi][slot] = Some(out.params);
                }
                Err(Error::Diverged { epoch }) => {
                    log::warn!(
                        "seed {seed}: {} diverged at epoch {epoch}",
                        modality.label()
                    );
                    failed[mi] = true;
                }
                Err(e) => return Err(e),
            }
        }
    }

    log::info!("seed {seed}: evaluating {} validation scenes", cfg.val_scenes);
    let mut acc: HashMap<(usize, usize), IoUAccumulator> = HashMap::new();
    for i in 0..cfg.val_scenes {
        let scene = generate_scene(mix_seed(&[seed, streams::SCENE_VAL, i as u64]), &cfg.scene)?;
        let images = render_rig(&scene, rig, &rays)?;
        let clean = scene_maps(&scene, rig, &rays, cfg)?;
        let collecting = i < collect_scenes;
        for (oi, &mode) in cfg.occlusions.iter().enumerate() {
            // Masks and occluded frames are only retained for samples; the
            // none mode applies no occlusion so its masks are empty.
            let (cam, kept) = if mode == OcclusionMode::None {
                let kept = if collecting {
                    let masks = rig_occlusion_masks(mode, scene.seed, rig, &cfg.occlusion)?;
                    Some((masks, images.clone()))
                } else {
                    None
                };
                (clean.cam.clone(), kept)
            } else {
                let masks = rig_occlusion_masks(mode, scene.seed, rig, &cfg.occlusion)?;
                let occluded = occlude_rig_images(&images, &masks, &cfg.occlusion, kernel)?;
                let cam = camera_bev_map(&occluded, rig, &cfg.grid)?;
                (cam, collecting.then_some((masks, occluded)))
            };
            let eval_maps = SceneMaps {
                cam,
                radar: clean.radar.clone(),
                lidar: clean.lidar.clone(),
                gt: clean.gt.clone(),
            };
            let mut cam_pred = None;
            let mut fused_capture = None;
            for (mi, &modality) in cfg.modalities.iter().enumerate() {
                if failed[mi] {
                    continue;
                }
                let slot = if cfg.retrain_per_condition { oi } else { 0 };
                let Some(params) = heads[mi][slot].as_ref() else {
                    continue;
                };
                let fused = fuse_for(modality, &eval_maps)?;
                let pred = predict(params, &fused)?;
                acc.entry((mi, oi)).or_default().add(&pred, &eval_maps.gt)?;
                if collecting {
                    if Some(mi) == cam_mi {
                        cam_pred = Some(pred.clone());
                    }
                    if mi == fused_mi {
                        fused_capture = Some((pred, fused));
                    }
                }
            }
            if let (Some((masks, occluded)), Some((fused_pred, fused_features))) =
                (kept, fused_capture)
            {
                samples.push(SceneSample {
                    seed,
                    occlusion: mode,
                    scene_index: i,
                    occluded_images: occluded,
                    occlusion_bev: project_occlusion_to_bev(&masks, rig, &cfg.grid)?,
                    cam_pred,
                    fused_pred,
                    fused_features,
                    gt: clean.gt.clone(),
                });
            }
        }
    }
    // Ensure every non-failed cell has an accumulator entry.
    for mi in 0..cfg.modalities.len() {
        if failed[mi] {
            continue;
        }
        for oi in 0..cfg.occlusions.len() {
            acc.entry((mi, oi)).or_default();
        }
    }
    Ok(SeedOutcome { acc, failed })
}
