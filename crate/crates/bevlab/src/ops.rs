//! Run directories, manifests, and the pipeline commands behind the CLI:
//! scene generation, occlusion synthesis, head training, the experiment
//! matrix, and qualitative panels. Every command persists its resolved
//! configuration and finishes by writing a manifest hashing every file in
//! the run directory; reruns under an identical configuration reproduce
//! every data artifact byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bev::io::write_bevf;
use crate::bev::{flatten_z, voxelize_points, voxelize_points_with_speed, Modality, ModalitySet};
use crate::error::{Error, Result};
use crate::eval::matrix::{
    camera_bev_map, occlude_rig_images, render_rig, rig_occlusion_masks, run_matrix_sampled,
    ExperimentConfig, ExperimentMatrix, SceneMaps, SceneSample,
};
use crate::eval::panels::render_panels;
use crate::geom::{CameraModel, Pose};
use crate::img::Image;
use crate::mix_seed;
use crate::model::train::{train, write_loss_curve_csv};
use crate::model::SegHeadParams;
use crate::occlusion::{OcclusionMask, OcclusionMode};
use crate::points::PointCloud;
use crate::scene::render::precompute_rays;
use crate::scene::sensors::{raycast_lidar, simulate_radar};
use crate::scene::{generate_scene, ground_truth_bev, scaled_rig, Scene};

/// Environment variable naming the default output root for run directories.
pub const OUT_ENV: &str = "BEVLAB_OUT";

/// File name of the run manifest inside a run directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// File name of the persisted resolved configuration.
pub const CONFIG_FILE: &str = "config.json";

/// Seed-derivation tags for command-level streams.
mod streams {
    pub const GEN_SCENE: u64 = 31;
    pub const TRAIN_HEAD: u64 = 32;
    pub const TRAIN_SHUFFLE: u64 = 33;
}

/// Output placement shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct OutOpts {
    /// Explicit run directory; bypasses the root and auto-naming scheme.
    pub out: Option<PathBuf>,
    /// Root holding auto-named run directories; falls back to the
    /// `BEVLAB_OUT` environment variable, then `runs`.
    pub root: Option<PathBuf>,
    /// Replace an existing run directory instead of refusing to touch it.
    pub force: bool,
}

impl OutOpts {
    fn run_dir(&self, command: &str, config_hash: &str) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        let root = self
            .root
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{command}-{}", &config_hash[..12]))
    }
}

/// Creates a fresh run directory. An existing one is refused unless forced,
/// in which case it is replaced wholesale.
fn create_run_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        if !force {
            return Err(Error::OutputExists(path.to_path_buf()));
        }
        std::fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(cfg)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads the resolved configuration persisted in a run directory.
pub fn load_run_config(dir: &Path) -> Result<ExperimentConfig> {
    let path = dir.join(CONFIG_FILE);
    if !path.is_file() {
        return Err(Error::MissingInput { what: "run configuration", path });
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex::encode(h.finalize()))
}

fn now_epoch_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Civil date from days since 1970-01-01, proleptic Gregorian.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719468;
    let era = z.div_euclid(146097);
    let doe = z.rem_euclid(146097);
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + i64::from(m <= 2);
    (y, m, d)
}

/// RFC 3339 UTC rendering of an epoch timestamp.
pub fn utc_string(epoch_secs: u64) -> String {
    let days = (epoch_secs / 86_400) as i64;
    let rem = epoch_secs % 86_400;
    let (y, m, d) = civil_from_days(days);
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        (rem / 60) % 60,
        rem % 60
    )
}

/// Completion record of one command run. The file inventory covers every
/// file in the run directory except the manifest itself; the timestamp is
/// the only field allowed to differ between identical reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub timestamp_epoch_secs: u64,
    pub timestamp_utc: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Crate version and on-disk schema versions.
    pub module_versions: BTreeMap<String, String>,
    /// Relative path to SHA-256 content hash.
    pub files: BTreeMap<String, String>,
}

fn module_versions() -> BTreeMap<String, String> {
    [
        ("crate", env!("CARGO_PKG_VERSION").to_string()),
        ("feature_block", crate::bev::io::BEVF_VERSION.to_string()),
        ("matrix_schema", crate::eval::matrix::MATRIX_SCHEMA_VERSION.to_string()),
        ("model_schema", crate::model::MODEL_SCHEMA_VERSION.to_string()),
        ("rig_schema", crate::geom::RIG_SCHEMA_VERSION.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn walk_files(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            walk_files(base, &path, out)?;
        } else {
            let rel: Vec<String> = path
                .strip_prefix(base)
                .expect("walk stays under its base")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            let rel = rel.join("/");
            if rel != MANIFEST_FILE {
                out.insert(rel, sha256_file(&path)?);
            }
        }
    }
    Ok(())
}

impl RunManifest {
    /// Hashes every file currently in the run directory.
    pub fn capture(
        root: &Path,
        command: &str,
        config_hash: &str,
        seeds: &[u64],
    ) -> Result<RunManifest> {
        let mut files = BTreeMap::new();
        walk_files(root, root, &mut files)?;
        let secs = now_epoch_secs();
        Ok(RunManifest {
            run_id: root
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string()),
            command: command.to_string(),
            timestamp_epoch_secs: secs,
            timestamp_utc: utc_string(secs),
            config_hash: config_hash.to_string(),
            seeds: seeds.to_vec(),
            module_versions: module_versions(),
            files,
        })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<RunManifest> {
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::MissingInput { what: "run manifest", path });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that every listed file exists and still matches its hash.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for (rel, expect) in &self.files {
            let path = root.join(rel);
            if !path.is_file() {
                return Err(Error::MissingInput { what: "manifest-listed file", path });
            }
            let got = sha256_file(&path)?;
            if &got != expect {
                return Err(Error::Format {
                    what: "run artifact",
                    path,
                    detail: format!("hash {got} does not match manifest entry {expect}"),
                });
            }
        }
        Ok(())
    }
}

/// Captures and writes the manifest; the final step of every command.
fn finish_run(root: &Path, command: &str, config_hash: &str, seeds: &[u64]) -> Result<()> {
    RunManifest::capture(root, command, config_hash, seeds)?.save(root)
}

fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Generates scenes, renders all cameras, and simulates both point sensors
/// into a new run directory.
pub fn cmd_gen(
    cfg: &ExperimentConfig,
    scenes: usize,
    seed: u64,
    opts: &OutOpts,
) -> Result<PathBuf> {
    cfg.validate()?;
    let hash = cfg.content_hash();
    let root = opts.run_dir("gen", &hash);
    create_run_dir(&root, opts.force)?;
    write_config(&root, cfg)?;

    let rig = scaled_rig(cfg.image_scale);
    let ego = Pose::identity();
    let rays: Vec<_> = rig.iter().map(|cam| precompute_rays(cam, &ego)).collect();
    let scenes_dir = root.join("scenes");
    std::fs::create_dir_all(&scenes_dir).map_err(|e| Error::io(&scenes_dir, e))?;

    for i in 0..scenes {
        let scene = generate_scene(mix_seed(&[seed, streams::GEN_SCENE, i as u64]), &cfg.scene)?;
        let dir = scenes_dir.join(scene_dir_name(i));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        scene.save_json(&dir.join("scene.json"))?;
        let images = render_rig(&scene, &rig, &rays)?;
        for (cam, img) in rig.iter().zip(&images) {
            img.write_ppm(&dir.join(format!("{}.ppm", cam.name)))?;
        }
        raycast_lidar(&scene, &cfg.lidar).write_csv(&dir.join("lidar.csv"))?;
        simulate_radar(&scene, &cfg.radar).write_csv(&dir.join("radar.csv"))?;
        log::info!("gen: wrote {}", dir.display());
    }

    finish_run(&root, "gen", &hash, &[seed])?;
    Ok(root)
}

/// Scene directories of a run, sorted; errors name the expected path.
fn list_scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let scenes_dir = root.join("scenes");
    if !scenes_dir.is_dir() {
        return Err(Error::MissingInput { what: "generated scenes", path: scenes_dir });
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&scenes_dir)
        .map_err(|e| Error::io(&scenes_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .map(|n| n.to_string_lossy().starts_with("scene_"))
                    .unwrap_or(false)
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn read_scene_images(dir: &Path, rig: &[CameraModel]) -> Result<Vec<Image>> {
    rig.iter()
        .map(|cam| {
            let path = dir.join(format!("{}.ppm", cam.name));
            if !path.is_file() {
                return Err(Error::MissingInput { what: "rendered camera image", path });
            }
            Image::read_ppm(&path)
        })
        .collect()
}

/// Per-camera masks from an external directory, resized to each camera with
/// a warning when dimensions differ.
fn external_masks(mask_dir: &Path, rig: &[CameraModel]) -> Result<Vec<OcclusionMask>> {
    rig.iter()
        .map(|cam| {
            let path = mask_dir.join(format!("{}.pgm", cam.name));
            if !path.is_file() {
                return Err(Error::MissingInput { what: "external occlusion mask", path });
            }
            let mask = OcclusionMask::load_pgm(&path)?;
            let (w, h) = (cam.intrinsics.width as usize, cam.intrinsics.height as usize);
            if (mask.width(), mask.height()) != (w, h) {
                log::warn!(
                    "mask {} is {}x{}, resizing to camera {} at {w}x{h}",
                    path.display(),
                    mask.width(),
                    mask.height(),
                    cam.name
                );
                return Ok(mask.resized_nearest(w, h));
            }
            Ok(mask)
        })
        .collect()
}

/// Applies one occlusion mode to every generated scene of an existing run.
/// Masks and occluded frames land under occluded/, mirroring the scene
/// directories; the originals under scenes/ are never touched.
pub fn cmd_occlude(
    root: &Path,
    cfg: &ExperimentConfig,
    mode: OcclusionMode,
    mask_dir: Option<&Path>,
    force: bool,
) -> Result<PathBuf> {
    cfg.validate()?;
    let scene_dirs = list_scene_dirs(root)?;
    let out_dir = root.join("occluded");
    if out_dir.exists() && !force {
        return Err(Error::OutputExists(out_dir));
    }
    if out_dir.exists() {
        std::fs::remove_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    }

    let rig = scaled_rig(cfg.image_scale);
    let kernel = cfg.occlusion.kernel()?;
    let shared_masks = mask_dir.map(|d| external_masks(d, &rig)).transpose()?;

    for dir in &scene_dirs {
        let scene = Scene::load_json(&dir.join("scene.json"))?;
        let images = read_scene_images(dir, &rig)?;
        let masks = match &shared_masks {
            Some(m) => m.clone(),
            None => rig_occlusion_masks(mode, scene.seed, &rig, &cfg.occlusion)?,
        };
        let occluded = occlude_rig_images(&images, &masks, &cfg.occlusion, &kernel)?;

        let out = out_dir.join(dir.file_name().expect("scene dirs are named"));
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        for ((cam, mask), img) in rig.iter().zip(&masks).zip(&occluded) {
            mask.save_pgm(&out.join(format!("mask_{}.pgm", cam.name)))?;
            img.write_ppm(&out.join(format!("{}.ppm", cam.name)))?;
            log::debug!("occlude: {} masked fraction {:.3}", cam.name, mask.fraction());
        }
    }

    write_config(root, cfg)?;
    finish_run(root, "occlude", &cfg.content_hash(), &[])?;
    Ok(out_dir)
}

/// Clean BEV maps of one stored scene, rebuilt from its persisted artifacts.
fn stored_scene_maps(
    dir: &Path,
    rig: &[CameraModel],
    cfg: &ExperimentConfig,
) -> Result<(Scene, SceneMaps)> {
    let scene = Scene::load_json(&dir.join("scene.json"))?;
    let images = read_scene_images(dir, rig)?;
    let cam = camera_bev_map(&images, rig, &cfg.grid)?;
    let radar = voxelize_points_with_speed(
        &PointCloud::read_csv(&dir.join("radar.csv"))?,
        &cfg.grid,
        Modality::Radar,
    )?;
    let lidar = flatten_z(
        voxelize_points(&PointCloud::read_csv(&dir.join("lidar.csv"))?, &cfg.grid)?,
        Modality::Lidar,
    );
    let gt = ground_truth_bev(&scene, &cfg.grid)?;
    Ok((scene, SceneMaps { cam, radar, lidar, gt }))
}

/// Trains one segmentation head for a modality on the stored scenes of an
/// existing run. Persists the parameters plus sidecar under models/ and the
/// loss curve under results/.
pub fn cmd_train(
    root: &Path,
    cfg: &ExperimentConfig,
    modality: ModalitySet,
    force: bool,
) -> Result<PathBuf> {
    cfg.validate()?;
    if modality.is_empty() {
        return Err(Error::invalid("modality must name at least one sensor"));
    }
    let scene_dirs = list_scene_dirs(root)?;
    if scene_dirs.is_empty() {
        return Err(Error::MissingInput {
            what: "generated scenes",
            path: root.join("scenes").join(scene_dir_name(0)),
        });
    }
    let label = modality.label().to_lowercase();
    let params_path = root.join("models").join(format!("head_{label}.params"));
    if params_path.exists() && !force {
        return Err(Error::OutputExists(params_path));
    }
    if cfg.train.lr == 0.0 {
        log::warn!("learning rate is 0: parameters will not change");
    }

    let rig = scaled_rig(cfg.image_scale);
    let mut dataset = Vec::with_capacity(scene_dirs.len());
    for dir in &scene_dirs {
        let (_, maps) = stored_scene_maps(dir, &rig, cfg)?;
        let fused = crate::eval::matrix::fuse_for(modality, &maps)?;
        dataset.push((fused, maps.gt));
    }
    let channels = dataset[0].0.channels;
    log::info!(
        "train: {} scenes, modality {} with {channels} input channels",
        dataset.len(),
        modality.label()
    );

    let init = SegHeadParams::he_init(
        channels,
        cfg.hidden,
        mix_seed(&[cfg.train.seed, streams::TRAIN_HEAD, modality.bits() as u64]),
    );
    let mut tcfg = cfg.train.clone();
    tcfg.seed = mix_seed(&[cfg.train.seed, streams::TRAIN_SHUFFLE, modality.bits() as u64]);
    let out = train(&init, &dataset, &tcfg)?;

    let models_dir = root.join("models");
    std::fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
    let results_dir = root.join("results");
    std::fs::create_dir_all(&results_dir).map_err(|e| Error::io(&results_dir, e))?;
    out.params.save(&params_path, cfg.train.seed, Some(&tcfg))?;
    write_loss_curve_csv(&results_dir.join(format!("loss_{label}.csv")), &out.epoch_loss)?;

    write_config(root, cfg)?;
    finish_run(root, "train", &cfg.content_hash(), &[cfg.train.seed])?;
    Ok(params_path)
}

/// Writes panels and fused-feature dumps for the captured samples.
fn write_samples(root: &Path, samples: &[SceneSample], upscale: usize) -> Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    let features_dir = root.join("features");
    std::fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    let panels_dir = root.join("results").join("panels");
    std::fs::create_dir_all(&panels_dir).map_err(|e| Error::io(&panels_dir, e))?;

    for s in samples {
        let tag = format!("s{}_{}_scene{}", s.seed, s.occlusion.as_str(), s.scene_index);
        write_bevf(&features_dir.join(format!("{tag}_fused.bevf")), &s.fused_features)?;
        let cam_pred = s.cam_pred.as_ref().unwrap_or(&s.fused_pred);
        let set = render_panels(
            &s.occluded_images,
            &s.fused_features,
            &s.occlusion_bev,
            cam_pred,
            &s.fused_pred,
            &s.gt,
            upscale,
        )?;
        for (k, img) in set.images.iter().enumerate() {
            let name = format!("scene_{}_{}_{k}.ppm", s.occlusion.as_str(), s.scene_index);
            img.write_ppm(&panels_dir.join(name))?;
        }
    }
    Ok(())
}

/// Runs the full experiment matrix into a new run directory: matrix JSON and
/// CSV, qualitative panels, fused-feature dumps, and the manifest. Cell
/// failures surface as an error only after everything else is written.
pub fn cmd_matrix(
    cfg: &ExperimentConfig,
    sample_scenes: usize,
    upscale: usize,
    opts: &OutOpts,
) -> Result<(PathBuf, ExperimentMatrix)> {
    cfg.validate()?;
    let hash = cfg.content_hash();
    let root = opts.run_dir("matrix", &hash);
    create_run_dir(&root, opts.force)?;
    write_config(&root, cfg)?;

    let (matrix, failed, samples) = run_matrix_sampled(cfg, sample_scenes)?;

    let results_dir = root.join("results");
    std::fs::create_dir_all(&results_dir).map_err(|e| Error::io(&results_dir, e))?;
    matrix.save_json(&results_dir.join("matrix.json"))?;
    let csv_path = results_dir.join("matrix.csv");
    std::fs::write(&csv_path, matrix.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    write_samples(&root, &samples, upscale)?;
    finish_run(&root, "matrix", &hash, &cfg.seeds)?;

    if failed > 0 {
        return Err(Error::CellsFailed { failed, total: matrix.cells.len() });
    }
    Ok((root, matrix))
}

/// Renders qualitative panels for the first seed of the configuration.
/// A single-seed matrix run feeds the captures; its matrix is written too.
pub fn cmd_panels(
    cfg: &ExperimentConfig,
    sample_scenes: usize,
    upscale: usize,
    opts: &OutOpts,
) -> Result<PathBuf> {
    let mut pcfg = cfg.clone();
    if pcfg.seeds.len() > 1 {
        log::info!("panels: using the first seed of {}", pcfg.seeds.len());
        pcfg.seeds.truncate(1);
    }
    pcfg.validate()?;
    let hash = pcfg.content_hash();
    let root = opts.run_dir("panels", &hash);
    create_run_dir(&root, opts.force)?;
    write_config(&root, &pcfg)?;

    let (matrix, failed, samples) = run_matrix_sampled(&pcfg, sample_scenes.max(1))?;
    let results_dir = root.join("results");
    std::fs::create_dir_all(&results_dir).map_err(|e| Error::io(&results_dir, e))?;
    matrix.save_json(&results_dir.join("matrix.json"))?;
    write_samples(&root, &samples, upscale)?;
    finish_run(&root, "panels", &hash, &pcfg.seeds)?;

    if failed > 0 {
        return Err(Error::CellsFailed { failed, total: matrix.cells.len() });
    }
    Ok(root)
}
