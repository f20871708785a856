//! Binary-level checks of the command-line interface: exit codes, output
//! layout, overwrite protection, and warnings, all against the contract
//! that 0 means success, 1 a runtime failure, and 2 a usage error.

use std::path::Path;
use std::process::{Command, Output};

fn bevlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bevlab"))
}

fn run(args: &[&str]) -> Output {
    bevlab().args(args).output().expect("spawn bevlab")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small end-to-end configuration: coarse grid, tiny images, two epochs.
fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "seeds": [7],
        "train_scenes": 2,
        "val_scenes": 1,
        "image_scale": 0.05,
        "hidden": 4,
        "scene": { "n_vehicles": 4, "world_extent": 14.0 },
        "grid": {
            "x_extent": 8.0, "y_extent": 8.0,
            "z_min": -0.5, "z_max": 3.5,
            "nx": 16, "ny": 16, "nz": 2
        },
        "occlusion": { "kernel_size": 7 },
        "train": { "epochs": 2 },
        "modalities": ["C", "C+R+L"],
        "occlusions": ["none", "realistic"]
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn help_covers_every_subcommand() {
    let top = run(&["--help"]);
    assert!(top.status.success());
    let text = stdout_of(&top);
    for sub in ["gen", "occlude", "train", "matrix", "panels"] {
        assert!(text.contains(sub), "top-level help misses `{sub}`");
        let help = run(&[sub, "--help"]);
        assert!(help.status.success(), "`{sub} --help` failed");
        assert!(stdout_of(&help).contains("Usage"));
    }
}

#[test]
fn usage_errors_exit_with_code_2() {
    let unknown_flag = run(&["gen", "--bogus-flag"]);
    assert_eq!(unknown_flag.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let bad_field = run(&[
        "gen",
        "--set",
        "scene.bogus=1",
        "--scenes",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad_field.status.code(), Some(2));
    assert!(
        stderr_of(&bad_field).contains("scene.bogus"),
        "config error must name the offending field path: {}",
        stderr_of(&bad_field)
    );

    let bad_value = run(&[
        "gen",
        "--set",
        "train.lr=-1",
        "--scenes",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad_value.status.code(), Some(2));
    assert!(stderr_of(&bad_value).contains("train.lr"));
}

#[test]
fn gen_writes_scenes_and_refuses_silent_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let args = [
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--scenes",
        "2",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(first.status.success(), "gen failed: {}", stderr_of(&first));

    for scene in ["scene_0000", "scene_0001"] {
        let dir = out.join("scenes").join(scene);
        let ppms = std::fs::read_dir(&dir)
            .unwrap()
            .filter(|e| {
                e.as_ref().unwrap().path().extension().map(|x| x == "ppm") == Some(true)
            })
            .count();
        assert_eq!(ppms, 6, "{scene} should hold one image per camera");
        for file in ["scene.json", "lidar.csv", "radar.csv"] {
            assert!(dir.join(file).is_file(), "{scene}/{file} missing");
        }
    }
    assert!(out.join("config.json").is_file());
    assert!(out.join("manifest.json").is_file());

    let refused = run(&args);
    assert_eq!(refused.status.code(), Some(1));
    assert!(
        stderr_of(&refused).contains("--force"),
        "overwrite refusal should point at --force"
    );

    let forced = bevlab().args(args).arg("--force").output().unwrap();
    assert!(forced.status.success());
}

#[test]
fn gen_zero_scenes_still_writes_a_valid_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let out = tmp.path().join("empty");
    let done = run(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--scenes",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(done.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "gen");
    assert!(
        manifest["files"]
            .as_object()
            .is_some_and(|files| files.contains_key("config.json")),
        "manifest must inventory the config"
    );
    assert_eq!(std::fs::read_dir(out.join("scenes")).unwrap().count(), 0);
}

#[test]
fn output_root_env_var_places_auto_named_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let root = tmp.path().join("root");
    let done = bevlab()
        .env("BEVLAB_OUT", &root)
        .args(["gen", "--config", cfg.to_str().unwrap(), "--scenes", "0"])
        .output()
        .unwrap();
    assert!(done.status.success(), "gen failed: {}", stderr_of(&done));
    let runs: Vec<_> = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].starts_with("gen-"), "auto name was {}", runs[0]);
}

#[test]
fn occlude_missing_run_names_the_expected_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no-such-run");
    let out = run(&["occlude", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("config.json"),
        "error should name the missing file: {}",
        stderr_of(&out)
    );
}

#[test]
fn occlude_none_keeps_images_and_train_lr_zero_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let gen = run(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--scenes",
        "2",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(gen.status.success(), "gen failed: {}", stderr_of(&gen));

    let occlude = run(&[
        "occlude",
        out.to_str().unwrap(),
        "--occlusion",
        "none",
    ]);
    assert!(
        occlude.status.success(),
        "occlude failed: {}",
        stderr_of(&occlude)
    );
    let original = std::fs::read(out.join("scenes/scene_0000/cam_front.ppm")).unwrap();
    let occluded = std::fs::read(out.join("occluded/scene_0000/cam_front.ppm")).unwrap();
    assert_eq!(original, occluded, "none occlusion must copy images verbatim");

    let train = run(&[
        "train",
        out.to_str().unwrap(),
        "--modality",
        "c",
        "--lr",
        "0",
    ]);
    assert!(train.status.success(), "train failed: {}", stderr_of(&train));
    assert!(
        stderr_of(&train).contains("learning rate is 0"),
        "zero learning rate should warn: {}",
        stderr_of(&train)
    );
    assert!(out.join("models/head_c.params").is_file());
}

#[test]
fn matrix_restricted_to_one_modality_builds_a_4x1_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let out = tmp.path().join("matrix");
    let done = run(&[
        "matrix",
        "--config",
        cfg.to_str().unwrap(),
        "--modalities",
        "c",
        "--occlusions",
        "none,random,overlap,realistic",
        "--panel-scenes",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(done.status.success(), "matrix failed: {}", stderr_of(&done));
    assert!(stdout_of(&done).contains("condition,C"), "CSV missing from stdout");

    let matrix: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("results/matrix.json")).unwrap())
            .unwrap();
    assert_eq!(matrix["modalities"], serde_json::json!(["C"]));
    assert_eq!(matrix["occlusions"].as_array().unwrap().len(), 4);
    assert_eq!(matrix["cells"].as_array().unwrap().len(), 4);
}
