//! Configuration resolution: built-in defaults, overlaid by an optional JSON
//! config file, overlaid by command-line overrides. The merged value is
//! deserialized once at the end so unknown fields and type mismatches are
//! reported with their full field path, then range-checked the same way.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::matrix::ExperimentConfig;

/// Builds the effective configuration. `overrides` are (field path, value)
/// pairs from command-line flags and apply after the file.
pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let mut root = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let patch: Value = serde_json::from_str(&text).map_err(|e| Error::Config {
            path: path.display().to_string(),
            msg: format!("not valid JSON: {e}"),
        })?;
        if !patch.is_object() {
            return Err(Error::Config {
                path: path.display().to_string(),
                msg: "config file must hold a JSON object".into(),
            });
        }
        merge(&mut root, patch);
    }
    for (field, value) in overrides {
        set_path(&mut root, field, value.clone())?;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(root).map_err(|e| {
        Error::Config { path: e.path().to_string(), msg: e.inner().to_string() }
    })?;
    validate(&cfg)?;
    Ok(cfg)
}

/// Parses one `--set field.path=value` argument. The value is read as JSON
/// when it parses as such, and as a bare string otherwise, so numbers,
/// booleans, arrays, and enum names all work unquoted.
pub fn parse_override(arg: &str) -> Result<(String, Value)> {
    let (field, raw) = arg.split_once('=').ok_or_else(|| {
        Error::invalid(format!("override `{arg}` must look like field.path=value"))
    })?;
    if field.is_empty() {
        return Err(Error::invalid(format!("override `{arg}` has an empty field path")));
    }
    let value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((field.to_string(), value))
}

/// Deep merge: objects merge key by key, everything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        // Unknown key: kept so deserialization rejects it
                        // with its path instead of silently dropping it.
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Replaces the value at a dot-separated field path. Intermediate segments
/// must be existing objects; the final key may be new (deserialization then
/// reports it as unknown with its path).
fn set_path(root: &mut Value, field: &str, value: Value) -> Result<()> {
    let mut slot = root;
    let mut walked = String::new();
    let (parents, last) = {
        let mut parts: Vec<&str> = field.split('.').collect();
        let last = parts.pop().expect("split yields at least one part");
        (parts, last)
    };
    for part in parents {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(part);
        slot = match slot.get_mut(part) {
            Some(v) if v.is_object() => v,
            Some(_) => {
                return Err(Error::Config {
                    path: walked,
                    msg: "not a nested object, cannot descend into it".into(),
                })
            }
            None => {
                return Err(Error::Config { path: walked, msg: "no such field".into() })
            }
        };
    }
    slot.as_object_mut()
        .expect("walked slots are objects")
        .insert(last.to_string(), value);
    Ok(())
}

/// Range checks with full field paths. Mirrors the library validators so a
/// bad flag or config value is reported against the field that holds it.
fn validate(cfg: &ExperimentConfig) -> Result<()> {
    fn fail(path: &str, msg: impl Into<String>) -> Result<()> {
        Err(Error::Config { path: path.into(), msg: msg.into() })
    }

    if cfg.seeds.is_empty() {
        return fail("seeds", "needs at least one seed");
    }
    if cfg.train_scenes == 0 {
        return fail("train_scenes", "must be >= 1");
    }
    if cfg.val_scenes == 0 {
        return fail("val_scenes", "must be >= 1");
    }
    if cfg.hidden == 0 {
        return fail("hidden", "must be >= 1");
    }
    if !(cfg.image_scale > 0.0 && cfg.image_scale <= 2.0) {
        return fail("image_scale", format!("{} must be in (0, 2]", cfg.image_scale));
    }
    if cfg.modalities.is_empty() {
        return fail("modalities", "needs at least one modality");
    }
    if cfg.modalities.iter().any(|m| m.is_empty()) {
        return fail("modalities", "modality sets must not be empty");
    }
    if cfg.occlusions.is_empty() {
        return fail("occlusions", "needs at least one occlusion mode");
    }

    let s = &cfg.scene;
    if s.n_vehicles > 250 {
        return fail("scene.n_vehicles", "at most 250 vehicles");
    }
    if !(s.world_extent > 0.0) {
        return fail("scene.world_extent", format!("{} must be positive", s.world_extent));
    }
    if s.ego_clearance < 0.0 {
        return fail("scene.ego_clearance", "must be non-negative");
    }
    if !(s.max_speed > 2.0) {
        return fail("scene.max_speed", format!("{} must exceed 2 m/s", s.max_speed));
    }
    if !(0.0..=1.0).contains(&s.parked_fraction) {
        return fail("scene.parked_fraction", format!("{} must be in [0, 1]", s.parked_fraction));
    }

    let g = &cfg.grid;
    if g.nx == 0 || g.ny == 0 || g.nz == 0 {
        return fail("grid", "nx, ny, nz must all be >= 1");
    }
    if !(g.x_extent > 0.0) {
        return fail("grid.x_extent", format!("{} must be positive", g.x_extent));
    }
    if !(g.y_extent > 0.0) {
        return fail("grid.y_extent", format!("{} must be positive", g.y_extent));
    }
    if !(g.z_max > g.z_min) {
        return fail("grid.z_max", format!("{} must exceed z_min {}", g.z_max, g.z_min));
    }
    if let Err(e) = g.validate() {
        return fail("grid", e.to_string());
    }

    if cfg.lidar.n_azimuth == 0 {
        return fail("lidar.n_azimuth", "must be >= 1");
    }
    if cfg.lidar.elevations_deg.is_empty() {
        return fail("lidar.elevations_deg", "needs at least one beam");
    }
    if !(cfg.lidar.max_range > 0.0) {
        return fail("lidar.max_range", format!("{} must be positive", cfg.lidar.max_range));
    }
    if cfg.radar.noise_sigma < 0.0 {
        return fail("radar.noise_sigma", "must be non-negative");
    }
    if cfg.radar.velocity_sigma < 0.0 {
        return fail("radar.velocity_sigma", "must be non-negative");
    }
    if !(cfg.radar.clutter_range > 0.0) {
        return fail(
            "radar.clutter_range",
            format!("{} must be positive", cfg.radar.clutter_range),
        );
    }

    let o = &cfg.occlusion;
    if o.kernel_size == 0 || o.kernel_size % 2 == 0 {
        return fail("occlusion.kernel_size", format!("{} must be odd", o.kernel_size));
    }
    if o.sigma.is_none() && o.kernel_size < 3 {
        return fail("occlusion.kernel_size", "derived sigma needs size >= 3");
    }
    if let Some(sig) = o.sigma {
        if !(sig > 0.0) {
            return fail("occlusion.sigma", format!("{sig} must be positive"));
        }
    }
    if !(o.coverage > 0.0 && o.coverage < 1.0) {
        return fail("occlusion.coverage", format!("{} must be in (0, 1)", o.coverage));
    }
    if o.n_blobs == 0 {
        return fail("occlusion.n_blobs", "must be >= 1");
    }
    if !(o.box_fraction > 0.0 && o.box_fraction <= 1.0) {
        return fail("occlusion.box_fraction", format!("{} must be in (0, 1]", o.box_fraction));
    }
    if !(o.overlap_reference_range > 0.0) {
        return fail(
            "occlusion.overlap_reference_range",
            format!("{} must be positive", o.overlap_reference_range),
        );
    }

    let t = &cfg.train;
    if !(t.lr.is_finite() && t.lr >= 0.0) {
        return fail("train.lr", format!("{} must be finite and >= 0", t.lr));
    }
    if t.epochs == 0 {
        return fail("train.epochs", "must be >= 1");
    }
    if t.batch_size == 0 {
        return fail("train.batch_size", "must be >= 1");
    }
    if !(0.0..1.0).contains(&t.beta1) {
        return fail("train.beta1", format!("{} must be in [0, 1)", t.beta1));
    }
    if !(0.0..1.0).contains(&t.beta2) {
        return fail("train.beta2", format!("{} must be in [0, 1)", t.beta2));
    }
    if !(t.eps.is_finite() && t.eps > 0.0) {
        return fail("train.eps", format!("{} must be > 0", t.eps));
    }
    if !(t.weight_decay.is_finite() && t.weight_decay >= 0.0) {
        return fail("train.weight_decay", format!("{} must be >= 0", t.weight_decay));
    }
    if let Some(w) = t.pos_weight {
        if !(w.is_finite() && w > 0.0) {
            return fail("train.pos_weight", format!("{w} must be > 0"));
        }
    }
    // Backstop for anything the path checks above do not mirror.
    cfg.validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &tempfile::TempDir, text: &str) -> std::path::PathBuf {
        let path = dir.path().join("config.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn no_inputs_resolves_to_defaults() {
        let cfg = resolve(None, &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn file_merges_deeply_keeping_unset_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, r#"{"train": {"lr": 0.01}, "val_scenes": 7}"#);
        let cfg = resolve(Some(&path), &[]).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.val_scenes, 7);
        // Sibling fields keep their defaults.
        let d = ExperimentConfig::default();
        assert_eq!(cfg.train.epochs, d.train.epochs);
        assert_eq!(cfg.train_scenes, d.train_scenes);
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, r#"{"train": {"lr": 0.01}}"#);
        let over = vec![parse_override("train.lr=0.02").unwrap()];
        let cfg = resolve(Some(&path), &over).unwrap();
        assert_eq!(cfg.train.lr, 0.02);
    }

    #[test]
    fn unknown_field_is_rejected_with_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, r#"{"train": {"learning_rate": 0.01}}"#);
        let err = resolve(Some(&path), &[]).unwrap_err().to_string();
        assert!(err.contains("train"), "{err}");
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn unknown_nested_key_is_rejected_from_overrides() {
        for section in ["scene", "grid", "lidar", "radar", "occlusion", "train"] {
            let over = vec![parse_override(&format!("{section}.bogus=1")).unwrap()];
            let err = resolve(None, &over).unwrap_err().to_string();
            assert!(err.contains("bogus"), "{section}: {err}");
        }
    }

    #[test]
    fn type_mismatch_names_the_field_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, r#"{"grid": {"nx": "many"}}"#);
        let err = resolve(Some(&path), &[]).unwrap_err().to_string();
        assert!(err.contains("grid.nx"), "{err}");
    }

    #[test]
    fn range_violations_name_the_field_path() {
        for (arg, needle) in [
            ("train.epochs=0", "train.epochs"),
            ("occlusion.kernel_size=4", "occlusion.kernel_size"),
            ("occlusion.coverage=1.5", "occlusion.coverage"),
            ("image_scale=-1", "image_scale"),
            ("seeds=[]", "seeds"),
            ("train.lr=-0.5", "train.lr"),
        ] {
            let over = vec![parse_override(arg).unwrap()];
            let err = resolve(None, &over).unwrap_err().to_string();
            assert!(err.contains(needle), "{arg}: {err}");
        }
    }

    #[test]
    fn override_values_parse_as_json_or_bare_strings() {
        let (f, v) = parse_override("train.lr=0.5").unwrap();
        assert_eq!((f.as_str(), v), ("train.lr", serde_json::json!(0.5)));
        let (_, v) = parse_override("seeds=[1,2]").unwrap();
        assert_eq!(v, serde_json::json!([1, 2]));
        let (_, v) = parse_override("occlusion.opacity=opaque").unwrap();
        assert_eq!(v, serde_json::json!("opaque"));
        assert!(parse_override("no_equals_sign").is_err());
    }

    #[test]
    fn descending_into_a_scalar_or_missing_field_fails() {
        let over = vec![("hidden.deep".to_string(), serde_json::json!(1))];
        let err = resolve(None, &over).unwrap_err().to_string();
        assert!(err.contains("hidden"), "{err}");
        let over = vec![("nosuch.field".to_string(), serde_json::json!(1))];
        let err = resolve(None, &over).unwrap_err().to_string();
        assert!(err.contains("nosuch"), "{err}");
    }

    #[test]
    fn enum_values_resolve_from_config_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            &dir,
            r#"{"occlusions": ["none", "realistic"], "occlusion": {"opacity": "opaque"}}"#,
        );
        let cfg = resolve(Some(&path), &[]).unwrap();
        assert_eq!(cfg.occlusions.len(), 2);
        assert_eq!(cfg.occlusion.opacity, crate::occlusion::Opacity::Opaque);
    }
}
