//! Command-line front end: scene generation, occlusion synthesis, head
//! training, the experiment matrix, and qualitative panels. Configuration
//! resolves as defaults, then an optional JSON file, then flags; every run
//! persists its resolved config and a hashing manifest.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use bevlab::bev::ModalitySet;
use bevlab::config::{parse_override, resolve};
use bevlab::error::{Error, Result};
use bevlab::eval::matrix::ExperimentConfig;
use bevlab::occlusion::OcclusionMode;
use bevlab::ops::{cmd_gen, cmd_matrix, cmd_occlude, cmd_panels, cmd_train, OutOpts};

#[derive(Parser)]
#[command(
    name = "bevlab",
    version,
    about = "Synthetic camera, radar, and lidar BEV segmentation experiments",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for in-scene parallelism; results are identical at
    /// any thread count.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// Configuration sources shared by all commands.
#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration field, repeatable: --set train.lr=0.01
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    set: Vec<String>,
}

/// Output placement shared by run-creating commands.
#[derive(Args)]
struct OutArgs {
    /// Run directory; defaults to <root>/<command>-<config hash prefix>.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Root for auto-named run directories; defaults to $BEVLAB_OUT, then
    /// ./runs.
    #[arg(long, value_name = "DIR")]
    root: Option<PathBuf>,

    /// Replace an existing run directory instead of refusing to touch it.
    #[arg(long)]
    force: bool,
}

impl OutArgs {
    fn to_opts(&self) -> OutOpts {
        OutOpts { out: self.out.clone(), root: self.root.clone(), force: self.force }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes: vehicle layouts, camera renders, lidar and radar
    /// point clouds, and a manifest.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Number of scenes to generate.
        #[arg(long, default_value_t = 4)]
        scenes: usize,
        /// Scene-generation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Apply occlusion to the camera images of a generated run; originals
    /// are never modified.
    Occlude {
        /// Run directory holding gen outputs.
        run: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Occlusion mode: none, random, overlap, or realistic.
        #[arg(long, default_value = "realistic")]
        occlusion: String,
        /// Gaussian kernel size for the blur opacity; odd.
        #[arg(long, value_name = "PIXELS")]
        kernel_size: Option<usize>,
        /// Kernel sigma; derived from the size when omitted.
        #[arg(long)]
        sigma: Option<f64>,
        /// Target masked fraction for realistic soiling.
        #[arg(long)]
        coverage: Option<f64>,
        /// Occluded-region appearance: blur or opaque.
        #[arg(long)]
        opacity: Option<String>,
        /// Directory of per-camera PGM masks used verbatim instead of
        /// synthesized ones (<camera name>.pgm).
        #[arg(long, value_name = "DIR")]
        mask_dir: Option<PathBuf>,
        /// Replace existing occluded outputs.
        #[arg(long)]
        force: bool,
    },

    /// Train one segmentation head on the stored scenes of a generated run.
    Train {
        /// Run directory holding gen outputs.
        run: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Sensor set: c, c+r, c+l, or c+r+l.
        #[arg(long, default_value = "c")]
        modality: String,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Scenes per optimizer step.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Initialization and shuffle seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace an existing parameter file for this modality.
        #[arg(long)]
        force: bool,
    },

    /// Run the full occlusion-by-modality experiment matrix.
    Matrix {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Comma-separated modality columns, e.g. c,c+r,c+l,c+r+l.
        #[arg(long, value_name = "LIST")]
        modalities: Option<String>,
        /// Comma-separated occlusion rows, e.g. none,realistic.
        #[arg(long, value_name = "LIST")]
        occlusions: Option<String>,
        /// Comma-separated scene seeds, e.g. 101,102,103.
        #[arg(long, value_name = "LIST")]
        seeds: Option<String>,
        /// Validation scenes captured as qualitative panels.
        #[arg(long, default_value_t = 2, value_name = "N")]
        panel_scenes: usize,
        /// Pixels per grid cell in panel images.
        #[arg(long, default_value_t = 4, value_name = "N")]
        upscale: usize,
    },

    /// Render qualitative panels from a single-seed run of the pipeline.
    Panels {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Validation scenes to capture.
        #[arg(long, default_value_t = 2, value_name = "N")]
        scenes: usize,
        /// Pixels per grid cell in panel images.
        #[arg(long, default_value_t = 4, value_name = "N")]
        upscale: usize,
    },
}

/// Flag overrides collected as (field path, JSON value) pairs.
struct Overrides(Vec<(String, serde_json::Value)>);

impl Overrides {
    fn from_sets(sets: &[String]) -> Result<Overrides> {
        let mut out = Vec::with_capacity(sets.len());
        for s in sets {
            out.push(parse_override(s)?);
        }
        Ok(Overrides(out))
    }

    fn push_some<T: serde::Serialize>(&mut self, field: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.push((field.to_string(), json!(v)));
        }
    }
}

/// Splits a comma-separated list, validating each entry with `parse`.
fn parse_list<T, E: std::fmt::Display>(
    text: &str,
    what: &str,
    parse: impl Fn(&str) -> std::result::Result<T, E>,
) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        parse(part).map_err(|e| {
            let msg = e.to_string();
            let msg = msg.strip_prefix("invalid argument: ").map(str::to_string).unwrap_or(msg);
            Error::invalid(format!("{what} list: {msg}"))
        })?;
        out.push(part.to_string());
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("empty {what} list")));
    }
    Ok(out)
}

fn resolve_with(config: &ConfigArgs, extra: Overrides) -> Result<ExperimentConfig> {
    let mut overrides = Overrides::from_sets(&config.set)?.0;
    // Dedicated flags take precedence over generic --set values.
    overrides.extend(extra.0);
    resolve(config.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out, scenes, seed } => {
            let cfg = resolve_with(&config, Overrides(Vec::new()))?;
            let root = cmd_gen(&cfg, scenes, seed, &out.to_opts())?;
            println!("wrote {scenes} scene(s) to {}", root.display());
        }

        Command::Occlude {
            run,
            config,
            occlusion,
            kernel_size,
            sigma,
            coverage,
            opacity,
            mask_dir,
            force,
        } => {
            let mode = OcclusionMode::from_str(&occlusion)?;
            if let Some(op) = &opacity {
                if !matches!(op.as_str(), "blur" | "opaque") {
                    return Err(Error::invalid(format!(
                        "unknown opacity `{op}` (expected blur or opaque)"
                    )));
                }
            }
            let mut extra = Overrides(Vec::new());
            extra.push_some("occlusion.kernel_size", kernel_size);
            extra.push_some("occlusion.sigma", sigma);
            extra.push_some("occlusion.coverage", coverage);
            extra.push_some("occlusion.opacity", opacity);
            // The run's persisted config is the base; flags layer on top.
            let run_config = run.join(bevlab::ops::CONFIG_FILE);
            let base = if config.config.is_some() { config } else {
                ConfigArgs { config: Some(run_config), set: config.set }
            };
            let cfg = resolve_with(&base, extra)?;
            let out = cmd_occlude(&run, &cfg, mode, mask_dir.as_deref(), force)?;
            println!("wrote {} occlusion to {}", mode.as_str(), out.display());
        }

        Command::Train { run, config, modality, lr, epochs, batch_size, seed, force } => {
            let modality = ModalitySet::parse(&modality)?;
            let mut extra = Overrides(Vec::new());
            extra.push_some("train.lr", lr);
            extra.push_some("train.epochs", epochs);
            extra.push_some("train.batch_size", batch_size);
            extra.push_some("train.seed", seed);
            let run_config = run.join(bevlab::ops::CONFIG_FILE);
            let base = if config.config.is_some() { config } else {
                ConfigArgs { config: Some(run_config), set: config.set }
            };
            let cfg = resolve_with(&base, extra)?;
            let path = cmd_train(&run, &cfg, modality, force)?;
            println!("wrote trained head to {}", path.display());
        }

        Command::Matrix {
            config,
            out,
            modalities,
            occlusions,
            seeds,
            panel_scenes,
            upscale,
        } => {
            let mut extra = Overrides(Vec::new());
            if let Some(list) = &modalities {
                let parsed = parse_list(list, "modality", ModalitySet::parse)?;
                extra.0.push(("modalities".to_string(), json!(parsed)));
            }
            if let Some(list) = &occlusions {
                let parsed = parse_list(list, "occlusion mode", OcclusionMode::from_str)?;
                extra.0.push(("occlusions".to_string(), json!(parsed)));
            }
            if let Some(list) = &seeds {
                let parsed: Vec<u64> = parse_list(list, "seed", u64::from_str)?
                    .iter()
                    .map(|s| s.parse().expect("validated above"))
                    .collect();
                extra.0.push(("seeds".to_string(), json!(parsed)));
            }
            let cfg = resolve_with(&config, extra)?;
            let (root, matrix) = cmd_matrix(&cfg, panel_scenes, upscale, &out.to_opts())?;
            print!("{}", matrix.to_csv());
            println!("wrote experiment matrix to {}", root.display());
        }

        Command::Panels { config, out, scenes, upscale } => {
            let cfg = resolve_with(&config, Overrides(Vec::new()))?;
            let root = cmd_panels(&cfg, scenes, upscale, &out.to_opts())?;
            println!("wrote panels to {}", root.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or(default_level),
    )
    .init();
    if let Some(jobs) = cli.jobs {
        // Thread count only changes wall time; all reductions are ordered.
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
