//! Command-line entry point: `synth`, `train`, `eval`, `localize`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 check failed, 2 usage or config error, 3 numerical
//! error, 4 retry exhaustion.

pub mod config;
pub mod formats;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{DmcError, Result};
use crate::eval;
use crate::grad::{self, SampleRef};
use crate::loss_train::{self, Model};
use crate::synth;

pub use config::RunConfig;
use formats::ManifestEntry;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_RETRY_EXHAUSTED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dmc", about = "Differentiable multimodal clustering toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate localization and matching on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Write the heatmap and mask of one scene as PGM images.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<DmcError> for Failure {
    fn from(e: DmcError) -> Self {
        let code = match &e {
            DmcError::ResampleRequired(_) => EXIT_RETRY_EXHAUSTED,
            e if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<String, Failure>;

/// Parses `args` (program name first), runs the command and returns its exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(report) => {
            if !report.is_empty() {
                println!("{report}");
            }
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| DmcError::Config(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| DmcError::Config(format!("cannot write {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DmcError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn execute(command: Command) -> CmdResult {
    match command {
        Command::Synth { common, out } => cmd_synth(&load_config(&common)?, &out),
        Command::Train { common, data, out } => cmd_train(&load_config(&common)?, &data, &out),
        Command::Eval {
            common,
            model,
            data,
            out,
            threshold,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            cmd_eval(&cfg, &model, &data, &out)
        }
        Command::Localize {
            common,
            model,
            scene,
            out,
            threshold,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            cmd_localize(&cfg, &model, &scene, &out)
        }
        Command::Gradcheck { common } => cmd_gradcheck(&load_config(&common)?),
    }
}

/// Writes `num_scenes` scenes and `manifest.csv` into `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> CmdResult {
    let synth_cfg = cfg.synth();
    synth_cfg.validate()?;
    let world = synth::World::new(&synth_cfg)?;
    ensure_dir(out)?;
    let mut entries = Vec::with_capacity(cfg.num_scenes);
    for index in 0..cfg.num_scenes {
        let seed = synth::scene_seed(cfg.seed, index);
        let scene = synth::generate_pair_in(seed, &synth_cfg, &world)?;
        let file = formats::scene_file_name(index);
        write(&out.join(&file), formats::encode_scene(&scene))?;
        entries.push(ManifestEntry {
            index,
            seed,
            file,
            sounding: scene.sounding_count(),
            silent: scene.components.len() - scene.sounding_count(),
        });
    }
    write(&out.join("manifest.csv"), formats::manifest_csv(&entries))?;
    Ok(format!("wrote {} scenes to {}", entries.len(), out.display()))
}

/// Trains from a fresh seeded initialization and writes `model.dmcm` and `train_log.csv`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> CmdResult {
    let dataset = formats::read_dataset(data)?;
    if dataset.len() < 2 {
        return Err(DmcError::Config(format!("dataset {} holds fewer than 2 scenes", data.display())).into());
    }
    let mut model = Model::init(&cfg.model(), cfg.seed)?;
    let log = loss_train::train(&dataset, &mut model, &cfg.train())?;
    ensure_dir(out)?;
    write(&out.join("model.dmcm"), formats::encode_model(&model))?;
    write(&out.join("train_log.csv"), loss_train::log_csv(&log))?;
    let last = log.last().map_or(f64::NAN, |e| e.loss);
    Ok(format!("trained {} iterations, final batch loss {last:.6}", log.len()))
}

fn check_compatible(model: &Model, scene: &synth::ScenePair) -> Result<()> {
    let v = &model.visual_encoder;
    let a = &model.audio_encoder;
    let ok = scene.visual.channels() == v.channels
        && scene.visual.height() % v.patch.0 == 0
        && scene.visual.width() % v.patch.1 == 0
        && scene.audio.channels() == a.channels
        && scene.audio.height() % a.patch.0 == 0
        && scene.audio.width() % a.patch.1 == 0;
    if !ok {
        return Err(DmcError::Shape("scene grids do not match the model's encoders".into()));
    }
    Ok(())
}

/// Writes `metrics.csv` with per-scene rows and a summary row.
pub fn cmd_eval(cfg: &RunConfig, model_path: &Path, data: &Path, out: &Path) -> CmdResult {
    let model = formats::read_model(model_path)?;
    let dataset = formats::read_dataset(data)?;
    for scene in &dataset {
        check_compatible(&model, scene)?;
    }
    let eval_cfg = cfg.eval();
    let report = eval::evaluate(&model, &dataset, &eval_cfg)?;
    ensure_dir(out)?;
    write(&out.join("metrics.csv"), eval::metrics_csv(&report, eval_cfg.auc_step)?)?;
    Ok(format!(
        "ciou@0.5 {:.4}  ciou@0.7 {:.4}  auc {:.4}  match_accuracy {:.4}",
        report.ciou_at_0_5, report.ciou_at_0_7, report.auc, report.match_accuracy
    ))
}

/// Writes `heatmap.pgm` and `mask.pgm` for one scene.
pub fn cmd_localize(cfg: &RunConfig, model_path: &Path, scene_path: &Path, out: &Path) -> CmdResult {
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(DmcError::Config(format!("threshold {} must lie in [0, 1]", cfg.threshold)).into());
    }
    let model = formats::read_model(model_path)?;
    let scene = formats::read_scene(scene_path)?;
    check_compatible(&model, &scene)?;
    let loc = eval::localize(
        &model.encode_audio(&scene.audio)?,
        &model.encode_visual(&scene.visual)?,
        &model.bank,
        &model.cluster,
    )?;
    let mask = eval::binarize(&loc.heatmap, cfg.threshold);
    ensure_dir(out)?;
    write(&out.join("heatmap.pgm"), eval::heatmap_pgm(&loc.heatmap))?;
    write(&out.join("mask.pgm"), eval::mask_pgm(&mask))?;
    Ok(format!("chosen cluster {}", loc.chosen_cluster))
}

/// Gradient check on a seeded model and batch. Fails with exit 1 when the
/// error reaches the tolerance and exit 4 when every batch sits on a kink.
pub fn cmd_gradcheck(cfg: &RunConfig) -> CmdResult {
    let synth_cfg = cfg.synth();
    let batch = cfg.gradcheck_batch.max(1);
    let check = cfg.gradcheck();
    let loss = cfg.loss();
    loss.validate()?;
    for attempt in 0..cfg.gradcheck_retries.max(1) {
        let seed = cfg.seed.wrapping_add(attempt as u64 * 7919);
        let model = Model::init(&cfg.model(), seed)?;
        let scenes = synth::generate_dataset(seed, batch + 1, &synth_cfg)?;
        let samples: Vec<SampleRef> = (0..batch)
            .map(|i| SampleRef {
                visual: &scenes[i].visual,
                audio: &scenes[i].audio,
                negative_audio: &scenes[i + 1].audio,
            })
            .collect();
        match grad::grad_check(&model, &samples, &loss, &check) {
            Ok(report) => {
                let text = report.to_string();
                if report.passed(cfg.gradcheck_tolerance) {
                    return Ok(text);
                }
                println!("{text}");
                return Err(Failure {
                    code: EXIT_CHECK_FAILED,
                    message: format!(
                        "max relative error {:.3e} is not below {:e}",
                        report.max_rel_error, cfg.gradcheck_tolerance
                    ),
                });
            }
            Err(DmcError::ResampleRequired(_)) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Failure {
        code: EXIT_RETRY_EXHAUSTED,
        message: format!(
            "every one of {} batches sat on a hinge kink",
            cfg.gradcheck_retries.max(1)
        ),
    })
}
