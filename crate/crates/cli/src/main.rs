//! `cvgeo`: generate synthetic cross-view data, train, evaluate, ablate,
//! export Grad-CAM maps and estimate orientation.
//!
//! Exit codes: 0 ok, 2 config, 3 data/shape, 4 divergence, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cvgeo_core::losses::LossKind;
use cvgeo_core::trainer::{AlignmentRegime, MiningMode};
use cvgeo_core::{Error, ErrorCategory};

use commands::RunDir;
use config::{AblationKind, RunConfig};

#[derive(Parser)]
#[command(name = "cvgeo", version, about = "Cross-view street-to-aerial matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct TrainOverrides {
    /// Also caps warmup_epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    mining: Option<MiningArg>,
    /// soft-margin: weighted soft-margin throughout; binomial: binomial after warmup.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MiningArg {
    None,
    Batch,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    SoftMargin,
    Binomial,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Aligned,
    Rotate,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with train/val/test manifests.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write checkpoint, report and plots.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        #[arg(long)]
        val_manifest: Option<PathBuf>,
    },
    /// Recall report of a checkpoint on a manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Alignment matrix, mining grid or loss grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long, value_enum)]
        kind: Option<AblationKind>,
    },
    /// Export Grad-CAM maps for selected pairs.
    Gradcam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated pair ids; defaults to the first pair.
        #[arg(long, value_delimiter = ',')]
        pairs: Vec<String>,
    },
    /// Estimate relative orientation for every pair of a manifest.
    Orient {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        /// Also train the supervised regression baseline on data.train_manifest.
        #[arg(long)]
        baseline: bool,
    },
}

fn apply_train_overrides(cfg: &mut RunConfig, o: &TrainOverrides) {
    let t = &mut cfg.training;
    if let Some(e) = o.epochs {
        t.epochs = e;
        t.warmup_epochs = t.warmup_epochs.min(e);
    }
    if let Some(m) = o.mining {
        t.mining = match m {
            MiningArg::None => MiningMode::None,
            MiningArg::Batch => MiningMode::Batch,
            MiningArg::Global => MiningMode::Global,
        };
    }
    match o.loss {
        Some(LossArg::SoftMargin) => {
            t.loss.kind = LossKind::WeightedSoft;
            t.warmup_epochs = t.epochs;
        }
        Some(LossArg::Binomial) => t.loss.kind = LossKind::BinomialAsym,
        None => {}
    }
    if let Some(r) = o.regime {
        t.alignment_regime = match r {
            RegimeArg::Aligned => AlignmentRegime::Aligned,
            RegimeArg::Rotate => AlignmentRegime::RandomRotate,
        };
    }
}

fn prepare(common: &Common, edit: impl FnOnce(&mut RunConfig)) -> anyhow::Result<(RunConfig, RunDir)> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.synthetic.seed = seed;
        cfg.training.seed = seed;
        cfg.regression.seed = seed;
    }
    edit(&mut cfg);
    cfg.validate()?;
    let run = RunDir::create(&common.out)?;
    run.write_json("config.json", &cfg)?;
    Ok((cfg, run))
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("CVGEO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CVGEO_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<String> {
    configure_threads()?;
    let started = std::time::Instant::now();
    let (summary, mut dir) = match cli.command {
        Command::Gen { common } => {
            let (cfg, mut dir) = prepare(&common, |_| {})?;
            (commands::gen(&cfg, &mut dir)?, dir)
        }
        Command::Train {
            common,
            overrides,
            train_manifest,
            val_manifest,
        } => {
            let (cfg, mut dir) = prepare(&common, |c| {
                apply_train_overrides(c, &overrides);
                if train_manifest.is_some() {
                    c.data.train_manifest = train_manifest;
                }
                if val_manifest.is_some() {
                    c.data.val_manifest = val_manifest;
                }
            })?;
            (commands::train(&cfg, &mut dir)?, dir)
        }
        Command::Eval {
            common,
            checkpoint,
            manifest,
        } => {
            let (cfg, mut dir) = prepare(&common, |_| {})?;
            (commands::eval(&cfg, &checkpoint, &manifest, &mut dir)?, dir)
        }
        Command::Ablate {
            common,
            overrides,
            kind,
        } => {
            let (cfg, mut dir) = prepare(&common, |c| {
                apply_train_overrides(c, &overrides);
                if let Some(k) = kind {
                    c.ablation.kind = k;
                }
                if let Some(s) = common.seed {
                    c.ablation.seeds = vec![s];
                }
            })?;
            (commands::ablate(&cfg, &mut dir)?, dir)
        }
        Command::Gradcam {
            common,
            checkpoint,
            manifest,
            pairs,
        } => {
            let (_, mut dir) = prepare(&common, |_| {})?;
            (commands::gradcam(&checkpoint, &manifest, &pairs, &mut dir)?, dir)
        }
        Command::Orient {
            common,
            checkpoint,
            manifest,
            tau,
            bins,
            baseline,
        } => {
            let (cfg, mut dir) = prepare(&common, |c| {
                if let Some(t) = tau {
                    c.orientation.tau = t;
                }
                if let Some(b) = bins {
                    c.orientation.bins = b;
                }
            })?;
            (
                commands::orient(&cfg, &checkpoint, &manifest, baseline, &mut dir)?,
                dir,
            )
        }
    };
    dir.log_time("total", started.elapsed().as_secs_f64());
    dir.finish()?;
    Ok(summary)
}

fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    match err.downcast_ref::<Error>() {
        Some(e) => {
            let code = match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Divergence => 4,
                ErrorCategory::Other => 1,
            };
            (code, e.kind_name())
        }
        None => (1, "Error"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (code, kind) = exit_code(&e);
            eprintln!("error: {kind}: {e:#}");
            ExitCode::from(code)
        }
    }
}
