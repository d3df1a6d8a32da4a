mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vmr_core::datamodel::Split;
use vmr_core::synth::SynthConfig;
use vmr_core::Error;

use config::{NarratorMode, RunConfig};

/// Video moment retrieval with narrative-enhanced features.
#[derive(Parser)]
#[command(name = "vmr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Split to process; repeat for several. Defaults depend on the command.
    #[arg(long = "split")]
    splits: Vec<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured narrator mode.
    #[arg(long, value_enum)]
    narrator_mode: Option<NarratorMode>,
}

#[derive(Args)]
struct ModelArgs {
    /// Weight of the paragraph branch; defaults to `fusion.alpha`.
    #[arg(long)]
    alpha: Option<f64>,
    /// Checkpoint to load; defaults to `<output_dir>/checkpoints/best.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Caption sampled frames of every video and fill the narration cache.
    Narrate(Common),
    /// Align cached narratives to the snippet grid and write them out.
    Align(Common),
    /// Train a model on the `train` split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<f64>,
        /// Continue from `<output_dir>/checkpoints/last.ckpt`.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in this invocation.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Report IoU@m and mIoU per split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Write per-pair predictions and branch scores.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Re-fuse cached branch scores over a grid of alpha values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate a small synthetic dataset plus a config to run on it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48)]
        pairs: usize,
        /// Extra pairs written as the `cd-test-ood` split.
        #[arg(long, default_value_t = 0)]
        holdout: usize,
        #[arg(long, default_value_t = 16)]
        snippets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share of videos whose moment is visible only in the captions.
        #[arg(long, default_value_t = 0.0)]
        narrative_only: f64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
    },
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(mode) = common.narrator_mode {
        cfg.narrator.mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn alpha_of(cfg: &RunConfig, alpha: Option<f64>) -> anyhow::Result<f64> {
    let a = alpha.unwrap_or(cfg.fusion.alpha);
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::Validation(format!("alpha must be a non-negative number, got {a}")).into());
    }
    if a > 0.0 && !cfg.model.paragraph_branch {
        return Err(Error::Validation("alpha > 0 needs model.paragraph_branch = true".into()).into());
    }
    Ok(a)
}

fn eval_splits(cfg: &RunConfig, common: &Common) -> anyhow::Result<Vec<Split>> {
    let default: Vec<Split> = cfg.configured_splits().into_iter().filter(|s| *s != Split::Train).collect();
    let default = if default.is_empty() { vec![Split::Train] } else { default };
    commands::parse_splits(&common.splits, default)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Narrate(common) => {
            let cfg = load(&common)?;
            let splits = commands::parse_splits(&common.splits, cfg.configured_splits())?;
            commands::narrate(&cfg, &splits)
        }
        Command::Align(common) => {
            let cfg = load(&common)?;
            let splits = commands::parse_splits(&common.splits, cfg.configured_splits())?;
            commands::align(&cfg, &splits)
        }
        Command::Train { common, alpha, resume, max_epochs } => {
            let cfg = load(&common)?;
            let alpha = alpha_of(&cfg, alpha)?;
            commands::train(&cfg, alpha, resume, max_epochs)
        }
        Command::Eval { common, model } => {
            let cfg = load(&common)?;
            let alpha = alpha_of(&cfg, model.alpha)?;
            let splits = eval_splits(&cfg, &common)?;
            commands::eval(&cfg, &splits, alpha, model.checkpoint.as_deref())
        }
        Command::Predict { common, model } => {
            let cfg = load(&common)?;
            let alpha = alpha_of(&cfg, model.alpha)?;
            let splits = eval_splits(&cfg, &common)?;
            commands::predict(&cfg, &splits, alpha, model.checkpoint.as_deref())
        }
        Command::Sweep { common, checkpoint } => {
            let cfg = load(&common)?;
            let splits = eval_splits(&cfg, &common)?;
            commands::sweep(&cfg, &splits, checkpoint.as_deref())
        }
        Command::Synth { out, pairs, holdout, snippets, seed, narrative_only, epochs } => {
            let synth = SynthConfig {
                pairs,
                snippets,
                seed,
                narrative_only_fraction: narrative_only,
                max_span: SynthConfig::default().max_span.min(snippets / 2),
                min_span: SynthConfig::default().min_span.min(snippets / 2),
                ..Default::default()
            };
            let path = commands::synth(&out, &synth, holdout, epochs)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

/// 1 for bad input or configuration, 3 for narrator service failures, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Narration { remote: true, .. } | Error::Remote(_)) => 3,
        Some(
            Error::Validation(_)
            | Error::OutOfRange { .. }
            | Error::IndexOutOfRange { .. }
            | Error::Shape(_)
            | Error::Parse { .. }
            | Error::Entry { .. }
            | Error::Fingerprint { .. },
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
