//! `sdotflow` — an end-to-end pipeline for flow-matching models trained on
//! transport-aligned noise/data couplings: dataset generation, the
//! semi-discrete transport solve, pair generation, training, sampling, and
//! evaluation. Outputs are files (binary artifacts, CSV metrics, PGM
//! density grids); nothing is interactive.
//!
//! Settings come from one flat key=value namespace resolved as
//! defaults < `--config FILE` < flags; every command echoes the resolved
//! table next to its outputs so any run can be reproduced from the echo.
//! Exit codes: 0 success, 1 quality threshold not met, 2 invalid input,
//! 3 numeric abort.

mod commands;
mod config;
mod pgm;
mod pointfile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::{EXIT_INVALID, EXIT_NUMERIC};
use config::RunConfig;
use sdot_flow::{Error, Result};

#[derive(Parser)]
#[command(name = "sdotflow", version, about, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a fixed training set from the 2-D checkerboard density
    Checkerboard(CheckerboardArgs),
    /// Fit transport dual weights to a dataset, one solve per class
    Sdot(SdotArgs),
    /// Materialize the seeded noise-to-data pair stream from dual weights
    Pairs(PairsArgs),
    /// Train a velocity-field network
    Train(TrainArgs),
    /// Integrate trajectories from seeded noise through a checkpoint
    Sample(SampleArgs),
    /// Compare samples against a reference set and summarize trajectories
    Eval(EvalArgs),
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// key=value file applied between defaults and flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (key `out`)
    #[arg(long)]
    out: Option<String>,
}

impl Common {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        set_opt(&mut cfg, "out", &self.out)?;
        Ok(cfg)
    }
}

/// Applies a flag override through the config parser so flag and file
/// values share one validation path.
fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, value: &Option<T>) -> Result<()> {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

#[derive(Args)]
struct CheckerboardArgs {
    #[command(flatten)]
    common: Common,
    /// Number of points (key `checker_count`)
    #[arg(long)]
    count: Option<usize>,
    /// Generation seed (key `master_seed`)
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset file (key `dataset`)
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct SdotArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file (key `dataset`)
    #[arg(long)]
    dataset: Option<String>,
    /// Dual-weight file (key `duals`)
    #[arg(long)]
    duals: Option<String>,
    /// Schedule steps:lr:batch:beta:eps[,...] (key `stages`)
    #[arg(long)]
    stages: Option<String>,
    /// Success bound on the final mre_est (key `threshold`)
    #[arg(long)]
    threshold: Option<f64>,
    /// Solver seed (key `master_seed`)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PairsArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file (key `dataset`)
    #[arg(long)]
    dataset: Option<String>,
    /// Dual-weight file (key `duals`)
    #[arg(long)]
    duals: Option<String>,
    /// Pair file (key `pairs`)
    #[arg(long)]
    pairs: Option<String>,
    /// Records to generate; 0 means train_steps*batch_size (key `pair_count`)
    #[arg(long)]
    count: Option<usize>,
    /// Rebalance per-class index counts (key `rebalance`)
    #[arg(long)]
    rebalance: Option<bool>,
    /// Pair-stream seed (key `master_seed`)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file (key `dataset`)
    #[arg(long)]
    dataset: Option<String>,
    /// Pair file consumed in aligned mode (key `pairs`)
    #[arg(long)]
    pairs: Option<String>,
    /// Checkpoint file (key `checkpoint`)
    #[arg(long)]
    checkpoint: Option<String>,
    /// Loss log file (key `loss_csv`)
    #[arg(long)]
    loss_csv: Option<String>,
    /// Optimizer steps (key `train_steps`)
    #[arg(long)]
    steps: Option<usize>,
    /// Batch size (key `batch_size`)
    #[arg(long)]
    batch: Option<usize>,
    /// Step size (key `learning_rate`)
    #[arg(long)]
    lr: Option<f64>,
    /// independent | aligned (key `coupling`)
    #[arg(long)]
    coupling: Option<String>,
    /// vanilla | shortcut | meanflow (key `target`)
    #[arg(long)]
    target: Option<String>,
    /// Hidden widths, comma separated (key `hidden`)
    #[arg(long)]
    hidden: Option<String>,
    /// Embedding features per conditioning scalar (key `embed_width`)
    #[arg(long)]
    embed_width: Option<usize>,
    /// tanh | silu (key `activation`)
    #[arg(long)]
    activation: Option<String>,
    /// Plain-target slots per batch, shortcut only (key `shortcut_kappa`)
    #[arg(long)]
    kappa: Option<usize>,
    /// Loss exponent p >= 1 (key `loss_exponent`)
    #[arg(long)]
    loss_exponent: Option<f64>,
    /// Training seed (key `master_seed`)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint file (key `checkpoint`)
    #[arg(long)]
    checkpoint: Option<String>,
    /// Endpoint point file (key `samples`)
    #[arg(long)]
    samples: Option<String>,
    /// Trajectory log file (key `trajectories`)
    #[arg(long)]
    trajectories: Option<String>,
    /// Trajectories to draw (key `sample_count`)
    #[arg(long)]
    count: Option<usize>,
    /// Integration steps (key `sample_steps`)
    #[arg(long)]
    steps: Option<usize>,
    /// euler | midpoint | rk4 (key `scheme`)
    #[arg(long)]
    scheme: Option<String>,
    /// none | step | span (key `extra`)
    #[arg(long)]
    extra: Option<String>,
    /// Noise seed (key `sample_seed`)
    #[arg(long)]
    seed: Option<u64>,
    /// Also write ten time-slice density grids (key `slices`)
    #[arg(long)]
    slices: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Sample point file (key `samples`)
    #[arg(long)]
    samples: Option<String>,
    /// Reference point file (key `reference`)
    #[arg(long)]
    reference: Option<String>,
    /// Trajectory log file (key `trajectories`)
    #[arg(long)]
    trajectories: Option<String>,
    /// Largest matched point count per side (key `w2_max`)
    #[arg(long)]
    w2_max: Option<usize>,
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Cmd::Checkerboard(a) => {
            let mut cfg = a.common.build()?;
            set_opt(&mut cfg, "checker_count", &a.count)?;
            set_opt(&mut cfg, "master_seed", &a.seed)?;
            set_opt(&mut cfg, "dataset", &a.dataset)?;
            commands::run_checkerboard(&cfg)
        }
        Cmd::Sdot(a) => {
            let mut cfg = a.common.build()?;
            set_opt(&mut cfg, "dataset", &a.dataset)?;
            set_opt(&mut cfg, "duals", &a.duals)?;
            set_opt(&mut cfg, "stages", &a.stages)?;
            set_opt(&mut cfg, "threshold", &a.threshold)?;
            set_opt(&mut cfg, "master_seed", &a.seed)?;
            commands::run_sdot(&cfg)
        }
        Cmd::Pairs(a) => {
            let mut cfg = a.common.build()?;
            set_opt(&mut cfg, "dataset", &a.dataset)?;
            set_opt(&mut cfg, "duals", &a.duals)?;
            set_opt(&mut cfg, "pairs", &a.pairs)?;
            set_opt(&mut cfg, "pair_count", &a.count)?;
            set_opt(&mut cfg, "rebalance", &a.rebalance)?;
            set_opt(&mut cfg, "master_seed", &a.seed)?;
            commands::run_pairs(&cfg)
        }
        Cmd::Train(a) => {
            let mut cfg = a.common.build()?;
            set_opt(&mut cfg, "dataset", &a.dataset)?;
            set_opt(&mut cfg, "pairs", &a.pairs)?;
            set_opt(&mut cfg, "checkpoint", &a.checkpoint)?;
            set_opt(&mut cfg, "loss_csv", &a.loss_csv)?;
            set_opt(&mut cfg, "train_steps", &a.steps)?;
            set_opt(&mut cfg, "batch_size", &a.batch)?;
            set_opt(&mut cfg, "learning_rate", &a.lr)?;
            set_opt(&mut cfg, "coupling", &a.coupling)?;
            set_opt(&mut cfg, "target", &a.target)?;
            set_opt(&mut cfg, "hidden", &a.hidden)?;
            set_opt(&mut cfg, "embed_width", &a.embed_width)?;
            set_opt(&mut cfg, "activation", &a.activation)?;
            set_opt(&mut cfg, "shortcut_kappa", &a.kappa)?;
            set_opt(&mut cfg, "loss_exponent", &a.loss_exponent)?;
            set_opt(&mut cfg, "master_seed", &a.seed)?;
            commands::run_train(&cfg)
        }
        Cmd::Sample(a) => {
            let mut cfg = a.common.build()?;
            set_opt(&mut cfg, "checkpoint", &a.checkpoint)?;
            set_opt(&mut cfg, "samples", &a.samples)?;
            set_opt(&mut cfg, "trajectories", &a.trajectories)?;
            set_opt(&mut cfg, "sample_count", &a.count)?;
            set_opt(&mut cfg, "sample_steps", &a.steps)?;
            set_opt(&mut cfg, "scheme", &a.scheme)?;
            set_opt(&mut cfg, "extra", &a.extra)?;
            set_opt(&mut cfg, "sample_seed", &a.seed)?;
            if a.slices {
                cfg.set("slices", "true")?;
            }
            commands::run_sample(&cfg)
        }
        Cmd::Eval(a) => {
            let mut cfg = a.common.build()?;
            set_opt(&mut cfg, "samples", &a.samples)?;
            set_opt(&mut cfg, "reference", &a.reference)?;
            set_opt(&mut cfg, "trajectories", &a.trajectories)?;
            set_opt(&mut cfg, "w2_max", &a.w2_max)?;
            commands::run_eval(&cfg)
        }
    }
}

fn key_help() -> String {
    let mut s = String::from("Config keys (default in parentheses):\n");
    for (key, default, doc) in RunConfig::documentation() {
        s.push_str(&format!("  {key} ({default}) - {doc}\n"));
    }
    s
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(key_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) => EXIT_NUMERIC,
                _ => EXIT_INVALID,
            }
        }
    };
    ExitCode::from(code as u8)
}
