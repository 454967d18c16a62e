//! `ascent`: preprocess, synthesize, train, evaluate, predict and benchmark.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
//! failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{AblationFlag, ForecasterKind, Overrides, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "ascent", version, about = "Multi-modal trajectory forecasting for terminal-area general aviation")]
struct Cli {
    /// TOML run config; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named experiment setting (trajair-11s, atp-16s, goodflight-40s).
    #[arg(long, global = true)]
    setting: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Ablation switch; repeatable.
    #[arg(long, global = true, value_enum)]
    ablation: Vec<AblationFlag>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Window raw scene files into canonical datasets.
    Preprocess {
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Generate synthetic traffic-pattern datasets.
    Synth,
    /// Train a model; writes model.ckpt and metrics.jsonl.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Score a forecaster on a test set; writes report.json.
    Eval {
        #[arg(long)]
        test: Option<PathBuf>,
        /// Neighbor bank for the nearest-neighbor baseline.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        forecaster: Option<ForecasterKind>,
    },
    /// Dump k trajectories and scores per test sample; writes predictions.json.
    Predict {
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time batched inference; writes latency.csv.
    Bench {
        /// Weights to time; a fresh model otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the resolved config, or the key reference page.
    Config {
        #[arg(long)]
        reference: bool,
    },
}

fn set(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let ov = Overrides {
        setting: cli.setting,
        seed: cli.seed,
        out: cli.out,
        ablations: cli.ablation,
    };
    let (mut cfg, notes): (RunConfig, _) = config::load(cli.config.as_deref(), &ov)?;
    for n in notes {
        log::warn!("{n}");
    }
    match &cli.command {
        Command::Config { reference } => {
            if *reference {
                print!("{}", config::reference_page());
            } else {
                print!("{}", cfg.to_toml());
            }
            return Ok(());
        }
        Command::Preprocess { raw } => set(&mut cfg.data.raw, raw.clone()),
        Command::Synth => {}
        Command::Train { train, val } => {
            set(&mut cfg.data.train, train.clone());
            set(&mut cfg.data.val, val.clone());
        }
        Command::Eval {
            test,
            train,
            checkpoint,
            forecaster,
        } => {
            set(&mut cfg.data.test, test.clone());
            set(&mut cfg.data.train, train.clone());
            set(&mut cfg.eval.checkpoint, checkpoint.clone());
            if let Some(f) = forecaster {
                cfg.eval.forecaster = *f;
            }
        }
        Command::Predict { test, checkpoint } => {
            set(&mut cfg.data.test, test.clone());
            set(&mut cfg.eval.checkpoint, checkpoint.clone());
        }
        Command::Bench { checkpoint } => set(&mut cfg.eval.checkpoint, checkpoint.clone()),
    }
    cfg.write_resolved()?;
    match cli.command {
        Command::Preprocess { .. } => commands::preprocess(&cfg),
        Command::Synth => commands::synth(&cfg),
        Command::Train { .. } => commands::train_cmd(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Predict { .. } => commands::predict(&cfg),
        Command::Bench { .. } => commands::bench(&cfg),
        Command::Config { .. } => unreachable!("handled above"),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
