//! `gait` — synthetic gait data, CNN-LSTM training/evaluation, and
//! post-hoc explainability from one seeded, file-driven command line.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 numeric failure.

mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gait_core::error::Error;

use config::Cfg;

#[derive(Parser)]
#[command(name = "gait", version, about = "gait-abnormality CNN-LSTM pipeline")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
    /// Worker threads for parallel sections (1 = fully deterministic).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic dataset on disk.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a branch on a dataset manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Dataset manifest path (overrides the config key).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset manifest.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grad-CAM heatmaps or Shapley temporal attributions for one sample.
    Explain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Manifest row to explain.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// gradcam | shap
        #[arg(long)]
        tool: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random hyperparameter search with a reduced epoch budget.
    Search {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(args: Args) -> gait_core::error::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {}", e)))?;
    let parallel = args.threads > 1;
    match args.cmd {
        Cmd::Synth { config, out, seed } => {
            let mut cfg = Cfg::from_path(config.as_deref())?;
            if let Some(s) = seed {
                cfg.set("seed", s.to_string());
            }
            commands::cmd_synth(&cfg, &out)
        }
        Cmd::Train {
            config,
            out,
            manifest,
            seed,
        } => {
            let mut cfg = Cfg::from_path(config.as_deref())?;
            if let Some(m) = manifest {
                cfg.set("manifest", m.display().to_string());
            }
            if let Some(s) = seed {
                cfg.set("seed", s.to_string());
            }
            commands::cmd_train(&cfg, &out)
        }
        Cmd::Eval {
            config,
            checkpoint,
            manifest,
            out,
        } => {
            let cfg = Cfg::from_path(config.as_deref())?;
            commands::cmd_eval(&cfg, &checkpoint, &manifest, &out)
        }
        Cmd::Explain {
            config,
            checkpoint,
            manifest,
            index,
            tool,
            out,
        } => {
            let cfg = Cfg::from_path(config.as_deref())?;
            commands::cmd_explain(&cfg, &checkpoint, &manifest, index, &tool, &out)
        }
        Cmd::Search { config, out, seed } => {
            let mut cfg = Cfg::from_path(config.as_deref())?;
            if let Some(s) = seed {
                cfg.set("seed", s.to_string());
            }
            commands::cmd_search(&cfg, &out, parallel)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::Numeric(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
