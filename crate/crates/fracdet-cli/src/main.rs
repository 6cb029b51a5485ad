//! `fracdet`: verification suites, cost reports, the synthetic training
//! demo, and heatmap export.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fracdet_cli::commands::{self, CliError};
use fracdet_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "fracdet", version, about = "Dual-focus attention and multi-scale calibration: verification and demo harness")]
struct Cli {
    /// Config file with `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for all randomness in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (fallback: FRACDET_OUTDIR, then `out`).
    #[arg(long, global = true)]
    out: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a module's invariant suite and write its JSON report.
    Verify {
        /// tensor | dfa | mc | flops | detector | all
        #[arg(long, default_value = "all")]
        suite: String,
        /// Gradient-check tolerance override.
        #[arg(long)]
        grad_tol: Option<f64>,
        /// Gradient-check seed-count override.
        #[arg(long)]
        grad_seeds: Option<usize>,
    },
    /// Write parameter/MAC cost tables for a module at an input shape.
    Cost {
        /// dfa | mc | detector
        #[arg(long)]
        module: String,
        /// Input shape as N,C,H,W.
        #[arg(long)]
        shape: String,
    },
    /// Train the toy detector on synthetic scenes and evaluate it.
    TrainDemo {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        scenes: Option<usize>,
        /// Enable the DFA block in the neck position.
        #[arg(long)]
        with_dfa: bool,
        /// Enable the MC block in the head position.
        #[arg(long)]
        with_mc: bool,
        /// Export the first N scenes as PGM + JSON sidecars.
        #[arg(long, default_value_t = 0)]
        export_scenes: usize,
    },
    /// Overfit one scene and export its gradient-weighted heatmap.
    Heatmap {
        /// Seed of the scene to overfit.
        #[arg(long, default_value_t = 11)]
        scene_seed: u64,
        #[arg(long, default_value_t = 600)]
        epochs: usize,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.outdir = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = build_config(&cli)?;
    match cli.command {
        Command::Verify { suite, grad_tol, grad_seeds } => {
            if let Some(tol) = grad_tol {
                config.tol_grad = tol;
            }
            if let Some(seeds) = grad_seeds {
                config.tol_grad_seeds = seeds;
            }
            commands::cmd_verify(&suite, &config)
        }
        Command::Cost { module, shape } => commands::cmd_cost(&module, &shape, &config),
        Command::TrainDemo { epochs, lr, scenes, with_dfa, with_mc, export_scenes } => {
            if let Some(epochs) = epochs {
                config.train_epochs = epochs;
            }
            if let Some(lr) = lr {
                config.train_lr = lr;
            }
            if let Some(scenes) = scenes {
                config.train_scenes = scenes;
            }
            if with_dfa {
                config.detector_with_dfa = true;
            }
            if with_mc {
                config.detector_with_mc = true;
            }
            if config.train_epochs == 0 {
                return Err(CliError::Usage(String::from("--epochs must be >= 1")));
            }
            commands::cmd_train_demo(&config, export_scenes)
        }
        Command::Heatmap { scene_seed, epochs } => {
            // The single-image overfit needs a stronger positive weight
            // than the full-dataset demo.
            config.train_pos_weight = config.train_pos_weight.max(32.0);
            commands::cmd_heatmap(&config, scene_seed, epochs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
