//! Command-line surface for the camera-scanning Fourier-ptychography
//! toolkit: simulate datasets, calibrate poses, align captures, reconstruct
//! under the three correction modes, and compare runs.

mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use camfp_core::pipeline::CorrectionMode;
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "camfp",
    about = "Camera-scanning Fourier ptychography: simulation, calibration, alignment, reconstruction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scanned capture set (writes truth/ and blind/ variants).
    Simulate {
        /// Experiment config file (key=value with [section] headers).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the scan RNG seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate homographies, intrinsics, and pixel offsets from a dataset.
    Calibrate {
        /// Dataset directory (as written by simulate).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warp every capture onto the reference capture's pixel frame.
    Align {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Correction mode: location_only | homography_only | full.
        #[arg(long, value_parser = parse_mode, default_value = "full")]
        mode: CorrectionMode,
    },
    /// Calibrate, align, and reconstruct a dataset under one mode.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Correction mode: location_only | homography_only | full.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<CorrectionMode>,
        /// Experiment config; also enables ground-truth object metrics.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Tabulate metrics of finished runs and render a side-by-side panel.
    Report {
        /// Run directories produced by reconstruct.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<CorrectionMode, String> {
    s.parse().map_err(|e: camfp_core::Error| e.to_string())
}

fn load_config(path: &Option<PathBuf>) -> camfp_core::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> camfp_core::Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            commands::cmd_simulate(&cfg, &out)
        }
        Command::Calibrate { data, out } => commands::cmd_calibrate(&data, &out),
        Command::Align { data, out, mode } => commands::cmd_align(&data, &out, mode),
        Command::Reconstruct { data, out, mode, config } => {
            let have_scene_reference = config.is_some();
            let mut cfg = load_config(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            commands::cmd_reconstruct(&data, &out, &cfg, have_scene_reference)
        }
        Command::Report { runs, out } => commands::cmd_report(&runs, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
