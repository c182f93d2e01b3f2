//! `cvsense`: run calibration campaigns on the virtual bench, summarize
//! their traces, and export landscape grids for plotting.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cvsense_cli::campaign::run_campaign;
use cvsense_cli::config::{CampaignConfig, Mode};
use cvsense_cli::summary::summarize_file;
use cvsense_cli::CliError;

#[derive(Parser)]
#[command(name = "cvsense", version, about = "Squeezed-light phase estimation campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the campaign described by a TOML config
    Run {
        /// Campaign config file
        config: PathBuf,
        /// Override the campaign seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Directory that receives traces, manifest, and grids
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Run this many consecutive seeds concurrently, one thread each
        #[arg(long, default_value_t = 1)]
        parallel: u64,
    },
    /// Summarize a recorded trace file
    Report {
        /// NDJSON trace written by `run`
        trace: PathBuf,
    },
    /// Export the true-cost grid for a config, ignoring its mode
    Landscape {
        /// Campaign config file
        config: PathBuf,
        /// Override the campaign seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Directory that receives the grid and any overlay trace
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, seed, out_dir, parallel } => {
            let cfg = load_with_seed(&config, seed)?;
            if cfg.mode == Mode::Landscape && parallel != 1 {
                return Err(CliError::Config(
                    "--parallel applies to optimizer campaigns, not landscape export".into(),
                ));
            }
            let manifest = run_campaign(&cfg, &out_dir, parallel)?;
            report_runs(&manifest, &out_dir);
            // Echo where the batch's index landed, since everything else
            // is discoverable from there.
            println!("manifest: {}", out_dir.join(&cfg.output.manifest).display());
            Ok(())
        }
        Command::Report { trace } => {
            let summary = summarize_file(&trace)?;
            print!("{summary}");
            Ok(())
        }
        Command::Landscape { config, seed, out_dir } => {
            let mut cfg = load_with_seed(&config, seed)?;
            cfg.mode = Mode::Landscape;
            let manifest = run_campaign(&cfg, &out_dir, 1)?;
            report_runs(&manifest, &out_dir);
            println!("manifest: {}", out_dir.join(&cfg.output.manifest).display());
            Ok(())
        }
    }
}

fn load_with_seed(path: &Path, seed: Option<u64>) -> Result<CampaignConfig, CliError> {
    let mut cfg = CampaignConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn report_runs(manifest: &cvsense_cli::campaign::Manifest, out_dir: &std::path::Path) {
    for run in &manifest.runs {
        for trace in &run.traces {
            println!("seed {} -> {}", run.seed, out_dir.join(&trace.file).display());
            print!("{}", trace.summary);
        }
        if let Some(grid) = &run.landscape {
            println!("seed {} -> {}", run.seed, out_dir.join(grid).display());
        }
    }
}
