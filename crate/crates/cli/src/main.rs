use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use trajpmbm::pmbm::Window;
use trajpmbm_cli::{execute, load_config, preset, summary_row, Overrides, RunConfig, PRESETS};

/// Monte Carlo runs of the PMBM trajectory filter.
#[derive(Debug, Parser)]
#[command(name = "trajpmbm", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: table1-pd09-lc10, table1-pd09-lc30, table1-pd07-lc10, table1-pd07-lc30.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// N-scan pruning depth.
    #[arg(long)]
    nscan: Option<usize>,
    /// Retained trajectory window: 1 or full.
    #[arg(long, value_name = "1|full")]
    window: Option<Window>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Write the dual-decomposition iterations to convergence.csv.
    #[arg(long)]
    debug_dual: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = if let Some(path) = &cli.config {
        if !path.exists() {
            eprintln!("error: config file not found: {}", path.display());
            return ExitCode::from(2);
        }
        match load_config(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
        }
    } else if let Some(name) = &cli.preset {
        match preset(name) {
            Some(c) => c,
            None => {
                eprintln!(
                    "error: unknown preset {name:?}; expected one of {}",
                    PRESETS.join(", ")
                );
                return ExitCode::from(2);
            }
        }
    } else {
        RunConfig::default()
    };
    cfg.apply(&Overrides {
        trials: cli.trials,
        seed: cli.seed,
        nscan: cli.nscan,
        window: cli.window,
        out: cli.out.clone(),
    });
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match execute(&cfg, cli.debug_dual) {
        Ok(report) => {
            println!("{}", summary_row(&cfg, &report));
            if report.infeasible_scans() > 0 {
                eprintln!(
                    "warning: {} scans selected an infeasible hypothesis",
                    report.infeasible_scans()
                );
            }
            println!("results written to {}", cfg.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
