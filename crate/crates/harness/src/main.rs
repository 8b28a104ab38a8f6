//! Command-line driver. Exit codes: 0 when every explicit-constant check
//! and completion audit passes, 1 when any fails, 2 for config or usage
//! problems.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mclt::config::{self, ConfigError};
use mclt::experiment::run_experiment;
use mclt::output::write_outputs;

#[derive(Parser)]
#[command(
    name = "mclt",
    version,
    about = "Martingale CLT laboratory: simulated distances to normal versus bound kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and write results.csv, summary.json, audits.json.
    Run {
        /// TOML experiment configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides out_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; overrides master_seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread count; overrides workers from the config.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Validate a configuration file without running anything.
    Check {
        /// TOML experiment configuration.
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_OK: u8 = 0;
const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Check { config } => match config::load(&config) {
            Ok(cfg) => {
                println!(
                    "config ok: {} families x {} grid points, m = {}, master_seed = {}",
                    cfg.families.len(),
                    cfg.n_grid.len(),
                    cfg.m,
                    cfg.master_seed
                );
                ExitCode::from(EXIT_OK)
            }
            Err(err) => usage_error(err),
        },
        Command::Run {
            config,
            out,
            seed,
            workers,
        } => run(config, out, seed, workers),
    }
}

fn usage_error(err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(EXIT_USAGE)
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> ExitCode {
    let mut cfg = match config::load(&config) {
        Ok(cfg) => cfg,
        Err(err) => return usage_error(err),
    };
    cfg.apply_overrides(out, seed, workers);
    let Some(out_dir) = cfg.out_dir.clone() else {
        return usage_error(ConfigError::NoOutDir);
    };
    if let Some(workers) = cfg.workers {
        // Results do not depend on the pool size; this only bounds CPU use.
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            return usage_error(format!("cannot size the worker pool: {err}"));
        }
    }
    let report = match run_experiment(&cfg) {
        Ok(report) => report,
        Err(err) => return usage_error(err),
    };
    if let Err(err) = write_outputs(&report, &out_dir) {
        return usage_error(format!("cannot write {}: {err}", out_dir.display()));
    }
    for check in &report.checks {
        let verdict = if check.pass {
            "PASS".to_string()
        } else {
            format!("FAIL ({})", check.detail)
        };
        println!(
            "check {} {} n={}: {}",
            check.name, check.family, check.n, verdict
        );
    }
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    println!(
        "{} cells, {} checks, {} failed; reports in {}",
        report.rows.len(),
        report.checks.len(),
        failed,
        out_dir.display()
    );
    if report.all_pass() {
        ExitCode::from(EXIT_OK)
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}
