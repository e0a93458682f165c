//! `nlmcmc`: config-driven experiment runner.
//!
//! Exit codes: 0 ok, 1 config or usage error, 2 a run diverged, 3 an
//! acceptance check failed.

// `!(x > 0.0)` is deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod artifacts;
mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};
use experiments::Status;

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "nlmcmc", version, about = "Nonlinear interacting-particle MCMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in the config.
    Run(RunArgs),
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Exact finite-state checks of the long-time behaviour.
    OracleSuite(RunArgs),
    /// Propagation-of-chaos bias against particle count.
    Poc(RunArgs),
    /// Unbiasedness and closed-form checks of the MMD estimator.
    MmdSelftest(RunArgs),
    /// Fixed-N auxiliary ensemble against a growing auxiliary history.
    CompareDm(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; optional for everything except `run`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, overriding `seeds` in the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Run seeds concurrently.
    #[arg(long)]
    parallel_seeds: bool,
}

fn config_failure(e: &ConfigError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(EXIT_CONFIG)
}

fn load(path: Option<&Path>, experiment: Option<&str>) -> Result<RunConfig, ExitCode> {
    match path {
        Some(p) => config::load(p, experiment).map_err(|e| config_failure(&e)),
        None => match experiment {
            Some(e) => Ok(RunConfig::defaults_for(e)),
            None => {
                eprintln!("error: `run` needs --config");
                Err(ExitCode::from(EXIT_CONFIG))
            }
        },
    }
}

fn execute(args: RunArgs, experiment: Option<&str>) -> ExitCode {
    let mut cfg = match load(args.config.as_deref(), experiment) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(seeds) = args.seeds {
        if seeds.is_empty() {
            eprintln!("error: --seeds: at least one seed is required");
            return ExitCode::from(EXIT_CONFIG);
        }
        cfg.seeds = seeds;
    }
    cfg.parallel_seeds |= args.parallel_seeds;
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let out = args.out.or_else(|| cfg.out.clone());
    match experiments::run(&cfg, out.as_deref()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Diverged) => {
            eprintln!("run diverged; artifacts written with status \"diverged\"");
            ExitCode::from(EXIT_DIVERGED)
        }
        Ok(Status::CheckFailed) => ExitCode::from(EXIT_CHECK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(a) => {
            if a.config.is_none() {
                eprintln!("error: `run` needs --config");
                return ExitCode::from(EXIT_CONFIG);
            }
            execute(a, None)
        }
        Command::Validate { config } => match config::load(&config, None) {
            Ok(cfg) => {
                println!("{}: ok ({})", config.display(), cfg.experiment);
                ExitCode::SUCCESS
            }
            Err(e) => config_failure(&e),
        },
        Command::OracleSuite(a) => execute(a, Some("oracle-suite")),
        Command::Poc(a) => execute(a, Some("poc")),
        Command::MmdSelftest(a) => execute(a, Some("mmd-selftest")),
        Command::CompareDm(a) => execute(a, Some("compare-dm")),
    }
}
