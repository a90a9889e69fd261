use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cpe_core::degiorgi::DecayParams;
use cpe_core::harness::{self, Outcome, RunConfig};
use cpe_core::{Error, Result};

/// Numerical lab for the regularized compressible primitive equations.
#[derive(Debug, Parser)]
#[command(name = "cpelab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Single trajectory with snapshots and diagnostics.csv.
    Run {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// The full eps ladder.
    Sweep {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute the diagnostics CSV from stored snapshots.
    Diagnose {
        /// Directory holding `*.bin` snapshots.
        #[arg(short, long)]
        snapshots: PathBuf,
        /// Config of the run, for the mass-balance source switch.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value = "diagnostics.csv")]
        out: PathBuf,
    },
    /// Windowed Picard iteration of the small-mode Galerkin system.
    GalerkinDemo {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Vanishing-level certificate from a CSV of (k, a_k).
    Degiorgi {
        input: PathBuf,
        /// Decay constants; fitted from the data when omitted.
        #[arg(long, requires_all = ["alpha", "beta"])]
        c: Option<f64>,
        #[arg(long, requires_all = ["c", "beta"])]
        alpha: Option<f64>,
        #[arg(long, requires_all = ["c", "alpha"])]
        beta: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Validate a config and print E0.
    InitCheck {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
}

fn load(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cmd: &Cmd) -> Result<Outcome> {
    match cmd {
        Cmd::Run { config, out } => harness::cmd_run(&load(config)?, out),
        Cmd::Sweep { config, out } => harness::cmd_sweep(&load(config)?, out),
        Cmd::Diagnose { snapshots, config, out } => {
            let cfg = load(config)?;
            harness::cmd_diagnose(snapshots, cfg.run.singular_source, out)
        }
        Cmd::GalerkinDemo { config, out } => harness::cmd_galerkin_demo(&load(config)?, out),
        Cmd::Degiorgi {
            input,
            c,
            alpha,
            beta,
            config,
        } => {
            let params = match (c, alpha, beta) {
                (Some(c), Some(a), Some(b)) => Some(DecayParams::new(*c, *a, *b).map_err(|e| Error::Config(e.to_string()))?),
                _ => load(config)?.degiorgi,
            };
            harness::cmd_degiorgi(Path::new(input), params)
        }
        Cmd::InitCheck { config } => harness::cmd_init_check(&load(config)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.cmd) {
        Ok(o) => {
            print!("{}", o.summary);
            ExitCode::from(o.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
