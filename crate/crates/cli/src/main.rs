//! Command line driver: `run` executes one trajectory, `sweep` the
//! vanishing-viscosity family, `refine` the time-step refinement family, and
//! `verify` re-checks a written trajectory against the weak-solution
//! conditions. Exit codes: 0 success, 2 validation, 3 step failure,
//! 4 verification failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "larche", version, about = "Phase separation coupled with damage: \
incremental minimization solver and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one trajectory and write diagnostics plus snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for randomized initial-field presets.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for family members (single runs are sequential).
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Write every k-th node snapshot (the last node is always written).
        #[arg(long)]
        snapshot_stride: Option<usize>,
    },
    /// Run the decreasing-viscosity family and report the eight uniform
    /// diagnostics.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Comma-separated viscosities, overriding the [sweep] section.
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        snapshot_stride: Option<usize>,
    },
    /// Run the step-count refinement family and report the a-priori ratio
    /// bands.
    Refine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Comma-separated step counts, overriding the [sweep] section.
        #[arg(long)]
        m_list: Option<String>,
        #[arg(long)]
        snapshot_stride: Option<usize>,
    },
    /// Re-check a written trajectory directory against the weak-solution
    /// conditions.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_f64_list(spec: &str) -> Result<Vec<f64>, commands::CommandError> {
    spec.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| commands::CommandError::Validation(format!("bad number `{t}`")))
        })
        .collect()
}

fn parse_usize_list(spec: &str) -> Result<Vec<usize>, commands::CommandError> {
    spec.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| commands::CommandError::Validation(format!("bad integer `{t}`")))
        })
        .collect()
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    snapshot_stride: Option<usize>,
) -> Result<config::Resolved, commands::CommandError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        commands::CommandError::Validation(format!("cannot read {}: {e}", path.display()))
    })?;
    let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
    let mut resolved = config::parse_config(&text, base, seed)
        .map_err(|e| commands::CommandError::Validation(e.to_string()))?;
    if let Some(stride) = snapshot_stride {
        resolved.snapshot_stride = stride.max(1);
    }
    Ok(resolved)
}

fn dispatch(cli: Cli) -> Result<(), commands::CommandError> {
    match cli.command {
        Command::Run { config, out, seed, threads: _, snapshot_stride } => {
            let resolved = load_config(&config, seed, snapshot_stride)?;
            commands::cmd_run(&resolved, &out)
        }
        Command::Sweep { config, out, seed, threads, eps, snapshot_stride } => {
            let resolved = load_config(&config, seed, snapshot_stride)?;
            let eps = eps.map(|s| parse_f64_list(&s)).transpose()?;
            commands::cmd_sweep(&resolved, &out, eps, threads)
        }
        Command::Refine { config, out, seed, threads, m_list, snapshot_stride } => {
            let resolved = load_config(&config, seed, snapshot_stride)?;
            let m_list = m_list.map(|s| parse_usize_list(&s)).transpose()?;
            commands::cmd_refine(&resolved, &out, m_list, threads)
        }
        Command::Verify { out } => commands::cmd_verify(&out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
