mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{InvariantFailure, Report};
use config::ConfigError;
use semiclassical::Error;

#[derive(Parser)]
#[command(name = "scprop", version, about = "Semiclassical wavepacket propagation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV; sibling files get suffixes. Stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every invariant check and report measured residuals.
    Validate {
        /// Flip the sign in the Siegel action (mutation fixture).
        #[arg(long, hide = true)]
        inject_siegel_sign_flip: bool,
    },
    /// Error against the oracle for each hbar, with fitted slopes.
    SweepH,
    /// Time to reach the error threshold against |log hbar|.
    Breakdown,
    /// Segmented propagation, hybrid switch and leading-order hybrid steps.
    HybridDemo,
    /// Propagate a coherent state and dump the result.
    Propagate,
    /// Lyapunov rate, dynamical rates and time thresholds.
    Lyapunov,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if e.downcast_ref::<InvariantFailure>().is_some() {
        return 1;
    }
    if let Some(err) = e.downcast_ref::<Error>() {
        let mut err = err;
        while let Error::Stage { source, .. } = err {
            err = source;
        }
        return match err {
            Error::UnknownModel(_) | Error::InvalidParameters { .. } | Error::InvalidInput(_) | Error::Io(_) => 2,
            _ => 3,
        };
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    3
}

fn write_report(report: &Report, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, &report.main)?;
            for (suffix, text) in &report.files {
                std::fs::write(output::sibling(path, suffix), text)?;
            }
        }
        None => print!("{}", report.main),
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let needs_config = !matches!(cli.command, Command::Validate { .. });
    let loaded = if needs_config {
        let path = cli.config.as_deref().ok_or_else(|| ConfigError("--config is required".into()))?;
        Some(config::load(path, matches!(cli.command, Command::SweepH | Command::Breakdown))?)
    } else {
        None
    };
    let seed = cli.seed.or_else(|| loaded.as_ref().and_then(|l| l.config.seed)).unwrap_or(0);
    let out = cli.out.clone().or_else(|| loaded.as_ref().and_then(|l| l.config.output.clone()));
    if cli.workers == 0 {
        return Err(ConfigError("--workers must be at least 1".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build()?;
    let report = pool.install(|| -> anyhow::Result<Report> {
        match (&cli.command, &loaded) {
            (Command::Validate { inject_siegel_sign_flip }, _) => Ok(commands::validate(seed, if *inject_siegel_sign_flip { -1.0 } else { 1.0 })),
            (Command::SweepH, Some(l)) => commands::sweep_h(l, seed),
            (Command::Breakdown, Some(l)) => commands::breakdown(l, seed),
            (Command::HybridDemo, Some(l)) => commands::hybrid_demo(l, seed),
            (Command::Propagate, Some(l)) => commands::propagate(l, seed),
            (Command::Lyapunov, Some(l)) => commands::lyapunov(l, seed),
            _ => unreachable!("config loaded above"),
        }
    })?;
    write_report(&report, out.as_deref())?;
    match report.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scprop: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
