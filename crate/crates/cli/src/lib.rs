//! Command-line orchestration: dataset generation, pipeline runs, occlusion
//! probability sweeps, and heatmap rendering.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub mod config;
pub mod gen;
pub mod render;
pub mod run;
pub mod sweep;

// seed salts for the independent RNG streams of one run
pub(crate) const SALT_MODEL: u64 = 0x4D;
pub(crate) const SALT_SAMPLE_BASE: u64 = 0x5000;
pub(crate) const SALT_CLUSTERS: u64 = 0xC1;
pub(crate) const SALT_INPUT: u64 = 0x15;
pub(crate) const SALT_ENCODER: u64 = 0xE5;
pub(crate) const SALT_SWEEP_BASE: u64 = 0xE000;

/// Errors split by exit code: configuration problems exit with 2, runtime
/// failures with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Run(m) => write!(f, "{m}"),
        }
    }
}

impl From<xattn_core::Error> for CliError {
    fn from(e: xattn_core::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "xattn",
    version,
    about = "Cross-attention analysis on synthetic encoder-decoder models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate planted-alignment model weights, inputs and references
    Gen(gen::GenArgs),
    /// Decode, attribute and correlate every sample of a dataset
    Run(run::RunArgs),
    /// Sweep the encoder occlusion probability and tabulate the results
    SweepPh(sweep::SweepArgs),
    /// Render an exported map or spectrogram as a PGM/SVG heatmap
    Render(render::RenderArgs),
}

/// Installs a dedicated worker pool when a thread count is requested;
/// `workers = 0` keeps the default pool. Results are identical either way.
pub(crate) fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool")
            .install(f)
    }
}

pub fn cli_main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => gen::execute(args),
        Command::Run(args) => run::execute(args),
        Command::SweepPh(args) => sweep::execute(args),
        Command::Render(args) => render::execute(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
