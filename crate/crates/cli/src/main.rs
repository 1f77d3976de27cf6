use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use minv_core::fixtures::FixtureConfig;
use minv_core::OtMethod;

mod commands;
mod figures;
mod output;
mod spec;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("spec error in '{field}': {message}")]
    Spec { field: String, message: String },
    #[error("solver error during {stage}: {source}")]
    Solver {
        stage: String,
        #[source]
        source: minv_core::Error,
    },
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error("unknown figure '{0}' (expected 1, 2, 3 or 4)")]
    UnknownFigure(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn solver(stage: &str) -> impl FnOnce(minv_core::Error) -> CliError + '_ {
        move |source| CliError::Solver {
            stage: stage.to_string(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::ChecksFailed(_) => 1,
            Self::Spec { .. } | Self::UnknownFixture(_) | Self::UnknownFigure(_) => 2,
            Self::Solver { .. } | Self::Io { .. } => 3,
        }
    }
}

/// Inverse problems over probability measures.
#[derive(Debug, Parser)]
#[command(name = "minv", version)]
struct Cli {
    /// Seed for all sampled fixture data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cells per axis of parameter-space grids.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Particle count for sampled fixture data.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Transport solver: `exact` or `sinkhorn:<eps>`.
    #[arg(long, global = true, value_parser = parse_ot)]
    ot: Option<OtMethod>,
    /// Print nothing; report through the exit code only.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the problem described by a spec file.
    Solve { spec: PathBuf },
    /// Compare a fixture's solutions with its closed forms.
    Validate { fixture: String },
    /// Write the plot data for one figure.
    Figure {
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_ot(s: &str) -> Result<OtMethod, String> {
    OtMethod::parse(s).map_err(|e| e.to_string())
}

/// Command-line overrides shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub samples: Option<usize>,
    pub ot: Option<OtMethod>,
    pub quiet: bool,
}

impl Overrides {
    pub fn fixture_config(&self, seed: u64) -> FixtureConfig {
        let base = FixtureConfig::default();
        FixtureConfig {
            seed: self.seed.unwrap_or(seed),
            samples: self.samples.unwrap_or(base.samples),
            grid: self.grid.unwrap_or(base.grid),
            ..base
        }
    }

    pub fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let o = Overrides {
        seed: cli.seed,
        grid: cli.grid,
        samples: cli.samples,
        ot: cli.ot,
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::Solve { spec } => commands::solve(spec, &o),
        Command::Validate { fixture } => commands::validate(fixture, &o),
        Command::Figure { id, out } => figures::figure(id, out, &o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !o.quiet {
                eprintln!("minv: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
