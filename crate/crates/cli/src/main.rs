use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cuspflow_cli::commands::{potential_command, report_command, run_command, validate, Failure};

#[derive(Parser)]
#[command(name = "cuspflow", version, about = "Normalized Ricci flow on punctured tori with cusp ends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RhoModeArg {
    #[value(alias = "area_preserving")]
    AreaPreserving,
    Explicit,
    Unnormalized,
}

impl RhoModeArg {
    fn key(self) -> &'static str {
        match self {
            Self::AreaPreserving => "area_preserving",
            Self::Explicit => "explicit",
            Self::Unnormalized => "unnormalized",
        }
    }
}

#[derive(clap::Args)]
struct Overrides {
    /// Override a config key, e.g. `--set flow.t_final=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set flow.rho_mode=...`.
    #[arg(long, value_enum)]
    rho_mode: Option<RhoModeArg>,
    /// Shorthand for `--set output.directory=...`.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

impl Overrides {
    fn list(&self) -> Vec<String> {
        let mut v = self.set.clone();
        if let Some(m) = self.rho_mode {
            v.push(format!("flow.rho_mode={}", m.key()));
        }
        if let Some(d) = &self.output {
            v.push(format!("output.directory={:?}", d.display().to_string()));
        }
        v
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the grid and run the operator self-tests.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the flow and write time series, summary, checkpoint and plots.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve for the potential of a checkpointed metric.
    Potential {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render a markdown report from a run directory.
    Report { dir: PathBuf },
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("error: {:#}", f.error());
    ExitCode::from(f.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config, overrides } => match validate(&config, &overrides.list()) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => {
                eprintln!("error: self-tests failed");
                ExitCode::from(1)
            }
            Err(f) => fail(f),
        },
        Command::Run { config, overrides } => match run_command(&config, &overrides.list()) {
            Ok(dir) => {
                println!("{}", dir.display());
                ExitCode::SUCCESS
            }
            Err(f) => fail(f),
        },
        Command::Potential { config, checkpoint, overrides } => {
            match potential_command(&config, &overrides.list(), &checkpoint) {
                Ok(dir) => {
                    println!("{}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(f) => fail(f),
            }
        }
        Command::Report { dir } => match report_command(&dir) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(f) => fail(f),
        },
    }
}
