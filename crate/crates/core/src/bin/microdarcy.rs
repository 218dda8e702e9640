//! Homogenization pipeline for micropolar flow through a periodic thin
//! porous medium: cell problems, effective permeabilities, the macroscopic
//! Darcy problem, and validation suites.

use clap::{Args, Parser, Subcommand, ValueEnum};
use microdarcy::app::{self, AppError, OutputFormats};
use microdarcy::config::RunConfig;
use microdarcy::report::RunReport;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "microdarcy", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the six reference-cell problems and write the permeability file
    Cell(CommonArgs),
    /// Solve the macroscopic Darcy problem from an existing permeability file
    Darcy(DarcyArgs),
    /// Run the cell stage (cached) followed by the Darcy stage
    Pipeline(DarcyArgs),
    /// Run the unfolding identity suite and, with --full, the resolved sweep
    Validate(ValidateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// output directory; defaults to the configured one
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Vtk,
    Both,
}

impl Format {
    fn formats(self) -> OutputFormats {
        match self {
            Format::Csv => OutputFormats { csv: true, vtk: false },
            Format::Vtk => OutputFormats { csv: false, vtk: true },
            Format::Both => OutputFormats { csv: true, vtk: true },
        }
    }
}

#[derive(Args)]
struct DarcyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// permeability file; defaults to <out>/permeability.toml
    #[arg(long)]
    perm: Option<PathBuf>,
    /// macro-solution formats to emit; defaults to the configured ones
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// also write a pressure/quiver plot image
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// permeability file to reuse in the resolved sweep
    #[arg(long)]
    perm: Option<PathBuf>,
    /// run the long resolved eps-sweep in addition to the quick suite
    #[arg(long)]
    full: bool,
}

fn load(common: &CommonArgs) -> Result<(RunConfig, PathBuf), AppError> {
    let config = RunConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| config.output.directory.clone());
    Ok((config, out))
}

fn print_summary(report: &RunReport) {
    for stage in &report.stages {
        println!(
            "stage {}: {} iterations, residual {:.3e}, {:.2} s",
            stage.name, stage.iterations, stage.residual, stage.wall_seconds
        );
    }
    for check in &report.checks {
        println!(
            "{} {} ({:.3e} <= {:.3e})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.value,
            check.allowed
        );
    }
    for file in &report.files {
        println!("wrote {} (sha256 {})", file.path, &file.sha256[..12]);
    }
}

fn run() -> Result<RunReport, AppError> {
    match Cli::parse().command {
        Command::Cell(args) => {
            let (config, out) = load(&args)?;
            app::cmd_cell(&config, &out)
        }
        Command::Darcy(args) => {
            let (config, out) = load(&args.common)?;
            let formats = args
                .format
                .map(Format::formats)
                .unwrap_or_else(|| OutputFormats::from_config(&config));
            app::cmd_darcy(&config, &out, args.perm.as_deref(), formats, args.plot)
        }
        Command::Pipeline(args) => {
            let (config, out) = load(&args.common)?;
            let formats = args
                .format
                .map(Format::formats)
                .unwrap_or_else(|| OutputFormats::from_config(&config));
            app::cmd_pipeline(&config, &out, args.perm.as_deref(), formats, args.plot)
        }
        Command::Validate(args) => {
            let (config, out) = load(&args.common)?;
            app::cmd_validate(&config, &out, args.full, args.perm.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(report) => {
            print_summary(&report);
            if report.all_checks_passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("error[numerics]: {} invariant check(s) failed",
                    report.checks.iter().filter(|c| !c.passed).count());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
