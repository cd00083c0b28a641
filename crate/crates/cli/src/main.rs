use clap::{Args, Parser, Subcommand};
use rodlab::runner::{self, error_record, ExitStatus, RunOptions, RunReport};
use rodlab::scenario::{parse_scenario, Scenario};
use rodlab::RodError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Rigid-rod polymer kinetics: closure ODE, limit cycles, particle
/// ensembles and the acceptance suite.
#[derive(Parser)]
#[command(name = "rodlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario once per value of one parameter.
    Sweep {
        scenario: PathBuf,
        /// `pe`, `a`, `n_conc`, ... for model parameters, `section.key` otherwise.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance suite with the scenario's name, seed and output directory.
    Suite {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Overrides RODLAB_OUTPUT_DIR and the scenario's `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides RODLAB_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Recording stride for ode, sde and entropy experiments.
    #[arg(long)]
    stride: Option<usize>,
}

impl Common {
    fn options(&self) -> Result<RunOptions, RodError> {
        RunOptions {
            output_dir: self.output_dir.clone(),
            threads: self.threads,
            seed: self.seed,
            stride: self.stride,
        }
        .with_env()
    }
}

fn load(path: &Path) -> Result<Scenario, RodError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RodError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        RodError::Config(msg) => RodError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn print_report(r: &RunReport) {
    for o in &r.outcomes {
        println!("{}", o.line());
    }
    match &r.error {
        Some(msg) => eprintln!("{}: {} ({msg})", r.name, r.status.as_str()),
        None => println!(
            "{}: {} in {:.2} s, {} files in {}",
            r.name,
            r.status.as_str(),
            r.wall_seconds,
            r.artifacts.len(),
            r.output_dir.display()
        ),
    }
}

fn dispatch(cli: Cli) -> Result<ExitStatus, RodError> {
    match cli.command {
        Command::Run { scenario, common } => {
            let report = runner::execute(&load(&scenario)?, &common.options()?)?;
            print_report(&report);
            Ok(report.status)
        }
        Command::Suite { scenario, common } => {
            let s = runner::as_suite(&load(&scenario)?)?;
            let report = runner::execute(&s, &common.options()?)?;
            print_report(&report);
            Ok(report.status)
        }
        Command::Sweep {
            scenario,
            axis,
            values,
            common,
        } => {
            let report = runner::sweep(&load(&scenario)?, &axis, &values, &common.options()?)?;
            for (v, r) in &report.rows {
                let note = r.error.as_deref().unwrap_or("");
                println!("{axis}={v}: {} {note}", r.status.as_str());
            }
            println!("combined results in {}", report.combined.display());
            Ok(report.status)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match dispatch(cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", error_record(&e));
            ExitStatus::of_error(&e)
        }
    };
    ExitCode::from(status.code() as u8)
}
