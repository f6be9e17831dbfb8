mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "openstab", version, about = "Local stabilization of nonlinear control systems via linear openness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Openness, spectral and transversality report at a point.
    Analyze {
        /// System definition file.
        file: PathBuf,
        /// Point `x1..xn u1..um`; defaults to the origin.
        #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        point: Vec<f64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a stabilizing feedback law.
    Synthesize(SynthesizeArgs),
    /// Simulate the closed loop and fit an exponential envelope.
    Simulate(SimulateArgs),
    /// Print the JSON schema of a report.
    Schema {
        #[arg(value_enum)]
        kind: SchemaKind,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Auto,
    T1,
    St1,
    Qt1,
    Shift,
    Composition,
    Fixpoint,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemaKind {
    Analysis,
    Law,
    Fit,
}

#[derive(clap::Args, Debug)]
pub struct SynthesizeArgs {
    pub file: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: Method,
    /// Fixed-point grid radius.
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    /// Fixed-point grid cells per axis.
    #[arg(long, default_value_t = 64)]
    pub grid_n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,
    /// Fixed-point stopping tolerance on `damping·‖u − Tu‖∞`.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Fixed-point grid box, `lo:hi` per axis separated by commas.
    #[arg(long = "box", allow_hyphen_values = true)]
    pub grid_box: Option<String>,
    /// Constant initial control for the fixed-point iteration.
    #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
    pub u0: Vec<f64>,
    /// State of the shift point (method `shift`).
    #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
    pub x1: Vec<f64>,
    /// Control of the shift point (method `shift`).
    #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
    pub u1: Vec<f64>,
    /// Write the law JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the grid values of a fixed-point law as CSV.
    #[arg(long)]
    pub grid_csv: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct SimulateArgs {
    pub file: PathBuf,
    #[arg(long)]
    pub law: PathBuf,
    /// Radius of the ball of initial states.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Number of random directions.
    #[arg(long, default_value_t = 12)]
    pub samples: usize,
    #[arg(long, default_value_t = 8.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
    /// Single initial state, in the coordinates the law acts on.
    #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Vec<f64>,
    /// Directory for one CSV per trajectory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
    /// Write the fit JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze { file, point, out } => commands::analyze(&file, &point, out.as_deref()),
        Command::Synthesize(args) => commands::synthesize(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Schema { kind } => {
            println!("{}", commands::schema(kind));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("openstab: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
