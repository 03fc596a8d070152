use std::path::PathBuf;
use std::process::ExitCode;

use cikan_cli::{
    cmd_eval, cmd_generate, cmd_report, cmd_simulate, cmd_train, Arch, CliError, EvalArgs,
    GenerateArgs, Mode, ReportArgs, SimulateArgs, TrainArgs,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cikan", version, about = "Constraint-informed KAN time shift governor pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly exact-governed missions and record (features, optimal shift) samples.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
    },
    /// Train a regressor on a dataset; a comma-separated --grid-size trains a sweep.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Arch::KanBspline)]
        arch: Arch,
        #[arg(long = "grid-size", value_delimiter = ',')]
        grid_size: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fly one governed mission from the configured initial state.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "mission")]
        out: PathBuf,
    },
    /// Merge traces, histories and metrics into long-format CSVs.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, seed, out, count } => {
            cmd_generate(&GenerateArgs { config, out, seed, count })?;
        }
        Command::Train { config, dataset, arch, grid_size, seed, out, epochs } => {
            cmd_train(&TrainArgs { config, dataset, arch, grid_sizes: grid_size, out, seed, epochs })?;
        }
        Command::Eval { config, checkpoint, dataset, out } => {
            cmd_eval(&EvalArgs { config, checkpoint, dataset, out })?;
        }
        Command::Simulate { config, mode, checkpoint, seed, out } => {
            cmd_simulate(&SimulateArgs { config, mode, checkpoint, out, seed })?;
        }
        Command::Report { inputs, out } => {
            cmd_report(&ReportArgs { inputs, out })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
