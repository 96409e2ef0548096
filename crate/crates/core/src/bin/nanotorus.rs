use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nanotorus::config::{SweepSpec, Table};
use nanotorus::sweep::{self, SweepError};

/// Transport through a carbon nanotorus with two lateral metallic leads.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Total density of states over the energy grid.
    Dos(RunArgs),
    /// Transmission over the energy grid.
    Transmission(RunArgs),
    /// Source–drain current for every bias.
    Current(RunArgs),
    /// Transmission versus lead opening angle.
    AngleScan(RunArgs),
    /// Current versus axial field.
    FluxScan(RunArgs),
    /// Plateaus and flux periods from tables already in the output directory.
    Analyze(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Sweep configuration (`key = value` lines); defaults apply without it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Assert that the run draws no random numbers (none ever are).
    #[arg(long)]
    seedless: bool,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_HARD: u8 = 4;

fn load(args: &RunArgs) -> Result<SweepSpec, String> {
    match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            SweepSpec::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
        }
        None => Ok(SweepSpec::default()),
    }
}

fn run(table: Table, args: &RunArgs) -> ExitCode {
    let mut spec = match load(args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    spec.outputs = vec![table];
    if args.seedless {
        log::info!("seedless run: no random numbers are drawn");
    }
    match sweep::run_sweep(&spec, &args.out, args.workers) {
        Ok(manifest) => {
            for f in &manifest.files {
                println!("{} rows -> {}", f.rows, f.path.display());
            }
            if manifest.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} of {} parameter tuples failed; see manifest.txt", manifest.failures.len(), manifest.tuples);
                let code = if manifest.failures.len() == manifest.tuples { EXIT_HARD } else { EXIT_PARTIAL };
                ExitCode::from(code)
            }
        }
        Err(SweepError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_HARD)
        }
    }
}

fn analyze(args: &RunArgs) -> ExitCode {
    let spec = match load(args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match sweep::analyze_outputs(&spec, &args.out) {
        Ok(report) => {
            print!("{report}");
            let path = args.out.join("analysis.txt");
            if let Err(e) = fs::write(&path, &report) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(EXIT_HARD);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Dos(a) => run(Table::Dos, a),
        Command::Transmission(a) => run(Table::Transmission, a),
        Command::Current(a) => run(Table::Current, a),
        Command::AngleScan(a) => run(Table::AngleScan, a),
        Command::FluxScan(a) => run(Table::FluxScan, a),
        Command::Analyze(a) => analyze(a),
    }
}
