use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bim_core::harness::metrics::read_csv;
use bim_core::harness::probe::write_probe_csv;
use bim_core::harness::verify::{render, run_suite, Suite};
use bim_core::harness::{energy_report, probe_stdp_window, resume_online, train_online, Checkpoint, CsvSink, RunConfig};
use bim_core::{BimError, Execution};

#[derive(Parser)]
#[command(name = "bim", version, about = "Online-trained selective SSM with a spiking readout")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train online and write metrics.csv plus checkpoints into the output directory.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
    },
    /// Run the built-in verification suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        /// Run every loop on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Weight change against pre/post spike offset, as CSV.
    ProbeStdp {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated offsets in ms, e.g. "-20,-5,0,5,20".
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Event-driven cost summary of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

enum Failure {
    Error(BimError),
    Verification,
}

impl From<BimError> for Failure {
    fn from(e: BimError) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn train(config: Option<&Path>, out: &Path, resume: Option<&Path>) -> Result<(), Failure> {
    std::fs::create_dir_all(out)?;
    let metrics = BufWriter::new(File::create(out.join("metrics.csv"))?);
    let mut sink = CsvSink::new(metrics)?;
    let outcome = match (config, resume) {
        (_, Some(ckpt)) => {
            let ckpt = Checkpoint::load(ckpt)?;
            std::fs::write(out.join("config.toml"), &ckpt.config_text)?;
            resume_online(&ckpt, &mut sink, Some(out))
        }
        (Some(path), None) => {
            let cfg = RunConfig::load(path)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
            train_online(&cfg, &mut sink, Some(out))
        }
        (None, None) => return Err(BimError::Config("train needs --config or --resume".into()).into()),
    };
    sink.into_inner()?;
    let outcome = outcome?;
    eprintln!(
        "trained to step {}, peak state {} bytes",
        outcome.steps, outcome.peak_state_bytes
    );
    Ok(())
}

fn verify(suite: Suite, sequential: bool) -> Result<(), Failure> {
    let exec = if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let rows = run_suite(suite, exec)?;
    print!("{}", render(&rows));
    let failed = rows.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", rows.len());
        return Err(Failure::Verification);
    }
    Ok(())
}

fn parse_grid(grid: &str) -> Result<Vec<f64>, BimError> {
    grid.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| BimError::Config(format!("grid value {s:?}: {e}")))
        })
        .collect()
}

fn probe(config: &Path, grid: &str, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let table = probe_stdp_window(&cfg.stdp(), &cfg.hybrid(), cfg.dt, &parse_grid(grid)?)?;
    match out {
        Some(path) => write_probe_csv(&table, BufWriter::new(File::create(path)?))?,
        None => write_probe_csv(&table, std::io::stdout().lock())?,
    }
    Ok(())
}

fn report(run: &Path) -> Result<(), Failure> {
    let log = read_csv(BufReader::new(File::open(run.join("metrics.csv"))?))?;
    let r = energy_report(&log)?;
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(r.to_text().as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, out, resume } => train(config.as_deref(), out, resume.as_deref()),
        Command::Verify { suite, sequential } => verify(*suite, *sequential),
        Command::ProbeStdp { config, grid, out } => probe(config, grid, out.as_deref()),
        Command::Report { run } => report(run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(3),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            match e {
                BimError::Numeric(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
