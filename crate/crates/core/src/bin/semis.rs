use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semis::experiment::{fem_command, read_jsonl, report_command, run_command, Algorithm, RunConfig};
use semis::model::Benchmark;
use semis::Error;

#[derive(Parser)]
#[command(name = "semis", version, about = "Bayesian evidence and posterior sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run repeated experiments and write one JSON record per repetition.
    Run(RunArgs),
    /// Aggregate JSON records into a CSV report and a printed table.
    Report {
        /// Records file (JSON Lines).
        input: PathBuf,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identify a damage pattern on the shear-building demo and write the damage CSV.
    Fem(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<Benchmark>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Samples per level.
    #[arg(long)]
    n: Option<usize>,
    /// Target acceptance (SeMIS) or level probability (SuS).
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_levels: Option<usize>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Run the shear-building demo instead of a benchmark.
    #[arg(long)]
    fem: bool,
    /// Damage pattern for the shear-building demo.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=2))]
    pattern: Option<u8>,
    /// Scale of the measurement-noise covariance for the shear-building data.
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Include wall-clock time in records.
    #[arg(long)]
    timing: bool,
    /// Output path (records for `run`, damage CSV for `fem`); standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write resampled posterior draws as CSV.
    #[arg(long)]
    dump_posterior: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        if self.dim.is_some() {
            c.dim = self.dim;
        }
        if self.n.is_some() {
            c.n = self.n;
        }
        if self.workers.is_some() {
            c.workers = self.workers;
        }
        if let Some(v) = self.example {
            c.example = Some(v);
        }
        if let Some(v) = self.algorithm {
            c.algorithm = v;
        }
        if let Some(v) = self.p {
            c.p = v;
        }
        if let Some(v) = self.reps {
            c.reps = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.max_levels {
            c.max_levels = v;
        }
        if let Some(v) = self.noise_scale {
            c.noise_cov_scale = v;
        }
        if self.pattern.is_some() {
            c.fem_pattern = self.pattern;
        }
        if self.fem && c.fem_pattern.is_none() {
            c.fem_pattern = Some(1);
        }
        c.timing |= self.timing;
        Ok(c)
    }
}

fn writer(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn fem(args: &RunArgs) -> Result<(), Error> {
    let config = args.config()?;
    let pattern = config.fem_pattern.unwrap_or(1);
    let report = fem_command(&config, pattern)?;
    eprintln!("pattern {pattern}: ln z = {:.3} (pattern 0: {:.3})", report.ln_z, report.baseline_ln_z);
    let mut out = writer(args.out.as_deref())?;
    out.write_all(report.to_csv().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), Error> {
    if args.fem {
        return fem(args);
    }
    let config = args.config()?;
    let mut out = writer(args.out.as_deref())?;
    let mut dump = match &args.dump_posterior {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let records = run_command(&config, &mut out, dump.as_mut().map(|d| d as &mut dyn Write))?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} repetitions failed", records.len());
    }
    Ok(())
}

fn report(input: &Path, out: Option<&Path>) -> Result<(), Error> {
    let records = read_jsonl(BufReader::new(File::open(input)?))?;
    let report = report_command(&records)?;
    match out {
        Some(path) => {
            std::fs::write(path, report.to_csv())?;
            print!("{}", report.to_table());
        }
        None => {
            print!("{}", report.to_csv());
            eprint!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Fem(args) => fem(args),
        Command::Report { input, out } => report(input, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::InvalidInput(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
