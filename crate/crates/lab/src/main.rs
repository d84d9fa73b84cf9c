//! Command-line front end. Exit codes: 0 success, 1 failed comparison,
//! 2 config error, 3 numerical failure. Errors print one JSON object per
//! line on standard error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use quantlab::compare::{compare_tables, load_csv};
use quantlab::config::{Experiment, ResolvedConfig};
use quantlab::error::LabError;

#[derive(Parser)]
#[command(name = "quantlab", version, about = "Numerical studies of scalar quantization surrogates")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mutual information curves for a list of forward calculations
    MutualInfo(RunArgs),
    /// Trained-synthesis distortion against the rounding baseline
    DistortionSim(RunArgs),
    /// Expected-rate error over an entropy-model parameter grid
    RateSurface(RunArgs),
    /// Bias and variance of single-sample rate-gradient estimates
    GradStats(RunArgs),
    /// Information carried by a perfectly correlated latent pair
    #[command(name = "mi-2d")]
    Mi2d(RunArgs),
    /// Noisy-value entropy, rounded-value entropy, and matched-model rate
    EntropyCompare(RunArgs),
    /// Rate-distortion training on the unit Laplace source
    LaplaceRd(RunArgs),
    /// Post-training loss as a function of the scale lower bound
    LowerBoundSweep(RunArgs),
    /// Compare two result CSVs column by column
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags below override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (default: <experiment>.csv)
    #[arg(long)]
    out: Option<String>,
    /// Also write a JSON mirror of the table
    #[arg(long)]
    json: bool,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Print the resolved config and exit
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct CompareArgs {
    table_a: PathBuf,
    table_b: PathBuf,
    /// Per-cell absolute tolerance
    #[arg(long, default_value_t = 0.0)]
    abs_tol: f64,
    /// Per-cell relative tolerance (scaled by the larger magnitude)
    #[arg(long, default_value_t = 0.0)]
    rel_tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8, LabError> {
    match cmd {
        Command::MutualInfo(a) => run_experiment(Experiment::MutualInfo, a),
        Command::DistortionSim(a) => run_experiment(Experiment::DistortionSim, a),
        Command::RateSurface(a) => run_experiment(Experiment::RateSurface, a),
        Command::GradStats(a) => run_experiment(Experiment::GradStats, a),
        Command::Mi2d(a) => run_experiment(Experiment::Mi2d, a),
        Command::EntropyCompare(a) => run_experiment(Experiment::EntropyCompare, a),
        Command::LaplaceRd(a) => run_experiment(Experiment::LaplaceRd, a),
        Command::LowerBoundSweep(a) => run_experiment(Experiment::LowerBoundSweep, a),
        Command::Compare(a) => run_compare(a),
    }
}

fn run_experiment(experiment: Experiment, args: RunArgs) -> Result<u8, LabError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    }
    let resolved =
        ResolvedConfig::resolve(experiment, args.config.as_deref(), args.seed, args.out)?;
    if args.print_config {
        print!("{}", resolved.to_toml());
        return Ok(0);
    }
    let start = Instant::now();
    let mut table = resolved.run()?;
    table.metadata.wall_time_s = start.elapsed().as_secs_f64();
    let out = Path::new(&resolved.out);
    table.write_csv(out)?;
    table.write_meta(out)?;
    if args.json {
        table.write_json(&out.with_extension("json"))?;
    }
    println!(
        "{}: {} rows -> {} ({:.1}s)",
        resolved.experiment.name(),
        table.rows.len(),
        out.display(),
        table.metadata.wall_time_s
    );
    Ok(0)
}

fn run_compare(args: CompareArgs) -> Result<u8, LabError> {
    let a = load_csv(&args.table_a)?;
    let b = load_csv(&args.table_b)?;
    let report = compare_tables(&a, &b, args.abs_tol, args.rel_tol)?;
    print!("{}", report.render());
    Ok(if report.pass() { 0 } else { 1 })
}
