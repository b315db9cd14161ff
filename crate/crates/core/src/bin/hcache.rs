use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hybrid_cache::explorer::{run_experiment, ExperimentSpec, Mode, Overrides};
use hybrid_cache::Error;

/// Hybrid DRAM/NVM page cache models: simulation, mean-field analysis,
/// exact solutions and latency sweeps.
#[derive(Parser)]
#[command(name = "hcache", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the cache and write per-page, per-list and windowed counts.
    Simulate(Common),
    /// Integrate the occupancy ODEs from an empty cache.
    Meanfield(Common),
    /// Solve for the steady state of the occupancy ODEs.
    FixedPoint(Common),
    /// Exact stationary distribution of a tiny instance.
    Oracle(Common),
    /// Average request latency from the fixed point.
    Latency(Common),
    /// Compare simulation against the fixed point.
    Validate(Common),
    /// Evaluate `run.point_mode` over the `[[sweep]]` cross-product.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated simulation seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    window: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write a gnuplot script describing the output columns.
    #[arg(long)]
    gnuplot: bool,
    /// Write the full occupancy matrix (fixed-point mode).
    #[arg(long)]
    pi: bool,
}

fn run(mode: Mode, args: Common) -> Result<(), Error> {
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::from_file(path)?,
        None => ExperimentSpec::default(),
    };
    spec.mode = Some(mode);
    spec.apply(&Overrides {
        seeds: args.seed,
        steps: args.steps,
        window: args.window,
        burn_in: args.burn_in,
        tol: args.tol,
        jobs: args.jobs,
        pi_csv: args.pi,
    });
    let summary = run_experiment(&spec, &args.out, args.gnuplot)?;
    println!("{}", summary.columns.join(","));
    for row in &summary.rows {
        println!("{}", row.join(","));
    }
    eprintln!(
        "wrote {} files for {} point(s) to {}",
        summary.outputs.len(),
        summary.points,
        summary.out_dir.display()
    );
    Ok(())
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Meanfield(a) => (Mode::Meanfield, a),
        Command::FixedPoint(a) => (Mode::FixedPoint, a),
        Command::Oracle(a) => (Mode::Oracle, a),
        Command::Latency(a) => (Mode::Latency, a),
        Command::Validate(a) => (Mode::Validate, a),
        Command::Sweep(a) => (Mode::Sweep, a),
    };
    match run(mode, args).with_context(|| format!("{} failed", mode.name())) {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            Ok(ExitCode::from(code as u8))
        }
    }
}
