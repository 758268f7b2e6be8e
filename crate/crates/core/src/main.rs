use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stoch_euler::config::{Experiment, RunConfig};
use stoch_euler::experiments::{exit_code, reproduce, run_label, write_diagnostic, write_run, SWEEP_LABEL};
use stoch_euler::{Error, Result};

#[derive(Parser)]
#[command(name = "stoch-euler", version, about = "Stochastic 2D Euler flows on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Seed overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Load the kernel table from this file instead of building it.
    #[arg(long)]
    kernel_table: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    Simulate(RunArgs),
    PicardTrace(RunArgs),
    StabilitySweep(RunArgs),
    CommutatorScan(RunArgs),
    DossCheck(RunArgs),
    KernelBuild(RunArgs),
    LemmaSuite(RunArgs),
    /// One run per value of the `[sweep]` axis.
    Sweep(RunArgs),
    /// Re-run a manifest into `--out` and compare hashes.
    Reproduce {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn init_pool(workers: Option<usize>) -> Result<()> {
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::config("--workers", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::config("--workers", e.to_string()))?;
    }
    Ok(())
}

fn run(label: Option<Experiment>, args: &RunArgs) -> Result<bool> {
    init_pool(args.workers)?;
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(path) = &args.kernel_table {
        cfg.kernel.table_path = Some(path.clone());
    }
    let output = run_label(label, &cfg)?;
    let name = label.map_or(SWEEP_LABEL, Experiment::name);
    write_run(&args.out, name, &cfg, &output)?;
    for (k, v) in &output.metrics {
        println!("{k} = {v}");
    }
    for c in &output.failed_checks {
        eprintln!("check failed: {c}");
    }
    Ok(output.failed_checks.is_empty())
}

fn replay(manifest: &Path, out: &Path, workers: Option<usize>) -> Result<bool> {
    init_pool(workers)?;
    let differing = reproduce(manifest, out)?;
    for d in &differing {
        eprintln!("differs: {}", d.display());
    }
    if differing.is_empty() {
        println!("all files reproduced");
    }
    Ok(differing.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (out, result) = match &cli.command {
        Command::Reproduce { manifest, out, workers } => (out.clone(), replay(manifest, out, *workers)),
        cmd => {
            let (label, args) = match cmd {
                Command::Simulate(a) => (Some(Experiment::Simulate), a),
                Command::PicardTrace(a) => (Some(Experiment::PicardTrace), a),
                Command::StabilitySweep(a) => (Some(Experiment::StabilitySweep), a),
                Command::CommutatorScan(a) => (Some(Experiment::CommutatorScan), a),
                Command::DossCheck(a) => (Some(Experiment::DossCheck), a),
                Command::KernelBuild(a) => (Some(Experiment::KernelBuild), a),
                Command::LemmaSuite(a) => (Some(Experiment::LemmaSuite), a),
                Command::Sweep(a) => (None, a),
                Command::Reproduce { .. } => unreachable!(),
            };
            (args.out.clone(), run(label, args))
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(w) = write_diagnostic(&out, &e) {
                eprintln!("could not write diagnostic: {w}");
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
