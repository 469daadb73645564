//! `persistkit` — benchmark and crash-test driver.
//!
//! Verbs: `bench workload`, `bench flush-scaling`, `bench granularity`,
//! `bench reconstruct`, and `crashtest sweep`. Every command prints its CSV
//! to stdout and optionally writes the same rows to `--csv PATH`. File-backed
//! regions live under `PERSISTKIT_REGION_DIR` (default: the system temp
//! directory) and are removed after each run.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use persistkit::bench::{
    run_flush_scaling, run_granularity_bench, run_reconstruction_bench, run_workload, write_csv,
    Backend, BenchConfig, GranularityRow, ReconstructRow, ScalingRow, WorkloadRow,
};
use persistkit::harness::{sweep_crash_points, Tuning, WorkloadSpec};
use persistkit::workload::{OpMix, Structure};
use persistkit::{FencePolicy, Mode};

#[derive(Parser)]
#[command(
    name = "persistkit",
    version,
    about = "Partly-persistent structure benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Timing and flush-count benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Crash-injection verification.
    #[command(subcommand)]
    Crashtest(CrashtestCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Timed operation mix over a pre-populated structure.
    Workload(WorkloadArgs),
    /// Append-only run flushing only a fraction of the nodes.
    FlushScaling(FlushScalingArgs),
    /// Sub-line flush sizes against whole-line payloads.
    Granularity(GranularityArgs),
    /// Crash a populated structure and time its reconstruction.
    Reconstruct(ReconstructArgs),
}

#[derive(Subcommand)]
enum CrashtestCommand {
    /// Crash at every operation boundary and verify recovery.
    Sweep(SweepArgs),
}

fn parse_structure(s: &str) -> persistkit::Result<Structure> {
    Structure::from_str(s)
}

fn parse_mode(s: &str) -> persistkit::Result<Mode> {
    Mode::from_str(s)
}

fn parse_mix(s: &str) -> persistkit::Result<OpMix> {
    OpMix::from_str(s)
}

fn parse_backend(s: &str) -> persistkit::Result<Backend> {
    Backend::from_str(s)
}

fn parse_fence(s: &str) -> persistkit::Result<FencePolicy> {
    FencePolicy::from_str(s)
}

#[derive(Args)]
struct WorkloadArgs {
    /// Structure under test: list, tree, or hashmap.
    #[arg(long, value_parser = parse_structure, default_value = "list")]
    structure: Structure,
    /// Persistence mode: full, partly, or partly-ckpt.
    #[arg(long, value_parser = parse_mode, default_value = "partly")]
    mode: Mode,
    /// Measured operations.
    #[arg(long, default_value_t = 1_000_000)]
    ops: u64,
    /// Entries inserted before measurement begins.
    #[arg(long, default_value_t = 2_000_000)]
    init: u64,
    /// Operation mix: insert-only, delete-only, or A:B inserts to deletes.
    #[arg(long, value_parser = parse_mix, default_value = "1:1")]
    mix: OpMix,
    /// Trace seed; identical seeds reproduce identical traces.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Tree reconstruction bucket size.
    #[arg(long, default_value_t = 19)]
    bucket_size: usize,
    /// Hashmap load factor.
    #[arg(long, default_value_t = 0.75)]
    load_factor: f64,
    /// Region backend: file (timed) or sim (counting only).
    #[arg(long, value_parser = parse_backend, default_value = "file")]
    backend: Backend,
    /// Fence policy: per-op or batch=K.
    #[arg(long, value_parser = parse_fence, default_value = "per-op")]
    fence: FencePolicy,
    /// Timed repetitions; a median row is appended.
    #[arg(long, default_value_t = 1)]
    repeats: u32,
    /// Also write the rows to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct FlushScalingArgs {
    /// Nodes appended per run.
    #[arg(long, default_value_t = 1_000_000)]
    ops: u64,
    /// Comma-separated flush fractions in (0, 1].
    #[arg(long, value_delimiter = ',', default_values_t = [0.125, 0.25, 0.5, 1.0])]
    fractions: Vec<f64>,
    #[arg(long, value_parser = parse_backend, default_value = "file")]
    backend: Backend,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GranularityArgs {
    /// 64 B payloads written per run.
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    /// Comma-separated flush sizes from {8, 16, 32, 64}.
    #[arg(long, value_delimiter = ',', default_values_t = [8u64, 16, 32, 64])]
    sizes: Vec<u64>,
    #[arg(long, value_parser = parse_backend, default_value = "file")]
    backend: Backend,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long, value_parser = parse_structure, default_value = "list")]
    structure: Structure,
    /// Target persistent footprint in bytes.
    #[arg(long, default_value_t = 64 * 1024 * 1024)]
    size_bytes: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 19)]
    bucket_size: usize,
    #[arg(long, default_value_t = 0.75)]
    load_factor: f64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_parser = parse_structure, default_value = "list")]
    structure: Structure,
    #[arg(long, value_parser = parse_mode, default_value = "partly")]
    mode: Mode,
    /// Operations (and crash boundaries) in the probed trace.
    #[arg(long, default_value_t = 1_000)]
    ops: u64,
    #[arg(long, default_value_t = 1_000)]
    init: u64,
    #[arg(long, value_parser = parse_mix, default_value = "1:1")]
    mix: OpMix,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn emit(header: &str, rows: &[String], csv: Option<&PathBuf>) -> persistkit::Result<()> {
    println!("{header}");
    for row in rows {
        println!("{row}");
    }
    if let Some(path) = csv {
        write_csv(path, header, rows.iter().cloned())?;
    }
    Ok(())
}

fn run() -> persistkit::Result<bool> {
    match Cli::parse().command {
        Command::Bench(BenchCommand::Workload(args)) => {
            let config = BenchConfig {
                workload: WorkloadSpec {
                    structure: args.structure,
                    mode: args.mode,
                    op_mix: args.mix,
                    op_count: args.ops,
                    init_count: args.init,
                    seed: args.seed,
                },
                backend: args.backend,
                fence_policy: args.fence,
                tuning: Tuning {
                    load_factor: args.load_factor,
                    bucket_size: args.bucket_size,
                },
                output: None,
                repeats: args.repeats,
            };
            let rows: Vec<String> = run_workload(&config)?
                .iter()
                .map(WorkloadRow::csv)
                .collect();
            emit(WorkloadRow::HEADER, &rows, args.csv.as_ref())?;
        }
        Command::Bench(BenchCommand::FlushScaling(args)) => {
            let rows: Vec<String> = run_flush_scaling(args.ops, &args.fractions, args.backend)?
                .iter()
                .map(ScalingRow::csv)
                .collect();
            emit(ScalingRow::HEADER, &rows, args.csv.as_ref())?;
        }
        Command::Bench(BenchCommand::Granularity(args)) => {
            let rows: Vec<String> = run_granularity_bench(&args.sizes, args.ops, args.backend)?
                .iter()
                .map(GranularityRow::csv)
                .collect();
            emit(GranularityRow::HEADER, &rows, args.csv.as_ref())?;
        }
        Command::Bench(BenchCommand::Reconstruct(args)) => {
            let tuning = Tuning {
                load_factor: args.load_factor,
                bucket_size: args.bucket_size,
            };
            let row = run_reconstruction_bench(args.structure, args.size_bytes, args.seed, tuning)?;
            emit(ReconstructRow::HEADER, &[row.csv()], args.csv.as_ref())?;
        }
        Command::Crashtest(CrashtestCommand::Sweep(args)) => {
            let spec = WorkloadSpec {
                structure: args.structure,
                mode: args.mode,
                op_mix: args.mix,
                op_count: args.ops,
                init_count: args.init,
                seed: args.seed,
            };
            let report = sweep_crash_points(&spec)?;
            eprintln!("{}", report.summary());
            let csv = report.csv();
            let mut lines = csv.lines();
            let header = lines.next().unwrap_or_default().to_string();
            let rows: Vec<String> = lines.map(str::to_string).collect();
            emit(&header, &rows, args.csv.as_ref())?;
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
