use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nzp_bench::{
    generate, partition_report, run_benchmark, write_matrix, write_report_csv,
    write_report_table, write_run_csv, GenOptions, MatrixSource, RunConfig,
};
use nzp_core::{GenParams, Mode};

/// Nonzero-partitioned SpMV / SpVTM benchmarks on logical ranks.
///
/// P always means logical ranks: threads of one process exchanging data
/// through an in-process harness, not MPI processes or physical cores.
#[derive(Parser)]
#[command(name = "nzp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random wide matrix and write it as a triple stream.
    Gen(GenArgs),
    /// Print ColP imbalance and NzP zone counts for several rank counts.
    Report(ReportArgs),
    /// Run SpMV-SpVTM wraps with NzP or ColP and write a CSV row.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    /// Target density as a fraction of m.
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    iminus: usize,
    #[arg(long, default_value_t = 0)]
    iplus: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Order columns by nonincreasing nonzero count.
    #[arg(long)]
    sort_desc: bool,
    /// Number of evenly spaced columns to make dense.
    #[arg(long, default_value_t = 0)]
    dense_cols: usize,
    /// Fraction of m filled in each dense column.
    #[arg(long, default_value_t = 0.9)]
    dense_fill: f64,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated logical rank counts.
    #[arg(long = "P", value_delimiter = ',', required = true)]
    ranks: Vec<usize>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Nzp,
    Colp,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "nzp")]
    mode: ModeArg,
    /// Logical rank count.
    #[arg(long = "P")]
    ranks: usize,
    #[arg(long, default_value_t = 1000)]
    wraps: u64,
    #[arg(long = "in")]
    input: PathBuf,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Seed of the per-wrap input vectors.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Check the last wrap against the dense oracle.
    #[arg(long)]
    verify: bool,
}

fn open_csv(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let opts = GenOptions {
        params: GenParams {
            m: args.m,
            n: args.n,
            density: args.rho,
            iota_minus: args.iminus,
            iota_plus: args.iplus,
            seed: args.seed,
        },
        sort_desc: args.sort_desc,
        dense_cols: args.dense_cols,
        dense_fill: args.dense_fill,
    };
    let a = generate(&opts)?;
    write_matrix(&a, &args.out)?;
    eprintln!(
        "wrote {} ({} x {}, {} nonzeros)",
        args.out.display(),
        a.nrows(),
        a.ncols(),
        a.nnz()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let a = MatrixSource::open(&args.input)?.load()?;
    let rows = partition_report(&a, &args.ranks)?;
    write_report_table(&rows, io::stdout().lock())?;
    if let Some(path) = &args.csv {
        write_report_csv(&rows, open_csv(&Some(path.clone()))?)?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let source = MatrixSource::open(&args.input)?;
    let cfg = RunConfig {
        mode: match args.mode {
            ModeArg::Nzp => Mode::Nzp,
            ModeArg::Colp => Mode::Colp,
        },
        ranks: args.ranks,
        wraps: args.wraps,
        seed: args.seed,
        verify: args.verify,
    };
    let out = run_benchmark(&source, &cfg)?;
    write_run_csv(std::slice::from_ref(&out.row), open_csv(&args.csv)?)?;
    match out.verification {
        Some(v) if v.passed() => {
            eprintln!("verify: ok, {v}");
            Ok(true)
        }
        Some(v) => {
            eprintln!("verify: MISMATCH, {v}");
            Ok(false)
        }
        None => Ok(true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Report(a) => cmd_report(a).map(|_| true),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
