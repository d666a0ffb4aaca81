//! Library side of the `nzp` command: matrix generation, partition reports
//! and benchmark runs on the in-process rank harness.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Seek, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nzp_core::engine::{gather_vector, run_wraps, WrapInputs, WrapReport};
use nzp_core::matgen::{gen_random, inject_dense_columns, sort_columns_descending, GenParams};
use nzp_core::matio::{import_matrix_market, read_triple_stream, write_triple_stream, TripleStreamHeader};
use nzp_core::partition::{build_cover, column_partition, imbalance, zones_oracle, ChunkBounds};
use nzp_core::sparse::max_scaled_error;
use nzp_core::{
    run_ranks, ColpEngine, CooMatrix, DenseOracle, DistributedOperator, Mode, NzpEngine,
    OverlappedVector,
};

pub const VERIFY_TOLERANCE: f64 = 1e-10;

/// Options of the `gen` command beyond the generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub params: GenParams,
    pub sort_desc: bool,
    /// Number of columns filled to `dense_fill * m` nonzeros.
    pub dense_cols: usize,
    pub dense_fill: f64,
}

/// Generates a matrix as described by `opts`.
pub fn generate(opts: &GenOptions) -> Result<CooMatrix<f64>> {
    let mut a = gen_random::<f64>(&opts.params)?;
    if opts.dense_cols > 0 {
        a = inject_dense_columns(&a, opts.dense_cols, opts.dense_fill, opts.params.seed ^ 0xd3e5)?;
    }
    if opts.sort_desc {
        a = sort_columns_descending(&a);
    }
    Ok(a)
}

pub fn write_matrix(a: &CooMatrix<f64>, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    write_triple_stream(a, BufWriter::new(file))
        .with_context(|| format!("cannot write {}", path.display()))
}

/// A matrix input: a triple stream on disk, or an imported Matrix Market
/// file held in memory as a triple stream.
#[derive(Debug, Clone)]
pub enum MatrixSource {
    Stream(PathBuf),
    Memory(Vec<u8>),
}

pub trait ReadSeek: Read + Seek {}
impl<R: Read + Seek> ReadSeek for R {}

impl MatrixSource {
    /// Opens `path`; files ending in `.mtx` are imported as Matrix Market.
    pub fn open(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            let a: CooMatrix<f64> = import_matrix_market(BufReader::new(file))
                .with_context(|| format!("cannot import {}", path.display()))?;
            Ok(Self::from_matrix(&a))
        } else {
            ensure!(path.exists(), "input {} does not exist", path.display());
            Ok(Self::Stream(path.to_path_buf()))
        }
    }

    pub fn from_matrix(a: &CooMatrix<f64>) -> Self {
        let mut buf = Vec::new();
        write_triple_stream(a, &mut buf).expect("writing to memory cannot fail");
        Self::Memory(buf)
    }

    pub fn reader(&self) -> Result<Box<dyn ReadSeek + '_>> {
        Ok(match self {
            Self::Stream(path) => Box::new(BufReader::new(
                File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
            )),
            Self::Memory(buf) => Box::new(Cursor::new(buf.as_slice())),
        })
    }

    pub fn header(&self) -> Result<TripleStreamHeader> {
        Ok(TripleStreamHeader::read(&mut self.reader()?)?)
    }

    pub fn load(&self) -> Result<CooMatrix<f64>> {
        Ok(read_triple_stream(self.reader()?)?)
    }
}

/// One line of the partition report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub ranks: usize,
    pub colp_delta_percent: f64,
    pub nzp_zones: usize,
    pub nzp_delta_percent: f64,
}

/// ColP imbalance and NzP zone count / imbalance for each rank count.
pub fn partition_report(a: &CooMatrix<f64>, ranks: &[usize]) -> Result<Vec<ReportRow>> {
    ranks
        .iter()
        .map(|&p| {
            ensure!(p >= 1, "rank counts must be at least 1");
            ensure!(
                p <= a.nnz(),
                "P = {p} exceeds the {} nonzeros: nonzero partitioning would leave ranks empty",
                a.nnz()
            );
            ensure!(
                p <= a.ncols(),
                "P = {p} exceeds the {} columns: column partitioning would leave ranks empty",
                a.ncols()
            );
            let colp = column_partition(a, p)?;
            let bounds = ChunkBounds::new(a.nnz(), p)?;
            let zones = zones_oracle(&build_cover(a, &bounds)?)?;
            Ok(ReportRow {
                ranks: p,
                colp_delta_percent: imbalance(&colp.nnz)?.percent(),
                nzp_zones: zones.len(),
                nzp_delta_percent: imbalance(&bounds.sizes())?.percent(),
            })
        })
        .collect()
}

pub const REPORT_HEADER: [&str; 4] = ["P", "colp_delta_percent", "nzp_zones", "nzp_delta_percent"];

pub fn write_report_csv<W: Write>(rows: &[ReportRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.ranks.to_string(),
            format!("{:.6}", r.colp_delta_percent),
            r.nzp_zones.to_string(),
            format!("{:.6}", r.nzp_delta_percent),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_table<W: Write>(rows: &[ReportRow], mut sink: W) -> Result<()> {
    writeln!(sink, "{:>6}  {:>12}  {:>10}  {:>12}", "P", "ColP Δ (%)", "NzP zones", "NzP Δ (%)")?;
    for r in rows {
        writeln!(
            sink,
            "{:>6}  {:>12.2}  {:>10}  {:>12.4}",
            r.ranks, r.colp_delta_percent, r.nzp_zones, r.nzp_delta_percent
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub ranks: usize,
    pub wraps: u64,
    pub seed: u64,
    pub verify: bool,
}

/// The CSV row of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub mode: Mode,
    pub ranks: usize,
    pub wraps: u64,
    pub elapsed_seconds: f64,
    pub setup_rounds: u64,
    pub spmv_allreduces: u64,
    pub zone_scalars_reduced: u64,
    pub max_nnz_per_rank: usize,
    pub min_nnz_per_rank: usize,
    pub delta_percent: f64,
}

pub const RUN_HEADER: [&str; 10] = [
    "mode",
    "P",
    "wraps",
    "elapsed_seconds",
    "setup_rounds",
    "spmv_allreduces",
    "zone_scalars_reduced",
    "max_nnz_per_rank",
    "min_nnz_per_rank",
    "delta_percent",
];

impl RunRow {
    fn record(&self) -> [String; 10] {
        [
            self.mode.to_string(),
            self.ranks.to_string(),
            self.wraps.to_string(),
            format!("{:.6}", self.elapsed_seconds),
            self.setup_rounds.to_string(),
            self.spmv_allreduces.to_string(),
            self.zone_scalars_reduced.to_string(),
            self.max_nnz_per_rank.to_string(),
            self.min_nnz_per_rank.to_string(),
            format!("{:.6}", self.delta_percent),
        ]
    }
}

pub fn write_run_csv<W: Write>(rows: &[RunRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(RUN_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Scaled errors of the last wrap's products against the dense oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub spmv_error: f64,
    pub spvtm_error: f64,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.spmv_error <= VERIFY_TOLERANCE && self.spvtm_error <= VERIFY_TOLERANCE
    }
}

impl fmt::Display for Verification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "spmv error {:.3e}, spvtm error {:.3e} (tolerance {:.0e})",
            self.spmv_error, self.spvtm_error, VERIFY_TOLERANCE
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub row: RunRow,
    pub verification: Option<Verification>,
}

struct RankResult {
    setup_rounds: u64,
    report: WrapReport<f64>,
    local_nnz: usize,
}

fn run_rank<D: DistributedOperator<f64>>(
    ep: &mut nzp_core::Endpoint,
    mut op: D,
    setup_rounds: u64,
    cfg: &RunConfig,
) -> nzp_core::Result<RankResult> {
    let report = run_wraps(ep, &mut op, cfg.wraps, WrapInputs::new(cfg.seed))?;
    Ok(RankResult {
        setup_rounds,
        report,
        local_nnz: op.local_nnz(),
    })
}

/// Runs `cfg.wraps` SpMV-SpVTM pairs on `cfg.ranks` logical ranks, each
/// rank reading its own share of `source`.
pub fn run_benchmark(source: &MatrixSource, cfg: &RunConfig) -> Result<RunOutcome> {
    ensure!(cfg.ranks >= 1, "P must be at least 1");
    let header = source.header()?;
    match cfg.mode {
        Mode::Nzp => ensure!(
            cfg.ranks as u64 <= header.nnz,
            "P = {} exceeds the {} nonzeros; nonzero partitioning needs P <= Z",
            cfg.ranks,
            header.nnz
        ),
        Mode::Colp => ensure!(
            cfg.ranks as u64 <= header.n,
            "P = {} exceeds the {} columns; column partitioning needs P <= n",
            cfg.ranks,
            header.n
        ),
    }
    if cfg.verify {
        ensure!(cfg.wraps >= 1, "--verify needs at least one wrap");
    }

    let results = run_ranks(cfg.ranks, |ep| -> anyhow::Result<RankResult> {
        let reader = source.reader()?;
        let out = match cfg.mode {
            Mode::Nzp => {
                let op = NzpEngine::<f64>::from_stream(ep, reader)?;
                let rounds = op.zones().rounds;
                run_rank(ep, op, rounds, cfg)?
            }
            Mode::Colp => {
                let op = ColpEngine::<f64>::from_stream(ep, reader)?;
                run_rank(ep, op, 0, cfg)?
            }
        };
        Ok(out)
    })?;

    let nnz: Vec<usize> = results.iter().map(|r| r.local_nnz).collect();
    let imb = imbalance(&nnz)?;
    let row = RunRow {
        mode: cfg.mode,
        ranks: cfg.ranks,
        wraps: cfg.wraps,
        elapsed_seconds: results
            .iter()
            .map(|r| r.report.elapsed.as_secs_f64())
            .fold(0.0, f64::max),
        setup_rounds: results.iter().map(|r| r.setup_rounds).max().unwrap_or(0),
        spmv_allreduces: results[0].report.stats.spmv_allreduces,
        zone_scalars_reduced: results.iter().map(|r| r.report.stats.zone_reductions_led).sum(),
        max_nnz_per_rank: imb.max,
        min_nnz_per_rank: imb.min,
        delta_percent: imb.percent(),
    };

    let verification = if cfg.verify {
        Some(verify(source, cfg, &results)?)
    } else {
        None
    };
    Ok(RunOutcome { row, verification })
}

fn verify(source: &MatrixSource, cfg: &RunConfig, results: &[RankResult]) -> Result<Verification> {
    let a = source.load()?;
    let last = cfg.wraps - 1;
    let inputs = WrapInputs::new(cfg.seed);
    let x: Vec<f64> = inputs.x_global(last, a.ncols());
    let v: Vec<f64> = inputs.v(last, a.nrows());
    let oracle = DenseOracle::new(&a);

    let mut spmv_error: f64 = 0.0;
    let want_y = oracle.spmv(&x)?;
    let y_scale = oracle.spmv_scale(&x);
    for r in results {
        let Some(y) = &r.report.last_y else { bail!("rank kept no SpMV result") };
        spmv_error = spmv_error.max(max_scaled_error(y, &want_y, &y_scale));
    }

    let slices = results
        .iter()
        .map(|r| r.report.last_u.clone().context("rank kept no SpVTM result"))
        .collect::<Result<Vec<_>>>()?;
    let u = gather_vector(&OverlappedVector { slices }, a.ncols())?;
    let spvtm_error = max_scaled_error(&u, &oracle.spvtm(&v)?, &oracle.spvtm_scale(&v));
    Ok(Verification {
        spmv_error,
        spvtm_error,
    })
}
