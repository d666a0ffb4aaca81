//! Distributed SpMV / SpVTM over the nonzero partition (NzP) and the
//! column-partition baseline (ColP).
//!
//! `n`-vectors are overlapped: a rank stores one coefficient per column of
//! its cover, so coefficients of overlap-zone columns live on every member
//! of the zone. `m`-vectors are replicated on every rank.

use std::io::{Read, Seek};
use std::time::{Duration, Instant};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::comm::{Endpoint, Traffic};
use crate::partition::Cover;
use crate::sparse::{local_spmv, local_spvtm};
use crate::zone_setup::{setup, BoundaryColumns, ZoneSetup};
use crate::{matio, CscMatrix, Error, Result, Scalar};

/// One rank's slice of an overlapped `n`-vector: `values[k]` is the
/// coefficient of global column `cols[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlappedSlice<T> {
    cols: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> OverlappedSlice<T> {
    pub fn new(cols: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if cols.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} columns but {} values",
                cols.len(),
                values.len()
            )));
        }
        if cols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("slice columns must be strictly increasing"));
        }
        Ok(Self { cols, values })
    }

    /// `x` restricted to `cols`.
    pub fn restrict(x: &[T], cols: &[usize]) -> Result<Self> {
        let values = cols
            .iter()
            .map(|&c| {
                x.get(c).copied().ok_or_else(|| {
                    Error::invalid(format!("column {c} outside a vector of length {}", x.len()))
                })
            })
            .collect::<Result<_>>()?;
        Self::new(cols.to_vec(), values)
    }

    pub fn zeros(cols: &[usize]) -> Self {
        Self {
            cols: cols.to_vec(),
            values: vec![T::zero(); cols.len()],
        }
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// All ranks' slices of an overlapped vector, in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlappedVector<T> {
    pub slices: Vec<OverlappedSlice<T>>,
}

/// Splits a global `n`-vector according to the cover; rank `i` receives the
/// coefficients indexed by `J_i`.
pub fn distribute_vector<T: Scalar>(x: &[T], cover: &Cover) -> Result<OverlappedVector<T>> {
    if x.len() != cover.ncols() {
        return Err(Error::invalid(format!(
            "vector has {} coefficients, matrix has {} columns",
            x.len(),
            cover.ncols()
        )));
    }
    let slices = cover
        .sets()
        .iter()
        .map(|cols| OverlappedSlice::restrict(x, cols))
        .collect::<Result<_>>()?;
    Ok(OverlappedVector { slices })
}

/// Reassembles a global vector of length `n`. Columns stored nowhere come
/// back as zero; replicas must agree bit for bit.
pub fn gather_vector<T: Scalar>(xo: &OverlappedVector<T>, n: usize) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (rank, slice) in xo.slices.iter().enumerate() {
        for (&c, &v) in slice.cols.iter().zip(&slice.values) {
            if c >= n {
                return Err(Error::invalid(format!(
                    "rank {rank} stores column {c} of a length-{n} vector"
                )));
            }
            match owner[c] {
                None => {
                    owner[c] = Some(rank);
                    out[c] = v;
                }
                Some(first) if !out[c].bit_eq(v) => {
                    return Err(Error::ReplicaMismatch {
                        column: c,
                        first,
                        second: rank,
                    })
                }
                Some(_) => {}
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Nzp,
    Colp,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Nzp => "nzp",
            Mode::Colp => "colp",
        })
    }
}

/// Operation counters kept by an engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub spmv_calls: u64,
    pub spvtm_calls: u64,
    pub local_spmv_kernels: u64,
    pub local_spvtm_kernels: u64,
    /// World allreduces issued by spmv.
    pub spmv_allreduces: u64,
    /// Zone reductions this rank took part in.
    pub zone_reductions: u64,
    /// Zone reductions this rank led (it is the lowest member). Summed over
    /// ranks this counts every zone reduction exactly once.
    pub zone_reductions_led: u64,
    /// SpVTM calls in which this rank joined an even / odd zone reduction.
    pub even_phases: u64,
    pub odd_phases: u64,
    pub dots: u64,
}

impl EngineStats {
    pub fn since(&self, earlier: &EngineStats) -> EngineStats {
        EngineStats {
            spmv_calls: self.spmv_calls - earlier.spmv_calls,
            spvtm_calls: self.spvtm_calls - earlier.spvtm_calls,
            local_spmv_kernels: self.local_spmv_kernels - earlier.local_spmv_kernels,
            local_spvtm_kernels: self.local_spvtm_kernels - earlier.local_spvtm_kernels,
            spmv_allreduces: self.spmv_allreduces - earlier.spmv_allreduces,
            zone_reductions: self.zone_reductions - earlier.zone_reductions,
            zone_reductions_led: self.zone_reductions_led - earlier.zone_reductions_led,
            even_phases: self.even_phases - earlier.even_phases,
            odd_phases: self.odd_phases - earlier.odd_phases,
            dots: self.dots - earlier.dots,
        }
    }
}

/// A rank's share of a distributed matrix.
pub trait DistributedOperator<T: Scalar> {
    fn mode(&self) -> Mode;

    fn nrows(&self) -> usize;

    /// Global columns whose `n`-vector coefficients this rank stores.
    fn columns(&self) -> &[usize];

    fn local_nnz(&self) -> usize;

    fn stats(&self) -> &EngineStats;

    /// `y = A x`, replicated on every rank.
    fn spmv(&mut self, ep: &mut Endpoint, x: &OverlappedSlice<T>) -> Result<Vec<T>>;

    /// `u^T = v^T A` as this rank's slice.
    fn spvtm(&mut self, ep: &mut Endpoint, v: &[T]) -> Result<OverlappedSlice<T>>;
}

fn check_slice<T: Scalar>(x: &OverlappedSlice<T>, cols: &[usize]) -> Result<()> {
    if x.cols != cols {
        return Err(Error::invalid(
            "vector slice does not match this rank's columns",
        ));
    }
    Ok(())
}

/// Nonzero-partitioned engine for one rank.
#[derive(Debug, Clone)]
pub struct NzpEngine<T> {
    rank: usize,
    local: CscMatrix<T>,
    zones: ZoneSetup,
    stats: EngineStats,
}

impl<T: Scalar> NzpEngine<T> {
    /// Runs zone setup for an already materialized local matrix. Every rank
    /// must call this together.
    pub fn new(ep: &mut Endpoint, local: CscMatrix<T>) -> Result<Self> {
        let zones = setup(ep, BoundaryColumns::of(&local))?;
        Ok(Self {
            rank: ep.rank(),
            local,
            zones,
            stats: EngineStats::default(),
        })
    }

    /// Reads this rank's contiguous nonzero span and runs setup.
    pub fn from_stream<R: Read + Seek>(ep: &mut Endpoint, source: R) -> Result<Self> {
        let (local, _) = matio::read_span(source, ep.rank(), ep.size())?;
        Self::new(ep, local)
    }

    pub fn local(&self) -> &CscMatrix<T> {
        &self.local
    }

    pub fn zones(&self) -> &ZoneSetup {
        &self.zones
    }

    /// `x` restricted to this rank's cover.
    pub fn slice_of(&self, x: &[T]) -> Result<OverlappedSlice<T>> {
        OverlappedSlice::restrict(x, self.local.col_ids())
    }

    fn local_position(&self, column: usize) -> Result<usize> {
        self.local
            .col_ids()
            .binary_search(&column)
            .map_err(|_| Error::Consistency(format!("zone column {column} not stored locally")))
    }

    /// Inner product of two overlapped vectors, replicated on every rank.
    /// Overlap coefficients are counted once, by the zone's lowest rank.
    pub fn dot(
        &mut self,
        ep: &mut Endpoint,
        a: &OverlappedSlice<T>,
        b: &OverlappedSlice<T>,
    ) -> Result<T> {
        check_slice(a, self.local.col_ids())?;
        check_slice(b, self.local.col_ids())?;
        // A shared first column is owned by the rank to the left.
        let skip = usize::from(self.zones.vars.need_left);
        let mut acc = T::zero();
        for (&x, &y) in a.values.iter().zip(&b.values).skip(skip) {
            acc += x * y;
        }
        let world = ep.world();
        let total = ep.allreduce_sum(&world, &[acc])?;
        self.stats.dots += 1;
        Ok(total[0])
    }
}

impl<T: Scalar> DistributedOperator<T> for NzpEngine<T> {
    fn mode(&self) -> Mode {
        Mode::Nzp
    }

    fn nrows(&self) -> usize {
        self.local.nrows()
    }

    fn columns(&self) -> &[usize] {
        self.local.col_ids()
    }

    fn local_nnz(&self) -> usize {
        self.local.nnz()
    }

    fn stats(&self) -> &EngineStats {
        &self.stats
    }

    fn spmv(&mut self, ep: &mut Endpoint, x: &OverlappedSlice<T>) -> Result<Vec<T>> {
        check_slice(x, self.local.col_ids())?;
        let partial = local_spmv(&self.local, &x.values)?;
        self.stats.local_spmv_kernels += 1;
        let world = ep.world();
        let y = ep.allreduce_sum(&world, &partial)?;
        self.stats.spmv_allreduces += 1;
        self.stats.spmv_calls += 1;
        Ok(y)
    }

    fn spvtm(&mut self, ep: &mut Endpoint, v: &[T]) -> Result<OverlappedSlice<T>> {
        let mut u = local_spvtm(v, &self.local)?;
        self.stats.local_spvtm_kernels += 1;
        // Even zones first, then odd: same-parity zones are disjoint, so each
        // phase is a set of independent group reductions.
        for zone in self.zones.membership.zones() {
            let group = *self.zones.group_for(&zone).ok_or_else(|| {
                Error::Consistency(format!("no group created for zone {}", zone.zone_rank))
            })?;
            let pos = self.local_position(zone.column)?;
            let total = ep.allreduce_sum(&group, &u[pos..=pos])?;
            u[pos] = total[0];
            self.stats.zone_reductions += 1;
            if group.lo() == self.rank {
                self.stats.zone_reductions_led += 1;
            }
            match zone.parity() {
                crate::Parity::Even => self.stats.even_phases += 1,
                crate::Parity::Odd => self.stats.odd_phases += 1,
            }
        }
        self.stats.spvtm_calls += 1;
        Ok(OverlappedSlice {
            cols: self.local.col_ids().to_vec(),
            values: u,
        })
    }
}

/// Column-partitioned baseline for one rank: the rank owns a contiguous
/// column range, so SpVTM needs no communication.
#[derive(Debug, Clone)]
pub struct ColpEngine<T> {
    local: CscMatrix<T>,
    col_range: std::ops::Range<usize>,
    stats: EngineStats,
}

impl<T: Scalar> ColpEngine<T> {
    pub fn new(local: CscMatrix<T>, col_range: std::ops::Range<usize>) -> Self {
        Self {
            local,
            col_range,
            stats: EngineStats::default(),
        }
    }

    /// Reads this rank's contiguous column span.
    pub fn from_stream<R: Read + Seek>(ep: &Endpoint, source: R) -> Result<Self> {
        let span = matio::read_column_span(source, ep.rank(), ep.size())?;
        Ok(Self::new(span.local, span.columns))
    }

    pub fn col_range(&self) -> std::ops::Range<usize> {
        self.col_range.clone()
    }

    pub fn local(&self) -> &CscMatrix<T> {
        &self.local
    }
}

impl<T: Scalar> DistributedOperator<T> for ColpEngine<T> {
    fn mode(&self) -> Mode {
        Mode::Colp
    }

    fn nrows(&self) -> usize {
        self.local.nrows()
    }

    fn columns(&self) -> &[usize] {
        self.local.col_ids()
    }

    fn local_nnz(&self) -> usize {
        self.local.nnz()
    }

    fn stats(&self) -> &EngineStats {
        &self.stats
    }

    fn spmv(&mut self, ep: &mut Endpoint, x: &OverlappedSlice<T>) -> Result<Vec<T>> {
        check_slice(x, self.local.col_ids())?;
        let partial = local_spmv(&self.local, &x.values)?;
        self.stats.local_spmv_kernels += 1;
        let world = ep.world();
        let y = ep.allreduce_sum(&world, &partial)?;
        self.stats.spmv_allreduces += 1;
        self.stats.spmv_calls += 1;
        Ok(y)
    }

    fn spvtm(&mut self, _ep: &mut Endpoint, v: &[T]) -> Result<OverlappedSlice<T>> {
        let u = local_spvtm(v, &self.local)?;
        self.stats.local_spvtm_kernels += 1;
        self.stats.spvtm_calls += 1;
        Ok(OverlappedSlice {
            cols: self.local.col_ids().to_vec(),
            values: u,
        })
    }
}

/// Deterministic benchmark inputs. Coefficient `j` of wrap `w` depends only
/// on `(seed, w, j)`, so every replica of an overlap coefficient agrees and
/// any rank can generate its own slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WrapInputs {
    pub seed: u64,
}

impl WrapInputs {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng(&self, wrap: u64, stream_offset: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * wrap + stream_offset);
        rng
    }

    fn uniform<T: Scalar>(bits: u64) -> T {
        // 53 random mantissa bits mapped onto [-1, 1).
        let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
        T::from_f64_lossy(2.0 * unit - 1.0)
    }

    /// Input `x` coefficients for the given sorted columns.
    pub fn x_slice<T: Scalar>(&self, wrap: u64, cols: &[usize]) -> OverlappedSlice<T> {
        let mut rng = self.rng(wrap, 0);
        let mut next = None;
        let values = cols
            .iter()
            .map(|&c| {
                if next != Some(c) {
                    rng.set_word_pos(2 * c as u128);
                }
                next = Some(c + 1);
                Self::uniform(rng.next_u64())
            })
            .collect();
        OverlappedSlice {
            cols: cols.to_vec(),
            values,
        }
    }

    /// Full-length `x` for wrap `wrap`.
    pub fn x_global<T: Scalar>(&self, wrap: u64, n: usize) -> Vec<T> {
        let cols: Vec<usize> = (0..n).collect();
        self.x_slice(wrap, &cols).values
    }

    /// Replicated `v` for wrap `wrap`.
    pub fn v<T: Scalar>(&self, wrap: u64, m: usize) -> Vec<T> {
        let mut rng = self.rng(wrap, 1);
        (0..m).map(|_| Self::uniform(rng.next_u64())).collect()
    }
}

/// Outcome of [`run_wraps`] on one rank.
#[derive(Debug, Clone, PartialEq)]
pub struct WrapReport<T> {
    pub wraps: u64,
    pub elapsed: Duration,
    pub traffic: Traffic,
    pub stats: EngineStats,
    /// Products of the final wrap, kept for verification.
    pub last_y: Option<Vec<T>>,
    pub last_u: Option<OverlappedSlice<T>>,
}

/// Performs `count` SpMV-SpVTM pairs with inputs regenerated per wrap.
pub fn run_wraps<T: Scalar, D: DistributedOperator<T> + ?Sized>(
    ep: &mut Endpoint,
    op: &mut D,
    count: u64,
    inputs: WrapInputs,
) -> Result<WrapReport<T>> {
    let traffic_before = ep.traffic().clone();
    let stats_before = *op.stats();
    let start = Instant::now();
    let mut last_y = None;
    let mut last_u = None;
    let cols = op.columns().to_vec();
    let m = op.nrows();
    for wrap in 0..count {
        let x = inputs.x_slice::<T>(wrap, &cols);
        let y = op.spmv(ep, &x)?;
        let v = inputs.v::<T>(wrap, m);
        let u = op.spvtm(ep, &v)?;
        if wrap + 1 == count {
            last_y = Some(y);
            last_u = Some(u);
        }
    }
    Ok(WrapReport {
        wraps: count,
        elapsed: start.elapsed(),
        traffic: ep.traffic().since(&traffic_before),
        stats: op.stats().since(&stats_before),
        last_y,
        last_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{build_cover, chunk_bounds};
    use crate::sparse::example_matrix;
    use crate::{run_ranks, CooMatrix};

    fn example_cover() -> (CooMatrix<f64>, Cover) {
        let a = example_matrix();
        let cover = build_cover(&a, &chunk_bounds(21, 7).unwrap()).unwrap();
        (a, cover)
    }

    #[test]
    fn distribution_replicates_overlap_columns() {
        let (_, cover) = example_cover();
        let x: Vec<f64> = (1..=8).map(f64::from).collect();
        let xo = distribute_vector(&x, &cover).unwrap();
        let stored: Vec<Vec<f64>> = xo.slices.iter().map(|s| s.values().to_vec()).collect();
        assert_eq!(
            stored,
            vec![
                vec![1.0, 2.0],
                vec![2.0],
                vec![3.0, 4.0],
                vec![4.0],
                vec![4.0, 5.0, 6.0],
                vec![6.0],
                vec![7.0, 8.0],
            ]
        );
        let total: usize = xo.slices.iter().map(OverlappedSlice::len).sum();
        assert_eq!(total, 12);
        assert!(distribute_vector(&x[..7], &cover).is_err());
        assert_eq!(gather_vector(&xo, 8).unwrap(), x);
    }

    #[test]
    fn single_rank_holds_all_nonempty_columns() {
        let a: CooMatrix<f64> = CooMatrix::new(
            2,
            4,
            vec![crate::Triple::new(0, 0, 1.0), crate::Triple::new(1, 2, 1.0)],
        )
        .unwrap();
        let cover = build_cover(&a, &chunk_bounds(2, 1).unwrap()).unwrap();
        let xo = distribute_vector(&[1.0, 2.0, 3.0, 4.0], &cover).unwrap();
        assert_eq!(xo.slices[0].cols(), &[0, 2]);
        // Empty columns gather back as zero.
        assert_eq!(gather_vector(&xo, 4).unwrap(), vec![1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn corrupted_replica_detected() {
        let (_, cover) = example_cover();
        let mut xo = distribute_vector(&[1.0; 8], &cover).unwrap();
        xo.slices[3].values_mut()[0] = 1.0 + f64::EPSILON;
        match gather_vector(&xo, 8) {
            Err(Error::ReplicaMismatch { column, first, second }) => {
                assert_eq!((column, first, second), (3, 2, 3));
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    fn example_engines<F, R>(f: F) -> Vec<R>
    where
        F: Fn(&mut Endpoint, &mut NzpEngine<f64>) -> Result<R> + Sync,
        R: Send,
    {
        let a = example_matrix::<f64>();
        let bounds = chunk_bounds(21, 7).unwrap();
        run_ranks(7, |ep| {
            let local = a.to_csc_range(bounds.range(ep.rank()))?;
            let mut engine = NzpEngine::new(ep, local)?;
            f(ep, &mut engine)
        })
        .unwrap()
    }

    #[test]
    fn spmv_and_spvtm_on_example() {
        let out = example_engines(|ep, eng| {
            let x = eng.slice_of(&[1.0; 8])?;
            let y = eng.spmv(ep, &x)?;
            let before = eng.local_spvtm_partials(&[1.0; 5])?;
            let u = eng.spvtm(ep, &[1.0; 5])?;
            Ok((y, before, u))
        });
        for (y, _, _) in &out {
            assert_eq!(y, &vec![6.0, 3.0, 5.0, 3.0, 4.0]);
        }
        // Zone 0: rank 0 holds one nonzero of column 1, rank 1 holds three.
        assert_eq!(out[0].1, vec![2.0, 1.0]);
        assert_eq!(out[1].1, vec![3.0]);
        let slices = out.into_iter().map(|(_, _, u)| u).collect();
        let u = gather_vector(&OverlappedVector { slices }, 8).unwrap();
        assert_eq!(u, vec![2.0, 4.0, 2.0, 5.0, 1.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn zero_inputs_still_reduce_every_zone() {
        let out = example_engines(|ep, eng| {
            let u = eng.spvtm(ep, &[0.0; 5])?;
            Ok((u, *eng.stats()))
        });
        assert!(out.iter().all(|(u, _)| u.values().iter().all(|&v| v == 0.0)));
        let led: u64 = out.iter().map(|(_, s)| s.zone_reductions_led).sum();
        assert_eq!(led, 3);
    }

    #[test]
    fn dot_counts_overlaps_once() {
        let out = example_engines(|ep, eng| {
            let ones = eng.slice_of(&[1.0; 8])?;
            let zeros = eng.slice_of(&[0.0; 8])?;
            Ok((eng.dot(ep, &ones, &ones)?, eng.dot(ep, &zeros, &ones)?))
        });
        assert!(out.iter().all(|&(d, z)| d == 8.0 && z == 0.0));
    }

    #[test]
    fn wrap_inputs_are_replica_consistent() {
        let inputs = WrapInputs::new(9);
        let full: Vec<f64> = inputs.x_global(3, 50);
        let part: OverlappedSlice<f64> = inputs.x_slice(3, &[4, 5, 6, 20, 49]);
        let expected: Vec<f64> = [4, 5, 6, 20, 49].iter().map(|&c| full[c]).collect();
        assert_eq!(part.values(), &expected[..]);
        assert!(full.iter().all(|v| (-1.0..1.0).contains(v)));
        assert_ne!(inputs.x_global::<f64>(4, 50), full);
        assert_eq!(inputs.v::<f64>(2, 10), inputs.v::<f64>(2, 10));
    }

    #[test]
    fn zero_wraps_give_empty_report() {
        let out = example_engines(|ep, eng| run_wraps(ep, eng, 0, WrapInputs::new(1)));
        for r in out {
            assert_eq!(r.wraps, 0);
            assert_eq!(r.stats, EngineStats::default());
            assert_eq!(r.traffic, Traffic::default());
            assert!(r.last_y.is_none());
        }
    }

    #[test]
    fn single_rank_wraps() {
        let a = example_matrix::<f64>();
        let out = run_ranks(1, |ep| {
            let mut eng = NzpEngine::new(ep, a.to_csc())?;
            run_wraps(ep, &mut eng, 2, WrapInputs::new(5))
        })
        .unwrap();
        let s = out[0].stats;
        assert_eq!((s.local_spmv_kernels, s.local_spvtm_kernels), (2, 2));
        assert_eq!(out[0].traffic.world_allreduces, 2);
        assert_eq!(s.zone_reductions, 0);
    }

    impl<T: Scalar> NzpEngine<T> {
        fn local_spvtm_partials(&self, v: &[T]) -> Result<Vec<T>> {
            local_spvtm(v, &self.local)
        }
    }
}
