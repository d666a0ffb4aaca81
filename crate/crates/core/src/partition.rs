//! Nonzero chunking, the column cover it induces, a sequential overlap-zone
//! reference, the column-partition baseline and the imbalance metric.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use crate::{CooMatrix, Error, Result, Scalar};

/// Offsets splitting `Z` nonzeros into `P` contiguous chunks whose sizes
/// differ by at most one; the first `Z mod P` chunks are the larger ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkBounds {
    offsets: Vec<usize>,
}

impl ChunkBounds {
    pub fn new(nnz: usize, parts: usize) -> Result<Self> {
        if parts == 0 {
            return Err(Error::invalid("rank count must be at least 1"));
        }
        let (base, extra) = (nnz / parts, nnz % parts);
        let mut offsets = Vec::with_capacity(parts + 1);
        offsets.push(0);
        for i in 0..parts {
            let size = base + usize::from(i < extra);
            offsets.push(offsets[i] + size);
        }
        Ok(Self { offsets })
    }

    pub fn parts(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.offsets[self.parts()]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn range(&self, rank: usize) -> Range<usize> {
        self.offsets[rank]..self.offsets[rank + 1]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// `chunk_bounds(Z, P)`.
pub fn chunk_bounds(nnz: usize, parts: usize) -> Result<ChunkBounds> {
    ChunkBounds::new(nnz, parts)
}

/// Per-rank sorted column sets `J_i`: the global columns in which a rank's
/// chunk holds at least one nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cover {
    n: usize,
    sets: Vec<Vec<usize>>,
}

impl Cover {
    pub fn ncols(&self) -> usize {
        self.n
    }

    pub fn parts(&self) -> usize {
        self.sets.len()
    }

    pub fn columns(&self, rank: usize) -> &[usize] {
        &self.sets[rank]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn first_col(&self, rank: usize) -> Option<usize> {
        self.sets[rank].first().copied()
    }

    pub fn last_col(&self, rank: usize) -> Option<usize> {
        self.sets[rank].last().copied()
    }

    /// Total coefficients stored across ranks, replicas included.
    pub fn stored_coefficients(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

pub fn build_cover<T: Scalar>(a: &CooMatrix<T>, bounds: &ChunkBounds) -> Result<Cover> {
    if bounds.nnz() != a.nnz() {
        return Err(Error::invalid(format!(
            "chunk bounds cover {} nonzeros, matrix has {}",
            bounds.nnz(),
            a.nnz()
        )));
    }
    let sets = (0..bounds.parts())
        .map(|rank| {
            let mut cols: Vec<usize> = a.triples()[bounds.range(rank)]
                .iter()
                .map(|t| t.col)
                .collect();
            cols.dedup();
            cols
        })
        .collect();
    Ok(Cover { n: a.ncols(), sets })
}

/// A column shared by two or more consecutive ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OverlapZone {
    /// Position among all zones, counted left to right.
    pub zone_rank: usize,
    pub column: usize,
    /// First and last member rank, inclusive.
    pub lo: usize,
    pub hi: usize,
}

impl OverlapZone {
    pub fn members(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, rank: usize) -> bool {
        self.members().contains(&rank)
    }
}

impl fmt::Display for OverlapZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "zone {} at column {}: ranks {}..={}",
            self.zone_rank, self.column, self.lo, self.hi
        )
    }
}

/// Sequential overlap-zone reference: one zone per column appearing in two
/// or more cover sets.
pub fn zones_oracle(cover: &Cover) -> Result<Vec<OverlapZone>> {
    if let Some(rank) = cover.sets.iter().position(Vec::is_empty) {
        return Err(Error::Unsupported(format!(
            "rank {rank} holds no nonzeros; at least as many nonzeros as ranks are required"
        )));
    }
    let mut owners: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (rank, cols) in cover.sets.iter().enumerate() {
        for &c in cols {
            owners.entry(c).or_default().push(rank);
        }
    }
    let mut zones = Vec::new();
    for (column, ranks) in owners {
        if ranks.len() < 2 {
            continue;
        }
        let (lo, hi) = (ranks[0], ranks[ranks.len() - 1]);
        if hi - lo + 1 != ranks.len() {
            return Err(Error::Consistency(format!(
                "column {column} is shared by non-contiguous ranks {ranks:?}"
            )));
        }
        zones.push(OverlapZone {
            zone_rank: zones.len(),
            column,
            lo,
            hi,
        });
    }
    Ok(zones)
}

/// Column-partition baseline: contiguous column ranges of near-equal width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnPartition {
    pub ranges: Vec<Range<usize>>,
    pub nnz: Vec<usize>,
}

/// Contiguous column ranges; the first `n mod P` ranks get one extra column.
pub fn column_ranges(n: usize, parts: usize) -> Result<Vec<Range<usize>>> {
    if parts == 0 {
        return Err(Error::invalid("rank count must be at least 1"));
    }
    if parts > n {
        return Err(Error::invalid(format!(
            "cannot split {n} columns across {parts} ranks"
        )));
    }
    let bounds = ChunkBounds::new(n, parts)?;
    Ok((0..parts).map(|r| bounds.range(r)).collect())
}

pub fn column_partition<T: Scalar>(a: &CooMatrix<T>, parts: usize) -> Result<ColumnPartition> {
    let ranges = column_ranges(a.ncols(), parts)?;
    let counts = a.column_counts();
    let nnz = ranges
        .iter()
        .map(|r| counts[r.clone()].iter().sum())
        .collect();
    Ok(ColumnPartition { ranges, nnz })
}

/// Nonzero imbalance `Δ = P (Ξ − ξ) / Z` of a per-rank distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImbalanceReport {
    pub max: usize,
    pub min: usize,
    pub total: usize,
    pub parts: usize,
    pub delta: f64,
}

impl ImbalanceReport {
    pub fn percent(&self) -> f64 {
        self.delta * 100.0
    }
}

pub fn imbalance(counts: &[usize]) -> Result<ImbalanceReport> {
    let (Some(&max), Some(&min)) = (counts.iter().max(), counts.iter().min()) else {
        return Err(Error::invalid("imbalance of an empty distribution"));
    };
    let total: usize = counts.iter().sum();
    let parts = counts.len();
    let delta = if total == 0 {
        0.0
    } else {
        (parts * (max - min)) as f64 / total as f64
    };
    Ok(ImbalanceReport {
        max,
        min,
        total,
        parts,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::example_matrix;
    use crate::Triple;
    use proptest::prelude::*;

    fn e() -> CooMatrix<f64> {
        example_matrix()
    }

    #[test]
    fn chunk_sizes() {
        assert_eq!(chunk_bounds(21, 7).unwrap().sizes(), vec![3; 7]);
        assert_eq!(chunk_bounds(10, 4).unwrap().sizes(), vec![3, 3, 2, 2]);
        assert_eq!(
            chunk_bounds(5, 8).unwrap().sizes(),
            vec![1, 1, 1, 1, 1, 0, 0, 0]
        );
        assert!(chunk_bounds(5, 0).is_err());
    }

    #[test]
    fn cover_of_example() {
        let cover = build_cover(&e(), &chunk_bounds(21, 7).unwrap()).unwrap();
        assert_eq!(cover.columns(0), &[0, 1]);
        assert_eq!(cover.columns(1), &[1]);
        assert_eq!(cover.columns(4), &[3, 4, 5]);
        assert_eq!(cover.stored_coefficients(), 12);
        let single = build_cover(&e(), &chunk_bounds(21, 1).unwrap()).unwrap();
        assert_eq!(single.columns(0), &[0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn zones_of_example() {
        let cover = build_cover(&e(), &chunk_bounds(21, 7).unwrap()).unwrap();
        let zones = zones_oracle(&cover).unwrap();
        let got: Vec<_> = zones.iter().map(|z| (z.zone_rank, z.column, z.lo, z.hi)).collect();
        assert_eq!(got, vec![(0, 1, 0, 1), (1, 3, 2, 4), (2, 5, 4, 5)]);
    }

    #[test]
    fn no_zones_cases() {
        let cover = build_cover(&e(), &chunk_bounds(21, 1).unwrap()).unwrap();
        assert!(zones_oracle(&cover).unwrap().is_empty());
        // Every column has exactly two nonzeros, so chunks of two align with
        // column boundaries.
        let t = (0..6).flat_map(|c| [Triple::new(0, c, 1.0), Triple::new(1, c, 1.0)]).collect();
        let a = CooMatrix::new(2, 6, t).unwrap();
        let cover = build_cover(&a, &chunk_bounds(12, 6).unwrap()).unwrap();
        assert!(zones_oracle(&cover).unwrap().is_empty());
    }

    #[test]
    fn empty_chunk_is_unsupported() {
        let a = e();
        let cover = build_cover(&a, &chunk_bounds(21, 22).unwrap()).unwrap();
        assert!(matches!(zones_oracle(&cover), Err(Error::Unsupported(_))));
    }

    #[test]
    fn column_partition_of_example() {
        let cp = column_partition(&e(), 4).unwrap();
        assert_eq!(cp.ranges, vec![0..2, 2..4, 4..6, 6..8]);
        assert_eq!(cp.nnz, vec![6, 7, 5, 3]);
        let one = column_partition(&e(), 1).unwrap();
        assert_eq!(one.ranges, vec![0..8]);
        assert_eq!(one.nnz, vec![21]);
        assert!(column_partition(&e(), 9).is_err());
        assert_eq!(column_ranges(10, 4).unwrap(), vec![0..3, 3..6, 6..8, 8..10]);
    }

    #[test]
    fn imbalance_formula() {
        assert_eq!(imbalance(&[3; 7]).unwrap().delta, 0.0);
        let r = imbalance(&[6, 5, 3, 2]).unwrap();
        assert_eq!((r.max, r.min, r.total), (6, 2, 16));
        assert_eq!(r.delta, 1.0);
        assert_eq!(r.percent(), 100.0);
        assert_eq!(imbalance(&[0, 0]).unwrap().delta, 0.0);
        assert!(imbalance(&[]).is_err());
        for p in 1..=21 {
            let r = imbalance(&chunk_bounds(21, p).unwrap().sizes()).unwrap();
            assert!(r.delta <= p as f64 / 21.0);
        }
    }

    fn arb_pattern() -> impl Strategy<Value = CooMatrix<f64>> {
        (1usize..8, 1usize..30).prop_flat_map(|(m, n)| {
            proptest::collection::btree_set((0..n, 0..m), 1..=(m * n).min(100)).prop_map(
                move |cells| {
                    let t = cells.into_iter().map(|(c, r)| Triple::new(r, c, 1.0)).collect();
                    CooMatrix::new(m, n, t).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn chunk_balance(z in 0usize..5000, p in 1usize..300) {
            let b = chunk_bounds(z, p).unwrap();
            let sizes = b.sizes();
            let big = z.div_ceil(p);
            for (i, &s) in sizes.iter().enumerate() {
                prop_assert_eq!(s, if i < z % p { big } else { z / p });
            }
            prop_assert_eq!(b.nnz(), z);
        }

        #[test]
        fn zone_structure(a in arb_pattern(), p_raw in 1usize..100) {
            let p = 1 + p_raw % a.nnz();
            let cover = build_cover(&a, &chunk_bounds(a.nnz(), p).unwrap()).unwrap();
            let zones = zones_oracle(&cover).unwrap();
            prop_assert!(zones.len() < p);
            for w in zones.windows(2) {
                prop_assert!(w[0].column < w[1].column);
                prop_assert!(w[1].lo >= w[0].hi, "consecutive zones share at most one rank");
            }
            for w in zones.windows(3) {
                prop_assert!(w[2].lo > w[0].hi, "same-parity zones are disjoint");
            }
            let scaled = a.map_values(|t| t.value * -3.5);
            let again = zones_oracle(&build_cover(&scaled, &chunk_bounds(a.nnz(), p).unwrap()).unwrap()).unwrap();
            prop_assert_eq!(zones, again);
        }
    }
}
