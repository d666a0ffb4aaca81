//! Synthetic matrices: the uniform-count random generator and the
//! descending-density column ordering.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{CooMatrix, Error, Result, Scalar, Triple};

/// Parameters of [`gen_random`]. Each column receives a nonzero count drawn
/// uniformly from `[l, u]` with `l = ⌊ρm⌋ - iota_minus` and
/// `u = ⌈ρm⌉ + iota_plus`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    pub m: usize,
    pub n: usize,
    pub density: f64,
    pub iota_minus: usize,
    pub iota_plus: usize,
    pub seed: u64,
}

impl GenParams {
    /// The inclusive count interval `(l, u)`, validated.
    pub fn bounds(&self) -> Result<(usize, usize)> {
        if !(self.density.is_finite() && self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::invalid(format!(
                "density must lie in (0, 1], got {}",
                self.density
            )));
        }
        if self.m == 0 || self.n < self.m {
            return Err(Error::invalid(format!(
                "need 1 <= m <= n so every row can be covered, got m={} n={}",
                self.m, self.n
            )));
        }
        let scaled = self.density * self.m as f64;
        let floor = scaled.floor() as usize;
        let ceil = scaled.ceil() as usize;
        let l = floor.checked_sub(self.iota_minus).filter(|&l| l >= 1).ok_or_else(|| {
            Error::invalid(format!(
                "lower count bound ⌊ρm⌋ - iota_minus = {floor} - {} is below 1",
                self.iota_minus
            ))
        })?;
        let u = ceil + self.iota_plus;
        if u > self.m {
            return Err(Error::invalid(format!(
                "upper count bound ⌈ρm⌉ + iota_plus = {u} exceeds m = {}",
                self.m
            )));
        }
        if l > u {
            return Err(Error::invalid(format!("empty count interval [{l}, {u}]")));
        }
        if self.n * l < self.m {
            return Err(Error::invalid(format!(
                "n*l = {} nonzeros cannot cover {} rows",
                self.n * l,
                self.m
            )));
        }
        Ok((l, u))
    }
}

fn nonzero_value<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    loop {
        let v: f64 = rng.gen_range(-1.0..=1.0);
        if v != 0.0 {
            return T::from_f64_lossy(v);
        }
    }
}

/// Random `m x n` matrix with per-column counts uniform on `[l, u]`,
/// distinct rows within a column, every row covered, and values uniform on
/// `[-1, 1]` (never exactly zero). Deterministic in `params.seed`.
pub fn gen_random<T: Scalar>(params: &GenParams) -> Result<CooMatrix<T>> {
    let (l, u) = params.bounds()?;
    let (m, n) = (params.m, params.n);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut columns: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let count = rng.gen_range(l..=u);
            sample(&mut rng, m, count).into_vec()
        })
        .collect();
    repair_coverage(&mut columns, m);

    let mut triples = Vec::with_capacity(columns.iter().map(Vec::len).sum());
    for (col, rows) in columns.iter_mut().enumerate() {
        rows.sort_unstable();
        for &row in rows.iter() {
            triples.push(Triple::new(row, col, nonzero_value(&mut rng)));
        }
    }
    CooMatrix::new(m, n, triples)
}

/// Swaps each uncovered row into a column in place of a row that appears at
/// least twice overall. Columns are visited largest first, round robin, so
/// column counts are unchanged.
fn repair_coverage(columns: &mut [Vec<usize>], m: usize) {
    let mut row_counts = vec![0usize; m];
    for rows in columns.iter() {
        for &r in rows {
            row_counts[r] += 1;
        }
    }
    let uncovered: Vec<usize> = (0..m).filter(|&r| row_counts[r] == 0).collect();
    if uncovered.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..columns.len()).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(columns[c].len()));
    let mut cursor = 0;
    for r in uncovered {
        // Some row is duplicated while any row is uncovered, and r is in no
        // column, so this search terminates.
        loop {
            let col = &mut columns[order[cursor]];
            cursor = (cursor + 1) % order.len();
            if let Some(slot) = col.iter().position(|&x| row_counts[x] >= 2) {
                row_counts[col[slot]] -= 1;
                col[slot] = r;
                row_counts[r] = 1;
                break;
            }
        }
    }
}

/// Permutes columns so counts are nonincreasing; ties keep the original
/// column order, and rows keep their order within each column.
pub fn sort_columns_descending<T: Scalar>(a: &CooMatrix<T>) -> CooMatrix<T> {
    let counts = a.column_counts();
    let mut order: Vec<usize> = (0..a.ncols()).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(counts[c]));
    let mut starts = vec![0usize; a.ncols() + 1];
    for c in 0..a.ncols() {
        starts[c + 1] = starts[c] + counts[c];
    }
    let triples = a.triples();
    let mut out = Vec::with_capacity(a.nnz());
    for (new_col, &old_col) in order.iter().enumerate() {
        for t in &triples[starts[old_col]..starts[old_col + 1]] {
            out.push(Triple::new(t.row, new_col, t.value));
        }
    }
    CooMatrix::new(a.nrows(), a.ncols(), out).expect("column permutation keeps the order valid")
}

/// Fills `count` evenly spaced columns up to `⌈fill * m⌉` nonzeros each,
/// keeping their existing rows. Used to build matrices with a few very dense
/// columns; follow with [`sort_columns_descending`] to move them to the front.
pub fn inject_dense_columns<T: Scalar>(
    a: &CooMatrix<T>,
    count: usize,
    fill: f64,
    seed: u64,
) -> Result<CooMatrix<T>> {
    let (m, n) = (a.nrows(), a.ncols());
    if count > n {
        return Err(Error::invalid(format!("{count} dense columns requested, n = {n}")));
    }
    if !(fill.is_finite() && fill > 0.0 && fill <= 1.0) {
        return Err(Error::invalid(format!("fill must lie in (0, 1], got {fill}")));
    }
    if count == 0 {
        return Ok(a.clone());
    }
    let target = ((fill * m as f64).ceil() as usize).clamp(1, m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = a.triples().to_vec();
    let mut present = vec![false; m];
    for k in 0..count {
        let col = k * n / count;
        present.iter_mut().for_each(|p| *p = false);
        let mut have = 0;
        for t in triples.iter().filter(|t| t.col == col) {
            present[t.row] = true;
            have += 1;
        }
        if have >= target {
            continue;
        }
        let absent: Vec<usize> = (0..m).filter(|&r| !present[r]).collect();
        for i in sample(&mut rng, absent.len(), target - have) {
            triples.push(Triple::new(absent[i], col, nonzero_value(&mut rng)));
        }
    }
    CooMatrix::from_unsorted(m, n, triples)
}
