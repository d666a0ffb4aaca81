//! Sparse storage, local multiply kernels and a brute-force reference.
//!
//! [`CooMatrix`] holds the global matrix as `(row, col, value)` triples sorted
//! column-major, which is the storage order the nonzero partition is taken
//! in. [`CscMatrix`] is one rank's local matrix: only the columns it touches
//! are stored, and `col_ids` maps each local column back to its global index.

use std::ops::Range;

use crate::{Error, Result, Scalar};

/// A dense vector is a plain coefficient array.
pub type DenseVector<T> = Vec<T>;

/// One nonzero of a sparse matrix. Indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple<T> {
    pub row: usize,
    pub col: usize,
    pub value: T,
}

impl<T> Triple<T> {
    pub fn new(row: usize, col: usize, value: T) -> Self {
        Self { row, col, value }
    }

    fn key(&self) -> (usize, usize) {
        (self.col, self.row)
    }
}

/// Checks bounds and strict `(col, row)` ordering. On failure returns the
/// index of the offending triple.
pub(crate) fn check_triples<T>(
    m: usize,
    n: usize,
    triples: &[Triple<T>],
) -> std::result::Result<(), (usize, String)> {
    for (i, t) in triples.iter().enumerate() {
        if t.row >= m || t.col >= n {
            return Err((
                i,
                format!("entry ({}, {}) outside a {m}x{n} matrix", t.row, t.col),
            ));
        }
        if i > 0 && triples[i - 1].key() >= t.key() {
            return Err((
                i,
                format!(
                    "entry ({}, {}) does not follow ({}, {}) in column-major order",
                    t.row,
                    t.col,
                    triples[i - 1].row,
                    triples[i - 1].col
                ),
            ));
        }
    }
    Ok(())
}

/// Global sparse matrix as column-major sorted triples.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix<T> {
    m: usize,
    n: usize,
    triples: Vec<Triple<T>>,
}

impl<T: Scalar> CooMatrix<T> {
    /// Builds a matrix from triples that are already strictly sorted by
    /// `(col, row)`.
    pub fn new(m: usize, n: usize, triples: Vec<Triple<T>>) -> Result<Self> {
        check_triples(m, n, &triples)
            .map_err(|(i, msg)| Error::invalid(format!("triple {i}: {msg}")))?;
        Ok(Self { m, n, triples })
    }

    /// Sorts the triples into column-major order. Duplicate positions are
    /// rejected.
    pub fn from_unsorted(m: usize, n: usize, mut triples: Vec<Triple<T>>) -> Result<Self> {
        triples.sort_by_key(|t| t.key());
        Self::new(m, n, triples)
    }

    pub fn empty(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            triples: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple<T>] {
        &self.triples
    }

    pub fn into_triples(self) -> Vec<Triple<T>> {
        self.triples
    }

    /// Nonzero count of every global column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n];
        for t in &self.triples {
            counts[t.col] += 1;
        }
        counts
    }

    pub fn row_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m];
        for t in &self.triples {
            counts[t.row] += 1;
        }
        counts
    }

    /// Same sparsity pattern with every value replaced.
    pub fn map_values(&self, mut f: impl FnMut(&Triple<T>) -> T) -> Self {
        let triples = self
            .triples
            .iter()
            .map(|t| Triple::new(t.row, t.col, f(t)))
            .collect();
        Self {
            m: self.m,
            n: self.n,
            triples,
        }
    }

    /// Materializes the local matrix of a contiguous nonzero range.
    pub fn to_csc_range(&self, range: Range<usize>) -> Result<CscMatrix<T>> {
        if range.start > range.end || range.end > self.triples.len() {
            return Err(Error::invalid(format!(
                "triple range {}..{} outside 0..{}",
                range.start,
                range.end,
                self.triples.len()
            )));
        }
        Ok(CscMatrix::from_sorted(self.m, &self.triples[range]))
    }

    /// Compressed form of the whole matrix.
    pub fn to_csc(&self) -> CscMatrix<T> {
        CscMatrix::from_sorted(self.m, &self.triples)
    }
}

/// Local matrix of the nonzeros in `range`; see [`CooMatrix::to_csc_range`].
pub fn coo_to_csc<T: Scalar>(a: &CooMatrix<T>, range: Range<usize>) -> Result<CscMatrix<T>> {
    a.to_csc_range(range)
}

/// Compressed sparse column storage restricted to the columns that hold at
/// least one entry. `col_ids[k]` is the global index of local column `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix<T> {
    m: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
    col_ids: Vec<usize>,
}

impl<T: Scalar> CscMatrix<T> {
    /// Builds from triples in strict `(col, row)` order, validating it.
    pub fn from_triples(m: usize, triples: &[Triple<T>]) -> Result<Self> {
        check_triples(m, usize::MAX, triples)
            .map_err(|(i, msg)| Error::invalid(format!("triple {i}: {msg}")))?;
        Ok(Self::from_sorted(m, triples))
    }

    pub(crate) fn from_sorted(m: usize, triples: &[Triple<T>]) -> Self {
        let mut col_ptr = vec![0];
        let mut col_ids = Vec::new();
        let mut row_idx = Vec::with_capacity(triples.len());
        let mut values = Vec::with_capacity(triples.len());
        for (i, t) in triples.iter().enumerate() {
            if col_ids.last() != Some(&t.col) {
                if !col_ids.is_empty() {
                    col_ptr.push(i);
                }
                col_ids.push(t.col);
            }
            row_idx.push(t.row);
            values.push(t.value);
        }
        if !col_ids.is_empty() {
            col_ptr.push(triples.len());
        }
        Self {
            m,
            col_ptr,
            row_idx,
            values,
            col_ids,
        }
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    /// Number of stored (nonempty) local columns.
    pub fn n_local(&self) -> usize {
        self.col_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn col_ids(&self) -> &[usize] {
        &self.col_ids
    }

    pub fn first_col(&self) -> Option<usize> {
        self.col_ids.first().copied()
    }

    pub fn last_col(&self) -> Option<usize> {
        self.col_ids.last().copied()
    }

    /// Row indices and values of local column `k`.
    pub fn column(&self, k: usize) -> (&[usize], &[T]) {
        let span = self.col_ptr[k]..self.col_ptr[k + 1];
        (&self.row_idx[span.clone()], &self.values[span])
    }

    pub fn column_counts(&self) -> Vec<usize> {
        self.col_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Flattens back into column-major triples with global column indices.
    pub fn to_triples(&self) -> Vec<Triple<T>> {
        let mut out = Vec::with_capacity(self.nnz());
        for (k, &col) in self.col_ids.iter().enumerate() {
            let (rows, vals) = self.column(k);
            out.extend(rows.iter().zip(vals).map(|(&r, &v)| Triple::new(r, col, v)));
        }
        out
    }
}

/// `y = A_local x_local`, where `x_local[k]` pairs with local column `k`.
/// Rows without stored entries come out as exact zeros.
pub fn local_spmv<T: Scalar>(a: &CscMatrix<T>, x_local: &[T]) -> Result<Vec<T>> {
    if x_local.len() != a.n_local() {
        return Err(Error::invalid(format!(
            "local spmv: x has {} coefficients, matrix has {} local columns",
            x_local.len(),
            a.n_local()
        )));
    }
    let mut y = vec![T::zero(); a.m];
    for (k, &xk) in x_local.iter().enumerate() {
        let (rows, vals) = a.column(k);
        for (&r, &v) in rows.iter().zip(vals) {
            y[r] += v * xk;
        }
    }
    Ok(y)
}

/// `u_local^T = v^T A_local`, one coefficient per local column.
pub fn local_spvtm<T: Scalar>(v: &[T], a: &CscMatrix<T>) -> Result<Vec<T>> {
    if v.len() != a.m {
        return Err(Error::invalid(format!(
            "local spvtm: v has {} coefficients, matrix has {} rows",
            v.len(),
            a.m
        )));
    }
    Ok((0..a.n_local())
        .map(|k| {
            let (rows, vals) = a.column(k);
            let mut acc = T::zero();
            for (&r, &val) in rows.iter().zip(vals) {
                acc += val * v[r];
            }
            acc
        })
        .collect())
}

/// Reference products computed straight from the triple list.
///
/// Shares no code with the compressed kernels: every triple is visited in
/// `(col, row)` order and accumulated into a dense output.
#[derive(Debug, Clone, Copy)]
pub struct DenseOracle<'a, T> {
    a: &'a CooMatrix<T>,
}

impl<'a, T: Scalar> DenseOracle<'a, T> {
    pub fn new(a: &'a CooMatrix<T>) -> Self {
        Self { a }
    }

    pub fn spmv(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.a.n {
            return Err(Error::invalid(format!(
                "oracle spmv: x has {} coefficients, expected {}",
                x.len(),
                self.a.n
            )));
        }
        let mut y = vec![T::zero(); self.a.m];
        for t in &self.a.triples {
            y[t.row] += t.value * x[t.col];
        }
        Ok(y)
    }

    pub fn spvtm(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.a.m {
            return Err(Error::invalid(format!(
                "oracle spvtm: v has {} coefficients, expected {}",
                v.len(),
                self.a.m
            )));
        }
        let mut u = vec![T::zero(); self.a.n];
        for t in &self.a.triples {
            u[t.col] += t.value * v[t.row];
        }
        Ok(u)
    }

    /// Per-row scale `sum_j |a_rj x_j|` for relative error checks on `A x`.
    pub fn spmv_scale(&self, x: &[T]) -> Vec<f64> {
        let mut s = vec![0.0; self.a.m];
        for t in &self.a.triples {
            s[t.row] += (t.value * x[t.col]).abs().to_f64_lossy();
        }
        s
    }

    /// Per-column scale `sum_r |a_rj v_r|` for relative error checks on `v^T A`.
    pub fn spvtm_scale(&self, v: &[T]) -> Vec<f64> {
        let mut s = vec![0.0; self.a.n];
        for t in &self.a.triples {
            s[t.col] += (t.value * v[t.row]).abs().to_f64_lossy();
        }
        s
    }
}

/// Largest `|got - want| / scale` over all coefficients. A zero scale
/// demands exact agreement (a mismatch yields infinity).
pub fn max_scaled_error<T: Scalar>(got: &[T], want: &[T], scale: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    assert_eq!(got.len(), scale.len());
    got.iter()
        .zip(want)
        .zip(scale)
        .map(|((&g, &w), &s)| {
            let diff = (g - w).abs().to_f64_lossy();
            if diff == 0.0 {
                0.0
            } else if s > 0.0 {
                diff / s
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// The 5x8 matrix with 21 nonzeros used as the running example in the docs
/// and tests, all values 1.
///
/// ```text
///   * * * * . * . *
///   . . . * * * . .
///   . * * * . * . *
///   . * . * . . * .
///   * * . * . * . .
/// ```
pub fn example_matrix<T: Scalar>() -> CooMatrix<T> {
    const COLUMNS: [&[usize]; 8] = [
        &[0, 4],
        &[0, 2, 3, 4],
        &[0, 2],
        &[0, 1, 2, 3, 4],
        &[1],
        &[0, 1, 2, 4],
        &[3],
        &[0, 2],
    ];
    let triples = COLUMNS
        .iter()
        .enumerate()
        .flat_map(|(c, rows)| rows.iter().map(move |&r| Triple::new(r, c, T::one())))
        .collect();
    CooMatrix::new(5, 8, triples).expect("example matrix is well formed")
}
