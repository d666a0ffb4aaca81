#![allow(dead_code)]

use nzp_core::partition::ChunkBounds;
use nzp_core::{CooMatrix, CscMatrix, Triple};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Local chunk of every rank under nonzero partitioning.
pub fn chunks(a: &CooMatrix<f64>, p: usize) -> Vec<CscMatrix<f64>> {
    let bounds = ChunkBounds::new(a.nnz(), p).unwrap();
    (0..p).map(|r| a.to_csc_range(bounds.range(r)).unwrap()).collect()
}

/// Random pattern with a mix of empty, sparse and nearly full columns.
pub fn adversarial_matrix(seed: u64, max_m: usize, max_n: usize) -> CooMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..=max_m);
    let n = rng.gen_range(1..=max_n);
    let p_empty = rng.gen_range(0.0..0.5);
    let p_dense = rng.gen_range(0.0..0.05);
    let sparse_max = rng.gen_range(1..=m.min(4));
    let mut triples = Vec::new();
    for col in 0..n {
        let roll: f64 = rng.gen();
        let count = if roll < p_empty {
            0
        } else if roll < p_empty + p_dense {
            rng.gen_range(m.div_ceil(2)..=m)
        } else {
            rng.gen_range(1..=sparse_max)
        };
        let mut rows = sample(&mut rng, m, count).into_vec();
        rows.sort_unstable();
        for row in rows {
            let v: f64 = rng.gen_range(-1.0..1.0);
            triples.push(Triple::new(row, col, if v == 0.0 { 0.5 } else { v }));
        }
    }
    if triples.is_empty() {
        triples.push(Triple::new(m - 1, n - 1, 1.0));
    }
    CooMatrix::new(m, n, triples).unwrap()
}

pub fn random_vector(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
