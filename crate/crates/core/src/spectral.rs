//! Spectral embedding of directed event-count matrices.
//!
//! Each node is embedded by concatenating its rows of the top-k left and
//! top-k right singular vectors of the count matrix, scaled by the singular
//! values. Embedding rows are then normalized to unit Euclidean norm (zero
//! rows stay zero) so that clustering responds to connectivity patterns
//! rather than raw activity volume, and the normalized embedding is fed to
//! seeded k-means.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::events::AdjacencyCounts;
use crate::kmeans::kmeans;

/// Labels in `0..k` plus a flag for the all-zero-matrix fallback.
#[derive(Debug, Clone)]
pub struct SpectralOutcome {
    pub labels: Vec<usize>,
    /// True when the count matrix was all zeros and every node fell back to
    /// label 0.
    pub zero_matrix_fallback: bool,
}

/// Builds the scaled singular-vector embedding; returns a row-major
/// `n x 2k` matrix with unit-normalized rows.
pub fn spectral_embedding(counts: &AdjacencyCounts, k: usize) -> Result<Vec<f64>> {
    let n = counts.node_count();
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the node count {n}")));
    }
    let matrix = DMatrix::from_fn(n, n, |i, j| counts.get(i as u32, j as u32) as f64);
    let svd = matrix.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = svd.singular_values;

    // Order singular triplets by decreasing singular value.
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap().then(a.cmp(&b)));

    let dim = 2 * k;
    let mut embedding = vec![0.0; n * dim];
    for (col, &q) in order.iter().take(k).enumerate() {
        let s = sigma[q];
        for i in 0..n {
            embedding[i * dim + col] = s * u[(i, q)];
            embedding[i * dim + k + col] = s * v_t[(q, i)];
        }
    }
    for i in 0..n {
        let row = &mut embedding[i * dim..(i + 1) * dim];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(embedding)
}

/// Spectral clustering of the count matrix into `k` groups.
pub fn spectral_cluster(
    counts: &AdjacencyCounts,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<SpectralOutcome> {
    let n = counts.node_count();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the node count {n}")));
    }
    if counts.total() == 0 {
        return Ok(SpectralOutcome {
            labels: vec![0; n],
            zero_matrix_fallback: true,
        });
    }
    if k == 1 {
        return Ok(SpectralOutcome {
            labels: vec![0; n],
            zero_matrix_fallback: false,
        });
    }
    let embedding = spectral_embedding(counts, k)?;
    let result = kmeans(&embedding, n, 2 * k, k, restarts, seed);
    Ok(SpectralOutcome {
        labels: result.labels,
        zero_matrix_fallback: false,
    })
}
