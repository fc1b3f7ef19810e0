//! Seeded Lloyd k-means with k-means++ initialization.
//!
//! Fully deterministic for a fixed seed: restarts draw from independent
//! seeded streams, nearest-center ties break toward the lowest center index,
//! and the best restart is chosen by strictly smaller inertia (earliest
//! restart wins ties).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

const MAX_ITERS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(
    points: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(row(first));

    let mut min_d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = min_d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in min_d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            // All remaining mass at existing centers; any point works.
            rng.random_range(0..n)
        };
        let c_idx = centers.len();
        centers.extend_from_slice(row(chosen));
        let new_center = centers[c_idx..c_idx + dim].to_vec();
        for (i, best) in min_d2.iter_mut().enumerate() {
            let d = sq_dist(row(i), &new_center);
            if d < *best {
                *best = d;
            }
        }
    }
    centers
}

fn lloyd(points: &[f64], n: usize, dim: usize, k: usize, mut centers: Vec<f64>) -> KMeansResult {
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut labels = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(row(i), &centers[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for d in 0..dim {
                sums[labels[i] * dim + d] += points[i * dim + d];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster with the point farthest from its
                // current center (lowest index on ties).
                let mut far_i = 0usize;
                let mut far_d = -1.0;
                for i in 0..n {
                    let d = sq_dist(row(i), &centers[labels[i] * dim..(labels[i] + 1) * dim]);
                    if d > far_d {
                        far_d = d;
                        far_i = i;
                    }
                }
                centers[c * dim..(c + 1) * dim].copy_from_slice(row(far_i));
                labels[far_i] = c;
                changed = true;
            } else {
                for d in 0..dim {
                    centers[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let inertia = (0..n)
        .map(|i| sq_dist(row(i), &centers[labels[i] * dim..(labels[i] + 1) * dim]))
        .sum();
    KMeansResult { labels, inertia }
}

/// Clusters `n` points of dimension `dim` (row-major in `points`) into `k`
/// groups, taking the best of `restarts` seeded runs.
pub fn kmeans(
    points: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    restarts: usize,
    seed: u64,
) -> KMeansResult {
    assert!(k >= 1 && k <= n, "k must lie in [1, n]");
    assert_eq!(points.len(), n * dim);
    let restarts = restarts.max(1);
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let centers = plus_plus_init(points, n, dim, k, &mut rng);
        let result = lloyd(points, n, dim, k, centers);
        let improves = best.as_ref().is_none_or(|b| result.inertia < b.inertia);
        if improves {
            best = Some(result);
        }
    }
    best.unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_obvious_clusters() {
        let points = vec![0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 5.0, 5.0, 5.1, 5.0, 5.0, 5.1];
        let result = kmeans(&points, 6, 2, 2, 5, 42);
        assert_eq!(result.labels[0], result.labels[1]);
        assert_eq!(result.labels[1], result.labels[2]);
        assert_eq!(result.labels[3], result.labels[4]);
        assert_eq!(result.labels[4], result.labels[5]);
        assert_ne!(result.labels[0], result.labels[3]);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let points: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = kmeans(&points, 20, 2, 3, 8, 123);
        let b = kmeans(&points, 20, 2, 3, 8, 123);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn k_equals_one_gives_single_label() {
        let points = vec![1.0, 2.0, 3.0, 4.0];
        let result = kmeans(&points, 4, 1, 1, 3, 0);
        assert!(result.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn handles_duplicate_points() {
        let points = vec![1.0; 12];
        let result = kmeans(&points, 6, 2, 3, 4, 9);
        assert_eq!(result.labels.len(), 6);
        assert!(result.inertia <= 1e-12);
    }
}
