//! Bounded limited-memory quasi-Newton minimization.
//!
//! Projected L-BFGS: search directions come from the standard two-loop
//! recursion over curvature pairs, steps follow the projection arc
//! `x(t) = P(x + t d)` with Armijo backtracking, and convergence is declared
//! on the infinity norm of the projected gradient `x - P(x - g)`. The
//! feasible set is a coordinate box, optionally intersected with one budget
//! constraint `sum(x[range]) <= limit` (used for kernel-weight simplices);
//! projection onto the intersection is exact via a scalar bisection on the
//! budget multiplier.

use std::collections::VecDeque;
use std::ops::Range;

use crate::error::{Error, Result};

/// Box bounds, optionally intersected with `sum(x[budget.0]) <= budget.1`.
#[derive(Debug, Clone)]
pub struct FeasibleSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub budget: Option<(Range<usize>, f64)>,
}

impl FeasibleSet {
    pub fn box_only(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self {
            lower,
            upper,
            budget: None,
        }
    }

    pub fn with_budget(mut self, range: Range<usize>, limit: f64) -> Self {
        assert!(range.end <= self.lower.len());
        self.budget = Some((range, limit));
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Exact Euclidean projection onto the feasible set.
    pub fn project(&self, x: &mut [f64]) {
        // The budget coordinates must be projected jointly from their
        // pre-clamp values; clamping first and shrinking after is not the
        // Euclidean projection.
        let original: Option<Vec<f64>> = self
            .budget
            .as_ref()
            .map(|(range, _)| x[range.clone()].to_vec());
        for ((value, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *value = value.clamp(lo, hi);
        }
        let Some((range, limit)) = &self.budget else {
            return;
        };
        let sum: f64 = x[range.clone()].iter().sum();
        if sum <= *limit {
            return;
        }
        // KKT: constrained coordinates become clamp(v_i - lam, lo, hi) with
        // the multiplier lam >= 0 chosen so the sum meets the limit. The sum
        // is non-increasing in lam, so bisect.
        let v = original.expect("captured above");
        let lo = &self.lower[range.clone()];
        let hi = &self.upper[range.clone()];
        let sum_at = |lam: f64| -> f64 {
            v.iter()
                .zip(lo.iter().zip(hi))
                .map(|(&vi, (&l, &h))| (vi - lam).clamp(l, h))
                .sum()
        };
        let mut lam_lo = 0.0;
        let mut lam_hi = v
            .iter()
            .zip(lo)
            .map(|(&vi, &l)| vi - l)
            .fold(0.0f64, f64::max)
            .max(1e-300);
        for _ in 0..200 {
            let mid = 0.5 * (lam_lo + lam_hi);
            if sum_at(mid) > *limit {
                lam_lo = mid;
            } else {
                lam_hi = mid;
            }
        }
        let lam = lam_hi;
        for (offset, i) in range.clone().enumerate() {
            x[i] = (v[offset] - lam).clamp(self.lower[i], self.upper[i]);
        }
    }

    fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project(&mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct OptimOptions {
    /// Convergence threshold on the projected-gradient infinity norm.
    pub grad_tol: f64,
    /// Relative objective-change convergence threshold.
    pub f_tol: f64,
    pub max_iters: usize,
    /// Number of stored curvature pairs.
    pub memory: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            f_tol: 1e-12,
            max_iters: 500,
            memory: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

struct Curvature {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(g: &[f64], history: &VecDeque<Curvature>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let alpha = pair.rho * dot(&pair.s, &q);
        for (qi, yi) in q.iter_mut().zip(&pair.y) {
            *qi -= alpha * yi;
        }
        alphas.push(alpha);
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        if gamma.is_finite() && gamma > 0.0 {
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
    }
    for (pair, alpha) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = pair.rho * dot(&pair.y, &q);
        for (qi, si) in q.iter_mut().zip(&pair.s) {
            *qi += (alpha - beta) * si;
        }
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Minimizes `objective` over the feasible set from `x0`.
///
/// The objective returns `(f, gradient)`; a non-finite `f` rejects the step
/// during line search (and is an error at the initial point). Returns the
/// best iterate seen, flagged `converged = false` when neither tolerance was
/// met within the iteration cap.
pub fn minimize<F>(
    mut objective: F,
    x0: &[f64],
    set: &FeasibleSet,
    opts: &OptimOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    assert_eq!(x0.len(), set.dim());
    let mut x = set.projected(x0);
    let (mut f, mut g) = objective(&x);
    let mut evaluations = 1usize;
    if !f.is_finite() {
        return Err(Error::Numerical(
            "objective is not finite at the initial point".into(),
        ));
    }

    let mut best_x = x.clone();
    let mut best_f = f;
    let mut best_g = g.clone();
    let mut history: VecDeque<Curvature> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0usize;

    // Projected backtracking along direction d; returns the accepted point.
    let mut line_search = |x: &[f64],
                           f: f64,
                           g: &[f64],
                           d: &[f64],
                           evaluations: &mut usize|
     -> Option<(Vec<f64>, f64, Vec<f64>)> {
        let mut step = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let mut candidate: Vec<f64> =
                x.iter().zip(d).map(|(&xi, &di)| xi + step * di).collect();
            set.project(&mut candidate);
            let displacement: Vec<f64> = candidate.iter().zip(x).map(|(&c, &xi)| c - xi).collect();
            if norm_inf(&displacement) == 0.0 {
                return None;
            }
            let (f_new, g_new) = objective(&candidate);
            *evaluations += 1;
            let slope = dot(g, &displacement);
            if f_new.is_finite() && f_new <= f + ARMIJO_C1 * slope.min(0.0) && f_new <= f {
                return Some((candidate, f_new, g_new));
            }
            step *= 0.5;
        }
        None
    };

    for iter in 0..opts.max_iters {
        iterations = iter;
        let pg: Vec<f64> = {
            let moved = set.projected(
                &x.iter()
                    .zip(&g)
                    .map(|(&xi, &gi)| xi - gi)
                    .collect::<Vec<_>>(),
            );
            x.iter().zip(&moved).map(|(&xi, &mi)| xi - mi).collect()
        };
        if norm_inf(&pg) <= opts.grad_tol {
            converged = true;
            break;
        }

        let mut d = if history.is_empty() {
            let scale = 1.0 / norm_inf(&g).max(1.0);
            g.iter().map(|&gi| -gi * scale).collect::<Vec<_>>()
        } else {
            two_loop(&g, &history)
        };

        let mut accepted = line_search(&x, f, &g, &d, &mut evaluations);
        if accepted.is_none() && !history.is_empty() {
            // Quasi-Newton direction failed against the constraints; restart
            // from steepest descent.
            history.clear();
            let scale = 1.0 / norm_inf(&g).max(1.0);
            d = g.iter().map(|&gi| -gi * scale).collect();
            accepted = line_search(&x, f, &g, &d, &mut evaluations);
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back(Curvature {
                s,
                y,
                rho: 1.0 / sy,
            });
        }

        let f_change = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        if f < best_f {
            best_f = f;
            best_x = x.clone();
            best_g = g.clone();
        }
        if f_change.abs() <= opts.f_tol * f.abs().max(1.0) {
            converged = true;
            iterations = iter + 1;
            break;
        }
    }

    Ok(OptimResult {
        x: best_x,
        f: best_f,
        gradient: best_g,
        iterations,
        evaluations,
        converged,
    })
}
