//! Exact block-pair log-likelihood and its analytic gradient.
//!
//! For target pairs `(i, j)` in block pair `(a, b)` over a window `(s, e]`
//! the objective is
//!
//! ```text
//! l_ab = sum_(i,j) { -mu * (e - s)
//!                    - sum_(x,y) alpha[mode(xy->ij)] * sum_{t_r in T_xy} sum_q c_q * w_q(t_r)
//!                    + sum_{t_s in T_ij, window} ln lambda_ij(t_s) }
//! ```
//!
//! with `w_q(t_r) = exp(-beta_q * max(s - t_r, 0)) - exp(-beta_q * (e - t_r))`
//! the window-clipped kernel integral, and `lambda_ij(t_s)` the conditional
//! intensity built from recursive decayed event sums. History pairs range
//! over `bp(a, b)` and `bp(b, a)`.
//!
//! One chronological sweep computes the exact value in `O(events * Q)`: the
//! per-source-pair recursions collapse into per-node and per-pair decayed
//! sums, and the compensator collapses into per-direction totals because the
//! number of target pairs a source event excites under each mode depends only
//! on the block sizes. Events sharing a timestamp are processed as one group
//! (intensity reads happen before any insertion) so ties never excite each
//! other, matching the strict `t_r < t_s` convention.

use rayon::prelude::*;

use crate::assignment::{BlockAssignment, BlockId};
use crate::error::{Error, Result};
use crate::events::{EventLog, NodeId};
use crate::kernel::{BlockPairParams, DecayMap, KernelBank, MODE_COUNT};
use crate::model::{ordered_pair_count, BlockModel};

/// Evaluation window `(start, end]`; `include_start` widens it to
/// `[start, end]` so full-data and train windows count events sitting exactly
/// at the window start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodWindow {
    pub start: f64,
    pub end: f64,
    pub include_start: bool,
}

impl LikelihoodWindow {
    /// The log's whole observation window, inclusive of its start.
    pub fn full(log: &EventLog) -> Self {
        Self::full_range(log.t_start(), log.t_end())
    }

    /// A whole observation window `[start, end]`.
    pub fn full_range(start: f64, end: f64) -> Self {
        Self {
            start,
            end,
            include_start: true,
        }
    }

    /// Train-side window `[start, t_split]`.
    pub fn train(t_start: f64, t_split: f64) -> Self {
        Self {
            start: t_start,
            end: t_split,
            include_start: true,
        }
    }

    /// Held-out window `(t_split, t_end]`; events at `t_split` belong to the
    /// train side.
    pub fn test(t_split: f64, t_end: f64) -> Self {
        Self {
            start: t_split,
            end: t_end,
            include_start: false,
        }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    fn counts_event(&self, t: f64) -> bool {
        (t > self.start || (self.include_start && t == self.start)) && t <= self.end
    }
}

/// Which side of the block pair an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Source in block `a`, target in block `b`: a potential log-term event.
    Forward,
    /// Source in block `b`, target in block `a`: history/compensator only.
    Backward,
}

/// One event relevant to a block pair, tagged with its direction.
#[derive(Debug, Clone, Copy)]
pub struct DirectedEvent {
    pub source: NodeId,
    pub target: NodeId,
    pub time: f64,
    pub direction: Direction,
}

/// Everything the likelihood of one ordered block pair needs: the member
/// counts and the chronological merged event stream of both directions.
#[derive(Debug, Clone)]
pub struct BlockPairData {
    pub source_block: BlockId,
    pub target_block: BlockId,
    pub size_source: usize,
    pub size_target: usize,
    /// Ordered node pairs in `bp(a, b)`.
    pub pair_count: usize,
    pub events: Vec<DirectedEvent>,
}

impl BlockPairData {
    /// Extracts the data for `(a, b)` from a log; `None` when the block pair
    /// has no node pairs.
    pub fn from_log(
        log: &EventLog,
        assignment: &BlockAssignment,
        a: BlockId,
        b: BlockId,
    ) -> Option<Self> {
        let pair_count = ordered_pair_count(assignment, a, b);
        if pair_count == 0 {
            return None;
        }
        let mut events = Vec::new();
        for ev in log.events() {
            let (Some(bx), Some(by)) = (
                assignment.block_of(ev.source),
                assignment.block_of(ev.target),
            ) else {
                continue;
            };
            let direction = if bx == a && by == b {
                Direction::Forward
            } else if a != b && bx == b && by == a {
                Direction::Backward
            } else {
                continue;
            };
            events.push(DirectedEvent {
                source: ev.source,
                target: ev.target,
                time: ev.time,
                direction,
            });
        }
        Some(Self {
            source_block: a,
            target_block: b,
            size_source: assignment.size(a),
            size_target: assignment.size(b),
            pair_count,
            events,
        })
    }

    /// Builds data for every ordered block pair with at least one node pair,
    /// in `(a, b)` lexicographic order, with a single pass over the log.
    pub fn build_all(log: &EventLog, assignment: &BlockAssignment) -> Vec<BlockPairData> {
        let blocks = assignment.block_count();
        let mut buckets: Vec<Vec<(NodeId, NodeId, f64)>> = vec![Vec::new(); blocks * blocks];
        for ev in log.events() {
            let (Some(bx), Some(by)) = (
                assignment.block_of(ev.source),
                assignment.block_of(ev.target),
            ) else {
                continue;
            };
            buckets[bx * blocks + by].push((ev.source, ev.target, ev.time));
        }
        let mut out = Vec::new();
        for a in 0..blocks {
            for b in 0..blocks {
                let pair_count = ordered_pair_count(assignment, a, b);
                if pair_count == 0 {
                    continue;
                }
                let fwd = &buckets[a * blocks + b];
                let events = if a == b {
                    fwd.iter()
                        .map(|&(source, target, time)| DirectedEvent {
                            source,
                            target,
                            time,
                            direction: Direction::Forward,
                        })
                        .collect()
                } else {
                    merge_directions(fwd, &buckets[b * blocks + a])
                };
                out.push(BlockPairData {
                    source_block: a,
                    target_block: b,
                    size_source: assignment.size(a),
                    size_target: assignment.size(b),
                    pair_count,
                    events,
                });
            }
        }
        out
    }

    fn diagonal(&self) -> bool {
        self.source_block == self.target_block
    }

    /// Log-term events inside the window.
    pub fn window_event_count(&self, window: &LikelihoodWindow) -> usize {
        self.events
            .iter()
            .filter(|e| e.direction == Direction::Forward && window.counts_event(e.time))
            .count()
    }
}

fn merge_directions(
    fwd: &[(NodeId, NodeId, f64)],
    bwd: &[(NodeId, NodeId, f64)],
) -> Vec<DirectedEvent> {
    let mut events = Vec::with_capacity(fwd.len() + bwd.len());
    let (mut fi, mut bi) = (0, 0);
    while fi < fwd.len() || bi < bwd.len() {
        let take_forward = match (fwd.get(fi), bwd.get(bi)) {
            (Some(f), Some(b)) => f.2 <= b.2,
            (Some(_), None) => true,
            (None, _) => false,
        };
        let (source, target, time, direction) = if take_forward {
            let e = fwd[fi];
            fi += 1;
            (e.0, e.1, e.2, Direction::Forward)
        } else {
            let e = bwd[bi];
            bi += 1;
            (e.0, e.1, e.2, Direction::Backward)
        };
        events.push(DirectedEvent {
            source,
            target,
            time,
            direction,
        });
    }
    events
}

/// Full partial derivatives of the block-pair log-likelihood.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub mu: f64,
    pub alphas: [f64; MODE_COUNT],
    /// Partials with respect to every kernel weight `c_q` treated as free.
    pub weights: Vec<f64>,
}

impl Gradient {
    /// Chain rule onto the `Q - 1` free weights of the simplex
    /// parameterization `c_Q = 1 - sum(free)`.
    pub fn free_weight_partials(&self) -> Vec<f64> {
        let last = *self.weights.last().expect("at least one weight");
        self.weights[..self.weights.len() - 1]
            .iter()
            .map(|&g| g - last)
            .collect()
    }
}

/// Output of one likelihood sweep.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub ll: f64,
    pub gradient: Option<Gradient>,
    /// Log-term events seen inside the window.
    pub log_event_count: usize,
    /// Per-mode compensator mass with unit alphas and unit kernel weights;
    /// zero means the mode cannot influence the objective on this data
    /// (structurally unidentified).
    pub mode_mass: [f64; MODE_COUNT],
}

/// Per-mode compensator bookkeeping: which direction feeds a mode and how
/// many target pairs one source event excites under it.
fn mode_multipliers(data: &BlockPairData) -> [(Direction, f64); MODE_COUNT] {
    if data.diagonal() {
        let others = (data.size_source as f64 - 2.0).max(0.0);
        [
            (Direction::Forward, 1.0),    // self
            (Direction::Forward, 1.0),    // reciprocal
            (Direction::Forward, others), // turn continuation
            (Direction::Forward, others), // generalized reciprocity
            (Direction::Forward, others), // allied continuation
            (Direction::Forward, others), // allied reciprocity
        ]
    } else {
        let sa = data.size_source as f64;
        let sb = data.size_target as f64;
        [
            (Direction::Forward, 1.0),
            (Direction::Backward, 1.0),
            (Direction::Forward, sb - 1.0),
            (Direction::Backward, sb - 1.0),
            (Direction::Forward, sa - 1.0),
            (Direction::Backward, sa - 1.0),
        ]
    }
}

struct SideState {
    out: DecayMap<NodeId>,
    inc: DecayMap<NodeId>,
    pair: DecayMap<(NodeId, NodeId)>,
}

impl SideState {
    fn new() -> Self {
        Self {
            out: DecayMap::new(),
            inc: DecayMap::new(),
            pair: DecayMap::new(),
        }
    }
}

/// One chronological sweep over the block pair computing the log-likelihood,
/// optionally its gradient, and the identifiability masses.
pub fn sweep(
    params: &BlockPairParams,
    bank: &KernelBank,
    data: &BlockPairData,
    window: &LikelihoodWindow,
    want_gradient: bool,
) -> Result<SweepOutput> {
    // The objective is well-defined slightly off the weight simplex, and
    // finite-difference checks probe it there; only structural validity is
    // required here.
    if params.weights.len() != bank.q() {
        return Err(Error::Config(format!(
            "expected {} kernel weights, got {}",
            bank.q(),
            params.weights.len()
        )));
    }
    if !params.mu.is_finite()
        || params.alphas.iter().any(|a| !a.is_finite() || *a < 0.0)
        || params.weights.iter().any(|w| !w.is_finite())
    {
        return Err(Error::Config("non-finite or negative parameters".into()));
    }
    if window.length() < 0.0 {
        return Err(Error::Data(format!(
            "invalid window ({}, {}]",
            window.start, window.end
        )));
    }
    let q = bank.q();
    let multipliers = mode_multipliers(data);
    let diagonal = data.diagonal();

    let mut fwd = SideState::new();
    let mut bwd = SideState::new();
    // Window-clipped kernel integrals per direction and kernel.
    let mut k_fwd = vec![0.0; q];
    let mut k_bwd = vec![0.0; q];

    let mut ln_sum = 0.0;
    let mut log_event_count = 0usize;
    let mut g_mu = 0.0;
    let mut g_alpha = [0.0; MODE_COUNT];
    let mut g_weights = vec![0.0; q];

    // Scratch buffers for the six aggregate reads.
    let mut buf_pf = vec![0.0; q];
    let mut buf_pb = vec![0.0; q];
    let mut buf_of = vec![0.0; q];
    let mut buf_ib = vec![0.0; q];
    let mut buf_if = vec![0.0; q];
    let mut buf_ob = vec![0.0; q];
    let mut mode_sums = vec![0.0; MODE_COUNT * q];

    let events = &data.events;
    let mut idx = 0;
    while idx < events.len() {
        let t = events[idx].time;
        if t > window.end {
            break;
        }
        let mut group_end = idx + 1;
        while group_end < events.len() && events[group_end].time == t {
            group_end += 1;
        }

        // Phase 1: intensity reads for in-window forward events, strictly
        // before any same-time insertion.
        for ev in &events[idx..group_end] {
            if ev.direction != Direction::Forward || !window.counts_event(t) {
                continue;
            }
            let bwd_state: &SideState = if diagonal { &fwd } else { &bwd };
            fwd.pair
                .read_into(bank, &(ev.source, ev.target), t, &mut buf_pf);
            bwd_state
                .pair
                .read_into(bank, &(ev.target, ev.source), t, &mut buf_pb);
            fwd.out.read_into(bank, &ev.source, t, &mut buf_of);
            bwd_state.inc.read_into(bank, &ev.source, t, &mut buf_ib);
            fwd.inc.read_into(bank, &ev.target, t, &mut buf_if);
            bwd_state.out.read_into(bank, &ev.target, t, &mut buf_ob);

            for qi in 0..q {
                mode_sums[qi] = buf_pf[qi];
                mode_sums[q + qi] = buf_pb[qi];
                mode_sums[2 * q + qi] = buf_of[qi] - buf_pf[qi];
                mode_sums[3 * q + qi] = buf_ib[qi] - buf_pb[qi];
                mode_sums[4 * q + qi] = buf_if[qi] - buf_pf[qi];
                mode_sums[5 * q + qi] = buf_ob[qi] - buf_pb[qi];
            }

            let mut lambda = params.mu;
            for qi in 0..q {
                let mut excitation = 0.0;
                for (m, &alpha) in params.alphas.iter().enumerate() {
                    excitation += alpha * mode_sums[m * q + qi];
                }
                lambda += bank.beta(qi) * params.weights[qi] * excitation;
            }
            if !lambda.is_finite() || lambda <= 0.0 {
                return Err(Error::Numerical(format!(
                    "intensity {lambda} at t = {t} on pair ({}, {}) in block pair ({}, {})",
                    ev.source, ev.target, data.source_block, data.target_block
                )));
            }
            ln_sum += lambda.ln();
            log_event_count += 1;

            if want_gradient {
                let inv = 1.0 / lambda;
                g_mu += inv;
                for (m, g) in g_alpha.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for qi in 0..q {
                        acc += bank.beta(qi) * params.weights[qi] * mode_sums[m * q + qi];
                    }
                    *g += acc * inv;
                }
                for qi in 0..q {
                    let mut acc = 0.0;
                    for (m, &alpha) in params.alphas.iter().enumerate() {
                        acc += alpha * mode_sums[m * q + qi];
                    }
                    g_weights[qi] += bank.beta(qi) * acc * inv;
                }
            }
        }

        // Phase 2: fold the whole tie group into the aggregates.
        for ev in &events[idx..group_end] {
            let use_fwd = diagonal || ev.direction == Direction::Forward;
            let (side, k_side) = if use_fwd {
                (&mut fwd, &mut k_fwd)
            } else {
                (&mut bwd, &mut k_bwd)
            };
            for (qi, mass) in k_side.iter_mut().enumerate() {
                let beta = bank.beta(qi);
                let head = (-beta * (window.start - t).max(0.0)).exp();
                let tail = (-beta * (window.end - t)).exp();
                *mass += head - tail;
            }
            side.out.record(bank, ev.source, t)?;
            side.inc.record(bank, ev.target, t)?;
            side.pair.record(bank, (ev.source, ev.target), t)?;
        }
        idx = group_end;
    }

    // Compensator: per mode, multiplier x weighted kernel mass of its side.
    let mut compensator = 0.0;
    let mut mode_mass = [0.0; MODE_COUNT];
    let mut comp_weight_partials = vec![0.0; q];
    for (m, &(direction, mult)) in multipliers.iter().enumerate() {
        let k_side = if diagonal || direction == Direction::Forward {
            &k_fwd
        } else {
            &k_bwd
        };
        let mut weighted = 0.0;
        let mut raw = 0.0;
        for qi in 0..q {
            weighted += params.weights[qi] * k_side[qi];
            raw += k_side[qi];
            if want_gradient {
                comp_weight_partials[qi] += params.alphas[m] * mult * k_side[qi];
            }
        }
        mode_mass[m] = mult * raw;
        compensator += params.alphas[m] * mult * weighted;
    }

    let base = params.mu * window.length() * data.pair_count as f64;
    let ll = -base - compensator + ln_sum;
    if !ll.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite log-likelihood for block pair ({}, {})",
            data.source_block, data.target_block
        )));
    }

    let gradient = want_gradient.then(|| {
        let mut alphas = [0.0; MODE_COUNT];
        for (m, &(direction, mult)) in multipliers.iter().enumerate() {
            let k_side = if diagonal || direction == Direction::Forward {
                &k_fwd
            } else {
                &k_bwd
            };
            let weighted: f64 = (0..q).map(|qi| params.weights[qi] * k_side[qi]).sum();
            alphas[m] = -mult * weighted + g_alpha[m];
        }
        Gradient {
            mu: -window.length() * data.pair_count as f64 + g_mu,
            alphas,
            weights: (0..q)
                .map(|qi| -comp_weight_partials[qi] + g_weights[qi])
                .collect(),
        }
    });

    Ok(SweepOutput {
        ll,
        gradient,
        log_event_count,
        mode_mass,
    })
}

/// Block-pair log-likelihood over a window.
pub fn block_pair_log_likelihood(
    params: &BlockPairParams,
    bank: &KernelBank,
    data: &BlockPairData,
    window: &LikelihoodWindow,
) -> Result<f64> {
    Ok(sweep(params, bank, data, window, false)?.ll)
}

/// Log-likelihood and analytic gradient in one sweep.
pub fn log_likelihood_gradient(
    params: &BlockPairParams,
    bank: &KernelBank,
    data: &BlockPairData,
    window: &LikelihoodWindow,
) -> Result<(f64, Gradient)> {
    let out = sweep(params, bank, data, window, true)?;
    let gradient = out.gradient.expect("gradient requested");
    Ok((out.ll, gradient))
}

/// Per-block-pair term of a total log-likelihood.
#[derive(Debug, Clone)]
pub struct PairTerm {
    pub source_block: BlockId,
    pub target_block: BlockId,
    pub ll: f64,
    pub events: usize,
}

#[derive(Debug, Clone)]
pub struct TotalLogLikelihood {
    pub total: f64,
    pub event_count: usize,
    pub per_pair: Vec<PairTerm>,
}

/// Sum of block-pair log-likelihoods over all ordered block pairs with at
/// least one node pair. Pairs evaluate independently (and in parallel); the
/// result order is deterministic.
pub fn total_log_likelihood(
    model: &BlockModel,
    log: &EventLog,
    window: &LikelihoodWindow,
) -> Result<TotalLogLikelihood> {
    let all = BlockPairData::build_all(log, model.assignment());
    let per_pair: Vec<PairTerm> = all
        .par_iter()
        .map(|data| -> Result<PairTerm> {
            let params = model
                .params_for(data.source_block, data.target_block)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no parameters for block pair ({}, {})",
                        data.source_block, data.target_block
                    ))
                })?;
            let out = sweep(params, model.bank(), data, window, false)?;
            Ok(PairTerm {
                source_block: data.source_block,
                target_block: data.target_block,
                ll: out.ll,
                events: out.log_event_count,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TotalLogLikelihood {
        total: per_pair.iter().map(|p| p.ll).sum(),
        event_count: per_pair.iter().map(|p| p.events).sum(),
        per_pair,
    })
}

/// Per-mode compensator masses on unit alphas/weights; zero mass means the
/// mode is structurally unidentified on this data and window.
pub fn mode_masses(
    bank: &KernelBank,
    data: &BlockPairData,
    window: &LikelihoodWindow,
) -> [f64; MODE_COUNT] {
    let q = bank.q();
    let multipliers = mode_multipliers(data);
    let mut k_fwd = vec![0.0; q];
    let mut k_bwd = vec![0.0; q];
    for ev in &data.events {
        if ev.time > window.end {
            break;
        }
        let k_side = if data.diagonal() || ev.direction == Direction::Forward {
            &mut k_fwd
        } else {
            &mut k_bwd
        };
        for (qi, mass) in k_side.iter_mut().enumerate() {
            let beta = bank.beta(qi);
            *mass += (-beta * (window.start - ev.time).max(0.0)).exp()
                - (-beta * (window.end - ev.time)).exp();
        }
    }
    let mut mass = [0.0; MODE_COUNT];
    for (m, &(direction, mult)) in multipliers.iter().enumerate() {
        let k_side = if data.diagonal() || direction == Direction::Forward {
            &k_fwd
        } else {
            &k_bwd
        };
        mass[m] = mult * k_side.iter().sum::<f64>();
    }
    mass
}
