//! Shared test oracles and fixtures.
//!
//! The naive likelihood here re-derives the objective from scratch — double
//! loops over target pairs and source events, and its own re-statement of
//! the six excitation patterns — so it shares no code path with the
//! recursive sweep it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use minch_core::assignment::{BlockAssignment, BlockId};
use minch_core::events::{Event, EventLog, NodeId};
use minch_core::kernel::{BlockPairParams, KernelBank, MODE_COUNT};
use minch_core::likelihood::LikelihoodWindow;
use minch_core::model::BlockModel;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Independent restatement of the six excitation patterns; returns the mode
/// index in the same order the library uses (self, reciprocal, turn,
/// generalized reciprocity, allied continuation, allied reciprocity).
pub fn naive_mode(
    (x, y): (NodeId, NodeId),
    (i, j): (NodeId, NodeId),
    block: &dyn Fn(NodeId) -> Option<usize>,
) -> Option<usize> {
    let same = |u: NodeId, v: NodeId| match (block(u), block(v)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    };
    let mut matches = Vec::new();
    if x == i && y == j {
        matches.push(0);
    }
    if x == j && y == i {
        matches.push(1);
    }
    if x == i && y != j && same(y, j) {
        matches.push(2);
    }
    if y == i && x != j && same(x, j) {
        matches.push(3);
    }
    if y == j && x != i && same(x, i) {
        matches.push(4);
    }
    if x == j && y != i && same(y, i) {
        matches.push(5);
    }
    assert!(
        matches.len() <= 1,
        "patterns must be mutually exclusive; ({x},{y})->({i},{j}) matched {matches:?}"
    );
    matches.first().copied()
}

/// Literal double-loop evaluation of the block-pair objective over a window:
/// per target pair, the base-rate term, the compensator summed source event
/// by source event, and a log term per in-window event computed by direct
/// kernel summation over strictly earlier history.
pub fn naive_block_pair_ll(
    params: &BlockPairParams,
    betas: &[f64],
    assignment: &BlockAssignment,
    events: &[Event],
    (a, b): (BlockId, BlockId),
    window: &LikelihoodWindow,
) -> f64 {
    let n = assignment.node_count() as NodeId;
    let block = |node: NodeId| assignment.block_of(node);
    let in_domain = |x: NodeId, y: NodeId| -> bool {
        match (block(x), block(y)) {
            (Some(bx), Some(by)) => (bx == a && by == b) || (bx == b && by == a),
            _ => false,
        }
    };
    let counts_event = |t: f64| {
        (t > window.start || (window.include_start && t == window.start)) && t <= window.end
    };

    let targets: Vec<(NodeId, NodeId)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && block(i) == Some(a) && block(j) == Some(b))
        .collect();

    let mut total = 0.0;
    for &(i, j) in &targets {
        let mut term = -params.mu * (window.end - window.start);
        // Compensator: every domain source event, clipped to the window.
        for ev in events {
            if ev.time > window.end || !in_domain(ev.source, ev.target) {
                continue;
            }
            if let Some(mode) = naive_mode((ev.source, ev.target), (i, j), &block) {
                let mut mass = 0.0;
                for (qi, &beta) in betas.iter().enumerate() {
                    let head = (-beta * (window.start - ev.time).max(0.0)).exp();
                    let tail = (-beta * (window.end - ev.time)).exp();
                    mass += params.weights[qi] * (head - tail);
                }
                term -= params.alphas[mode] * mass;
            }
        }
        // Log terms: direct kernel sums over strictly earlier domain events.
        for ev in events {
            if ev.source != i || ev.target != j || !counts_event(ev.time) {
                continue;
            }
            let mut lambda = params.mu;
            for src in events {
                if src.time >= ev.time || !in_domain(src.source, src.target) {
                    continue;
                }
                if let Some(mode) = naive_mode((src.source, src.target), (i, j), &block) {
                    let mut kernel = 0.0;
                    for (qi, &beta) in betas.iter().enumerate() {
                        kernel += params.weights[qi] * beta * (-beta * (ev.time - src.time)).exp();
                    }
                    lambda += params.alphas[mode] * kernel;
                }
            }
            term += lambda.ln();
        }
        total += term;
    }
    total
}

/// A randomly generated small likelihood instance.
pub struct RandomInstance {
    pub log: EventLog,
    pub assignment: BlockAssignment,
    pub bank: KernelBank,
    pub params: BlockPairParams,
    pub pair: (BlockId, BlockId),
}

/// Draws a random instance with <= `max_nodes` nodes, <= `max_events`
/// events (some at tied timestamps), <= 3 blocks, and Q <= 3. Parameters are
/// strictly interior to the feasible region.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_nodes: usize,
    max_events: usize,
) -> RandomInstance {
    let n = rng.random_range(2..=max_nodes);
    let blocks = rng.random_range(1..=3.min(n));
    let mut labels: Vec<usize> = (0..blocks).collect();
    for _ in blocks..n {
        labels.push(rng.random_range(0..blocks));
    }
    // Shuffle so block membership does not correlate with node id.
    labels.shuffle(rng);
    let assignment = BlockAssignment::from_labels(&labels).unwrap();

    let horizon = rng.random_range(5.0..20.0);
    let count = rng.random_range(0..=max_events);
    let mut times: Vec<f64> = Vec::with_capacity(count);
    for idx in 0..count {
        if idx > 0 && rng.random_bool(0.1) {
            times.push(times[idx - 1]);
        } else {
            times.push(rng.random_range(0.0..horizon));
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut events = Vec::with_capacity(count);
    for &time in &times {
        let source = rng.random_range(0..n) as NodeId;
        let mut target = rng.random_range(0..n) as NodeId;
        while target == source {
            target = rng.random_range(0..n) as NodeId;
        }
        events.push(Event {
            source,
            target,
            time,
        });
    }
    let log = EventLog::new(events, 0.0, horizon, n).unwrap();

    let q = rng.random_range(1..=3);
    let mut rates: Vec<f64> = (0..q).map(|_| rng.random_range(0.05..3.0)).collect();
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for idx in 1..q {
        if rates[idx] <= rates[idx - 1] {
            rates[idx] = rates[idx - 1] * 1.1 + 0.01;
        }
    }
    let bank = KernelBank::from_rates(&rates).unwrap();

    let mut weights: Vec<f64> = (0..q).map(|_| rng.random_range(0.2..1.0)).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    let mut alphas = [0.0; MODE_COUNT];
    for alpha in &mut alphas {
        *alpha = rng.random_range(0.05..0.8);
    }
    let params = BlockPairParams {
        mu: rng.random_range(0.05..1.0),
        alphas,
        weights,
    };

    let pair = loop {
        let a = rng.random_range(0..assignment.block_count());
        let b = rng.random_range(0..assignment.block_count());
        if minch_core::model::ordered_pair_count(&assignment, a, b) > 0 {
            break (a, b);
        }
    };

    RandomInstance {
        log,
        assignment,
        bank,
        params,
        pair,
    }
}

/// Planted benchmark: two communities plus one hub node with its own block.
pub struct PlantedSpec {
    pub model: BlockModel,
    pub labels: Vec<usize>,
}

/// Builds the planted two-community + one-hub model. Community pairs carry
/// self and reciprocal excitation; the hub broadcasts to both communities
/// and they respond.
pub fn planted_hub_model(community_size: usize, beta: f64) -> PlantedSpec {
    let n = 2 * community_size + 1;
    let hub = (n - 1) as NodeId;
    let mut labels = vec![0usize; community_size];
    labels.extend(vec![1usize; community_size]);
    labels.push(2);
    let mut membership: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    membership[hub as usize] = Some(2);
    let assignment = BlockAssignment::new(
        membership,
        vec![
            minch_core::assignment::BlockKind::Community,
            minch_core::assignment::BlockKind::Community,
            minch_core::assignment::BlockKind::Hub,
        ],
    )
    .unwrap();
    let bank = KernelBank::from_rates(&[beta]).unwrap();

    let mut params = BTreeMap::new();
    let diag = |mu: f64, a_self: f64, a_recip: f64| {
        let mut p = BlockPairParams::poisson(mu, 1);
        p.alphas[0] = a_self;
        p.alphas[1] = a_recip;
        p
    };
    // Communities: dense inside, sparse across. In-community volume must
    // dominate the spectrum (so k = 2 recovers the split) while the hub
    // keeps the largest per-node activity by a wide margin.
    params.insert((0, 0), diag(0.004, 0.30, 0.20));
    params.insert((1, 1), diag(0.004, 0.30, 0.20));
    params.insert((0, 1), diag(0.0004, 0.25, 0.0));
    params.insert((1, 0), diag(0.0004, 0.25, 0.0));
    // Hub broadcasts, communities respond.
    params.insert((2, 0), diag(0.012, 0.30, 0.0));
    params.insert((2, 1), diag(0.012, 0.30, 0.0));
    params.insert((0, 2), diag(0.008, 0.20, 0.30));
    params.insert((1, 2), diag(0.008, 0.20, 0.30));

    PlantedSpec {
        model: BlockModel::new(assignment, bank, params).unwrap(),
        labels,
    }
}

/// Central finite differences of a scalar function, step `1e-6 * max(1, |x|)`
/// per coordinate.
pub fn central_differences<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64]) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut point = x.to_vec();
    for idx in 0..x.len() {
        let h = 1e-6 * x[idx].abs().max(1.0);
        point[idx] = x[idx] + h;
        let hi = f(&point);
        point[idx] = x[idx] - h;
        let lo = f(&point);
        point[idx] = x[idx];
        grad.push((hi - lo) / (2.0 * h));
    }
    grad
}

/// Kolmogorov-Smirnov statistic of a sample against the unit-rate
/// exponential distribution.
pub fn ks_statistic_exp1(sample: &mut [f64]) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (idx, &x) in sample.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        let hi = (idx as f64 + 1.0) / n - cdf;
        let lo = cdf - idx as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Relative error with a unit floor on the denominator.
pub fn rel_err(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs().max(actual.abs()).max(1.0)
}
