//! Excitation-mode classification, exponential kernel banks, conditional
//! intensity, and recursive decayed event statistics.
//!
//! The kernel between a source pair and a target pair is a weighted sum of
//! normalized exponentials `sum_q c_q * beta_q * exp(-beta_q * dt)`, so each
//! component integrates to one over `[0, inf)` and the learned weights `c`
//! form a simplex. Which excitation strength applies to a (source pair,
//! target pair) combination is decided by [`classify_excitation`]; exactly
//! one of the six patterns (or none) matches any combination.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::assignment::BlockAssignment;
use crate::error::{Error, Result};
use crate::events::NodeId;

/// Lower bound kept on fitted base intensities so event-time intensities stay
/// strictly positive.
pub const MU_FLOOR: f64 = 1e-10;

/// Tolerance on the kernel-weight simplex constraint.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Number of excitation modes.
pub const MODE_COUNT: usize = 6;

/// The six excitation patterns relating a source pair `(x, y)` to a target
/// pair `(i, j)` under a block assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationMode {
    /// `(x, y)` re-fires: `x = i`, `y = j`.
    SelfExcitation,
    /// `(y, x)` responds: `x = j`, `y = i`.
    Reciprocal,
    /// `x` turns to another node in `j`'s block: `x = i`, `y != j`, `b(y) = b(j)`.
    TurnContinuation,
    /// `y` responds toward `j`'s block: `y = i`, `x != j`, `b(x) = b(j)`.
    GeneralizedReciprocity,
    /// An ally of `x` contacts `y`: `y = j`, `x != i`, `b(x) = b(i)`.
    AlliedContinuation,
    /// An ally of `y` contacts `x`: `x = j`, `y != i`, `b(y) = b(i)`.
    AlliedReciprocity,
}

impl ExcitationMode {
    pub const ALL: [ExcitationMode; MODE_COUNT] = [
        ExcitationMode::SelfExcitation,
        ExcitationMode::Reciprocal,
        ExcitationMode::TurnContinuation,
        ExcitationMode::GeneralizedReciprocity,
        ExcitationMode::AlliedContinuation,
        ExcitationMode::AlliedReciprocity,
    ];

    pub fn index(self) -> usize {
        match self {
            ExcitationMode::SelfExcitation => 0,
            ExcitationMode::Reciprocal => 1,
            ExcitationMode::TurnContinuation => 2,
            ExcitationMode::GeneralizedReciprocity => 3,
            ExcitationMode::AlliedContinuation => 4,
            ExcitationMode::AlliedReciprocity => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExcitationMode::SelfExcitation => "self",
            ExcitationMode::Reciprocal => "reciprocal",
            ExcitationMode::TurnContinuation => "turn_continuation",
            ExcitationMode::GeneralizedReciprocity => "generalized_reciprocity",
            ExcitationMode::AlliedContinuation => "allied_continuation",
            ExcitationMode::AlliedReciprocity => "allied_reciprocity",
        }
    }
}

/// Classifies the excitation pattern of history pair `(x, y)` on target pair
/// `(i, j)`. Returns `None` when no pattern applies (no shared node, or a
/// shared node with mismatched blocks), which contributes zero excitation.
///
/// Nodes must be assigned; an unassigned node never matches a block
/// condition.
pub fn classify_excitation(
    source: (NodeId, NodeId),
    target: (NodeId, NodeId),
    assignment: &BlockAssignment,
) -> Option<ExcitationMode> {
    let (x, y) = source;
    let (i, j) = target;
    debug_assert!(x != y && i != j);
    let same_block = |u: NodeId, v: NodeId| match (assignment.block_of(u), assignment.block_of(v)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    };
    if x == i && y == j {
        Some(ExcitationMode::SelfExcitation)
    } else if x == j && y == i {
        Some(ExcitationMode::Reciprocal)
    } else if x == i && y != j && same_block(y, j) {
        Some(ExcitationMode::TurnContinuation)
    } else if y == i && x != j && same_block(x, j) {
        Some(ExcitationMode::GeneralizedReciprocity)
    } else if y == j && x != i && same_block(x, i) {
        Some(ExcitationMode::AlliedContinuation)
    } else if x == j && y != i && same_block(y, i) {
        Some(ExcitationMode::AlliedReciprocity)
    } else {
        None
    }
}

/// A fixed bank of exponential decay rates shared by all block pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    scales: Vec<KernelScale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelScale {
    pub name: String,
    /// Decay rate in inverse model time units.
    pub beta: f64,
}

impl KernelBank {
    /// Builds a bank from named rates; rates must be positive, strictly
    /// increasing, and free of duplicates.
    pub fn new(scales: Vec<KernelScale>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config(
                "kernel bank must hold at least one rate".into(),
            ));
        }
        let mut prev = 0.0;
        for scale in &scales {
            if !scale.beta.is_finite() || scale.beta <= 0.0 {
                return Err(Error::Config(format!(
                    "kernel rate {} must be positive, got {}",
                    scale.name, scale.beta
                )));
            }
            if scale.beta <= prev {
                return Err(Error::Config(
                    "kernel rates must be strictly increasing without duplicates".into(),
                ));
            }
            prev = scale.beta;
        }
        Ok(Self { scales })
    }

    /// Bank from bare rates (sorted ascending first); names are generated.
    pub fn from_rates(rates: &[f64]) -> Result<Self> {
        let mut sorted = rates.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self::new(
            sorted
                .iter()
                .enumerate()
                .map(|(idx, &beta)| KernelScale {
                    name: format!("b{idx}"),
                    beta,
                })
                .collect(),
        )
    }

    /// Default timescales: two months, two weeks, and half a day (rates per
    /// day, ascending).
    pub fn default_bank() -> Self {
        Self::new(vec![
            KernelScale {
                name: "2months".into(),
                beta: 1.0 / 61.0,
            },
            KernelScale {
                name: "2weeks".into(),
                beta: 1.0 / 14.0,
            },
            KernelScale {
                name: "halfday".into(),
                beta: 2.0,
            },
        ])
        .expect("default bank is valid")
    }

    pub fn q(&self) -> usize {
        self.scales.len()
    }

    pub fn beta(&self, q: usize) -> f64 {
        self.scales[q].beta
    }

    pub fn scales(&self) -> &[KernelScale] {
        &self.scales
    }
}

/// Per-block-pair Hawkes parameters: base intensity, six excitation
/// strengths, and the kernel mixture weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPairParams {
    /// Base intensity (events per time unit per node pair).
    pub mu: f64,
    /// Excitation strengths indexed by [`ExcitationMode::index`].
    pub alphas: [f64; MODE_COUNT],
    /// Kernel mixture weights, one per bank rate, summing to one.
    pub weights: Vec<f64>,
}

impl BlockPairParams {
    /// Zero-excitation parameters with uniform kernel weights.
    pub fn poisson(mu: f64, q: usize) -> Self {
        Self {
            mu,
            alphas: [0.0; MODE_COUNT],
            weights: vec![1.0 / q as f64; q],
        }
    }

    pub fn alpha(&self, mode: ExcitationMode) -> f64 {
        self.alphas[mode.index()]
    }

    pub fn set_alpha(&mut self, mode: ExcitationMode, value: f64) {
        self.alphas[mode.index()] = value;
    }

    pub fn validate(&self, bank: &KernelBank) -> Result<()> {
        if !self.mu.is_finite() || self.mu < 0.0 {
            return Err(Error::Config(format!("mu must be >= 0, got {}", self.mu)));
        }
        for (mode, &alpha) in ExcitationMode::ALL.iter().zip(&self.alphas) {
            if !alpha.is_finite() || alpha < 0.0 {
                return Err(Error::Config(format!(
                    "alpha[{}] must be >= 0, got {alpha}",
                    mode.name()
                )));
            }
        }
        if self.weights.len() != bank.q() {
            return Err(Error::Config(format!(
                "expected {} kernel weights, got {}",
                bank.q(),
                self.weights.len()
            )));
        }
        let mut sum = 0.0;
        for &w in &self.weights {
            if !w.is_finite() || !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&w) {
                return Err(Error::Config(format!("kernel weight {w} outside [0, 1]")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "kernel weights must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Weighted kernel value `sum_q c_q * beta_q * exp(-beta_q * dt)` at elapsed
/// time `dt >= 0`.
pub fn kernel_value(bank: &KernelBank, weights: &[f64], dt: f64) -> f64 {
    debug_assert!(dt >= 0.0);
    bank.scales
        .iter()
        .zip(weights)
        .map(|(scale, &c)| c * scale.beta * (-scale.beta * dt).exp())
        .sum()
}

/// Integral of the weighted kernel over elapsed times `[from, to]`:
/// `sum_q c_q * (exp(-beta_q * from) - exp(-beta_q * to))`.
pub fn kernel_mass(bank: &KernelBank, weights: &[f64], from: f64, to: f64) -> f64 {
    debug_assert!(0.0 <= from && from <= to);
    bank.scales
        .iter()
        .zip(weights)
        .map(|(scale, &c)| c * ((-scale.beta * from).exp() - (-scale.beta * to).exp()))
        .sum()
}

/// Running exponentially-discounted event count for one stream, one value
/// per kernel rate: after observing events at `t_1 <= ... <= t_k`, the value
/// for rate `beta_q` read at time `t` is `sum_r exp(-beta_q * (t - t_r))`.
///
/// Updates are O(Q) via the recursion
/// `R(t_new) = exp(-beta * (t_new - t_last)) * R(t_last) [+ 1 on an event]`.
#[derive(Debug, Clone)]
pub struct DecayState {
    last_time: f64,
    values: Vec<f64>,
}

impl DecayState {
    pub fn new(q: usize) -> Self {
        Self {
            last_time: f64::NEG_INFINITY,
            values: vec![0.0; q],
        }
    }

    pub fn last_time(&self) -> f64 {
        self.last_time
    }

    /// Decays the state forward to `t` without recording an event.
    pub fn advance_to(&mut self, bank: &KernelBank, t: f64) -> Result<()> {
        if t < self.last_time {
            return Err(Error::Numerical(format!(
                "time regression: {t} < {}",
                self.last_time
            )));
        }
        let dt = t - self.last_time;
        if dt > 0.0 {
            for (value, scale) in self.values.iter_mut().zip(&bank.scales) {
                *value *= (-scale.beta * dt).exp();
            }
            self.last_time = t;
        }
        Ok(())
    }

    /// Records an event at `t` (decaying forward first).
    pub fn record_event(&mut self, bank: &KernelBank, t: f64) -> Result<()> {
        self.advance_to(bank, t)?;
        self.last_time = t;
        for value in &mut self.values {
            *value += 1.0;
        }
        Ok(())
    }

    /// Reads the decayed values at `t >= last_time` into `out` without
    /// mutating the state. Events recorded exactly at `t` are included.
    pub fn read_into(&self, bank: &KernelBank, t: f64, out: &mut [f64]) {
        debug_assert!(t >= self.last_time);
        let dt = t - self.last_time;
        for ((out, value), scale) in out.iter_mut().zip(&self.values).zip(&bank.scales) {
            *out = if *value == 0.0 {
                0.0
            } else {
                value * (-scale.beta * dt).exp()
            };
        }
    }

    pub fn value(&self, bank: &KernelBank, q: usize, t: f64) -> f64 {
        debug_assert!(t >= self.last_time);
        if self.values[q] == 0.0 {
            return 0.0;
        }
        self.values[q] * (-bank.beta(q) * (t - self.last_time)).exp()
    }
}

/// Decayed per-stream statistics keyed by node or node pair, created lazily.
#[derive(Debug, Clone, Default)]
pub(crate) struct DecayMap<K: std::hash::Hash + Eq> {
    entries: HashMap<K, DecayState>,
}

impl<K: std::hash::Hash + Eq> DecayMap<K> {
    pub fn new() -> Self {
        Self {
            entries: HashMap::new(),
        }
    }

    pub fn record(&mut self, bank: &KernelBank, key: K, t: f64) -> Result<()> {
        self.entries
            .entry(key)
            .or_insert_with(|| DecayState::new(bank.q()))
            .record_event(bank, t)
    }

    /// Reads decayed values at `t`, writing zeros when the key is absent.
    pub fn read_into(&self, bank: &KernelBank, key: &K, t: f64, out: &mut [f64]) {
        match self.entries.get(key) {
            Some(state) => state.read_into(bank, t, out),
            None => out.fill(0.0),
        }
    }
}
