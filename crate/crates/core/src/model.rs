//! A complete block-structured Hawkes model: assignment, kernel bank, and
//! per-block-pair parameters.

use std::collections::BTreeMap;

use crate::assignment::{BlockAssignment, BlockId};
use crate::error::{Error, Result};
use crate::events::{EventLog, NodeId};
use crate::kernel::{classify_excitation, kernel_mass, kernel_value, BlockPairParams, KernelBank};

/// Assignment + kernel bank + one parameter set per ordered block pair.
///
/// This is the object a fit produces, evaluation consumes, and the generator
/// simulates from.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockModel {
    assignment: BlockAssignment,
    bank: KernelBank,
    params: BTreeMap<(BlockId, BlockId), BlockPairParams>,
}

impl BlockModel {
    /// Validates that parameters are well-formed and present for every
    /// ordered block pair that contains at least one node pair.
    pub fn new(
        assignment: BlockAssignment,
        bank: KernelBank,
        params: BTreeMap<(BlockId, BlockId), BlockPairParams>,
    ) -> Result<Self> {
        for (&(a, b), p) in &params {
            if a >= assignment.block_count() || b >= assignment.block_count() {
                return Err(Error::Config(format!(
                    "params for unknown block pair ({a}, {b})"
                )));
            }
            p.validate(&bank)?;
        }
        for a in 0..assignment.block_count() {
            for b in 0..assignment.block_count() {
                if ordered_pair_count(&assignment, a, b) > 0 && !params.contains_key(&(a, b)) {
                    return Err(Error::Config(format!(
                        "missing parameters for block pair ({a}, {b})"
                    )));
                }
            }
        }
        Ok(Self {
            assignment,
            bank,
            params,
        })
    }

    pub fn assignment(&self) -> &BlockAssignment {
        &self.assignment
    }

    pub fn bank(&self) -> &KernelBank {
        &self.bank
    }

    pub fn params(&self) -> &BTreeMap<(BlockId, BlockId), BlockPairParams> {
        &self.params
    }

    pub fn params_for(&self, a: BlockId, b: BlockId) -> Option<&BlockPairParams> {
        self.params.get(&(a, b))
    }

    /// Number of ordered node pairs in block pair `(a, b)`.
    pub fn pair_count(&self, a: BlockId, b: BlockId) -> usize {
        ordered_pair_count(&self.assignment, a, b)
    }

    /// Re-binds the model to an extended assignment (same blocks, possibly
    /// more nodes per block), used when unseen nodes join at evaluation time.
    pub fn with_assignment(&self, assignment: BlockAssignment) -> Result<Self> {
        if assignment.block_count() != self.assignment.block_count() {
            return Err(Error::Config(
                "extended assignment must keep the same block structure".into(),
            ));
        }
        Ok(Self {
            assignment,
            bank: self.bank.clone(),
            params: self.params.clone(),
        })
    }
}

/// Ordered node-pair count of block pair `(a, b)`: `|a| * |b|`, or
/// `|a| * (|a| - 1)` on the diagonal.
pub fn ordered_pair_count(assignment: &BlockAssignment, a: BlockId, b: BlockId) -> usize {
    let sa = assignment.size(a);
    if a == b {
        sa * (sa - 1)
    } else {
        sa * assignment.size(b)
    }
}

/// Conditional intensity of directed pair `(i, j)` at time `t` given the
/// history of events strictly before `t`.
///
/// Direct evaluation of the intensity: base rate of the pair's block pair
/// plus, for every history event in `bp(a, b)` or `bp(b, a)` that matches an
/// excitation pattern, the corresponding strength times the decayed kernel.
/// Nodes must be assigned (resolve unseen nodes first).
pub fn intensity(
    model: &BlockModel,
    history: &EventLog,
    pair: (NodeId, NodeId),
    t: f64,
) -> Result<f64> {
    let (i, j) = pair;
    if i == j {
        return Err(Error::Data(format!("self-pair ({i}, {j})")));
    }
    let assignment = model.assignment();
    let (a, b) = match (assignment.block_of(i), assignment.block_of(j)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Data(format!(
                "pair ({i}, {j}) involves unassigned nodes"
            )))
        }
    };
    let params = model
        .params_for(a, b)
        .ok_or_else(|| Error::Config(format!("no parameters for block pair ({a}, {b})")))?;

    let mut lambda = params.mu;
    for ev in history.events() {
        if ev.time >= t {
            break;
        }
        let (bx, by) = match (
            assignment.block_of(ev.source),
            assignment.block_of(ev.target),
        ) {
            (Some(bx), Some(by)) => (bx, by),
            _ => continue,
        };
        // Excitation domain: history pairs of this block pair, either direction.
        if !((bx == a && by == b) || (bx == b && by == a)) {
            continue;
        }
        if let Some(mode) = classify_excitation((ev.source, ev.target), (i, j), assignment) {
            let alpha = params.alpha(mode);
            if alpha > 0.0 {
                lambda += alpha * kernel_value(model.bank(), &params.weights, t - ev.time);
            }
        }
    }
    Ok(lambda)
}

/// Integral of the conditional intensity of `(i, j)` over the window
/// `(from, to]`, conditioning on all history events at or before `to`.
pub fn integrated_intensity(
    model: &BlockModel,
    history: &EventLog,
    pair: (NodeId, NodeId),
    from: f64,
    to: f64,
) -> Result<f64> {
    let (i, j) = pair;
    if from > to || from.is_nan() || to.is_nan() {
        return Err(Error::Data(format!("invalid window ({from}, {to}]")));
    }
    let assignment = model.assignment();
    let (a, b) = match (assignment.block_of(i), assignment.block_of(j)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Data(format!(
                "pair ({i}, {j}) involves unassigned nodes"
            )))
        }
    };
    let params = model
        .params_for(a, b)
        .ok_or_else(|| Error::Config(format!("no parameters for block pair ({a}, {b})")))?;

    let mut total = params.mu * (to - from);
    for ev in history.events() {
        if ev.time >= to {
            break;
        }
        let (bx, by) = match (
            assignment.block_of(ev.source),
            assignment.block_of(ev.target),
        ) {
            (Some(bx), Some(by)) => (bx, by),
            _ => continue,
        };
        if !((bx == a && by == b) || (bx == b && by == a)) {
            continue;
        }
        if let Some(mode) = classify_excitation((ev.source, ev.target), (i, j), assignment) {
            let alpha = params.alpha(mode);
            if alpha > 0.0 {
                let lo = (from - ev.time).max(0.0);
                total += alpha * kernel_mass(model.bank(), &params.weights, lo, to - ev.time);
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::build_assignment;
    use crate::events::Event;
    use crate::kernel::ExcitationMode;
    use approx::assert_relative_eq;

    fn model_two_blocks(params_ab: BlockPairParams) -> BlockModel {
        // Nodes 0, 1 in block 0; nodes 2, 3 in block 1; Q = 1, beta = 1.
        let assignment = build_assignment(&[0, 0, 1, 1], &[], &[], 2).unwrap();
        let bank = KernelBank::from_rates(&[1.0]).unwrap();
        let mut params = BTreeMap::new();
        for a in 0..2 {
            for b in 0..2 {
                params.insert((a, b), BlockPairParams::poisson(0.1, 1));
            }
        }
        params.insert((0, 1), params_ab);
        BlockModel::new(assignment, bank, params).unwrap()
    }

    #[test]
    fn intensity_with_empty_history_is_mu() {
        let model = model_two_blocks(BlockPairParams::poisson(0.7, 1));
        let history = EventLog::new(Vec::new(), 0.0, 10.0, 4).unwrap();
        assert_eq!(intensity(&model, &history, (0, 2), 5.0).unwrap(), 0.7);
    }

    #[test]
    fn intensity_with_zero_alphas_is_constant() {
        let model = model_two_blocks(BlockPairParams::poisson(0.7, 1));
        let events = vec![
            Event {
                source: 0,
                target: 2,
                time: 1.0,
            },
            Event {
                source: 2,
                target: 0,
                time: 2.0,
            },
        ];
        let history = EventLog::new(events, 0.0, 10.0, 4).unwrap();
        for t in [1.5, 2.5, 9.0] {
            assert_eq!(intensity(&model, &history, (0, 2), t).unwrap(), 0.7);
        }
    }

    #[test]
    fn intensity_matches_term_by_term_oracle() {
        let mut params = BlockPairParams::poisson(0.4, 1);
        params.set_alpha(ExcitationMode::SelfExcitation, 0.5);
        params.set_alpha(ExcitationMode::Reciprocal, 0.3);
        params.set_alpha(ExcitationMode::TurnContinuation, 0.2);
        let model = model_two_blocks(params);

        // Hand-built history on 4 nodes: self, reciprocal, and turn sources.
        let events = vec![
            Event {
                source: 0,
                target: 2,
                time: 1.0,
            }, // self for (0,2)
            Event {
                source: 2,
                target: 0,
                time: 2.0,
            }, // reciprocal for (0,2)
            Event {
                source: 0,
                target: 3,
                time: 3.0,
            }, // turn continuation for (0,2)
        ];
        let history = EventLog::new(events, 0.0, 10.0, 4).unwrap();
        let t = 4.5;
        let expected = 0.4
            + 0.5 * (-(t - 1.0f64)).exp()
            + 0.3 * (-(t - 2.0f64)).exp()
            + 0.2 * (-(t - 3.0f64)).exp();
        assert_relative_eq!(
            intensity(&model, &history, (0, 2), t).unwrap(),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn intensity_uses_strictly_earlier_events_only() {
        let mut params = BlockPairParams::poisson(0.4, 1);
        params.set_alpha(ExcitationMode::SelfExcitation, 0.5);
        let model = model_two_blocks(params);
        let events = vec![Event {
            source: 0,
            target: 2,
            time: 3.0,
        }];
        let history = EventLog::new(events, 0.0, 10.0, 4).unwrap();
        // At the event's own timestamp the event does not excite itself.
        assert_eq!(intensity(&model, &history, (0, 2), 3.0).unwrap(), 0.4);
    }

    #[test]
    fn intensity_never_drops_below_mu() {
        let mut params = BlockPairParams::poisson(0.4, 1);
        for mode in ExcitationMode::ALL {
            params.set_alpha(mode, 0.3);
        }
        let model = model_two_blocks(params);
        let events = vec![
            Event {
                source: 0,
                target: 2,
                time: 0.5,
            },
            Event {
                source: 2,
                target: 0,
                time: 1.0,
            },
            Event {
                source: 1,
                target: 3,
                time: 1.5,
            },
            Event {
                source: 3,
                target: 1,
                time: 2.0,
            },
        ];
        let history = EventLog::new(events, 0.0, 10.0, 4).unwrap();
        for step in 0..100 {
            let t = step as f64 * 0.1;
            let lambda = intensity(&model, &history, (0, 2), t).unwrap();
            assert!(lambda >= 0.4, "lambda {lambda} below mu at t = {t}");
        }
    }

    #[test]
    fn intensity_errors_on_unassigned_nodes() {
        let model = model_two_blocks(BlockPairParams::poisson(0.7, 1));
        let history = EventLog::new(Vec::new(), 0.0, 10.0, 9).unwrap();
        assert!(intensity(&model, &history, (0, 7), 1.0).is_err());
    }

    #[test]
    fn model_requires_params_for_populated_pairs() {
        let assignment = build_assignment(&[0, 0, 1, 1], &[], &[], 2).unwrap();
        let bank = KernelBank::from_rates(&[1.0]).unwrap();
        let mut params = BTreeMap::new();
        params.insert((0, 0), BlockPairParams::poisson(0.1, 1));
        assert!(BlockModel::new(assignment, bank, params).is_err());
    }
}
