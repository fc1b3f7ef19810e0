//! Held-out evaluation: per-event test log-likelihood with warm-started
//! history, and model comparison on an identical split.
//!
//! The conditional intensity on the test window genuinely depends on train
//! events, so evaluation conditions on them: recursive statistics warm-start
//! from the train side while compensators integrate over the test window
//! only. Test nodes absent from the fitted assignment join the largest
//! community before scoring.

use serde::Serialize;

use crate::assignment::BlockId;
use crate::error::{Error, Result};
use crate::estimator::{fit_model, FitOptions, FittedModel};
use crate::events::{EventLog, NodeId, TrainTestSplit};
use crate::kernel::{BlockPairParams, MU_FLOOR};
use crate::likelihood::{total_log_likelihood, LikelihoodWindow, TotalLogLikelihood};
use crate::model::{ordered_pair_count, BlockModel};

/// Per-block-pair share of a held-out evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct PairEval {
    pub source_block: BlockId,
    pub target_block: BlockId,
    pub ll: f64,
    pub events: usize,
}

/// Held-out evaluation summary.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub total_ll: f64,
    pub event_count: usize,
    /// The headline metric: total test log-likelihood over test event count.
    pub per_event_ll: f64,
    /// Test nodes that were absent from the fitted assignment.
    pub unseen_nodes: usize,
    /// Block the unseen nodes joined, when any existed.
    pub unseen_block: Option<BlockId>,
    /// True when no community block existed and the largest block of any
    /// kind had to absorb the unseen nodes.
    pub unseen_fallback: bool,
    /// Block pairs first populated by unseen nodes, scored with the
    /// degenerate zero-event parameters.
    pub unfitted_pairs: usize,
    pub per_pair: Vec<PairEval>,
}

/// Scores a fitted model on the held-out side of a split.
pub fn test_log_likelihood_per_event(
    model: &FittedModel,
    split: &TrainTestSplit,
) -> Result<EvalReport> {
    if split.test.is_empty() {
        return Err(Error::Data("test window holds no events".into()));
    }

    // Merged history: train events condition the test-window intensities.
    let mut events = split.train.events().to_vec();
    events.extend_from_slice(split.test.events());
    let node_count = split.train.node_count().max(split.test.node_count());
    let merged = EventLog::new(
        events,
        split.train.t_start(),
        split.test.t_end(),
        node_count,
    )?;

    let mut test_nodes: Vec<NodeId> = split
        .test
        .events()
        .iter()
        .flat_map(|ev| [ev.source, ev.target])
        .collect();
    test_nodes.sort_unstable();
    test_nodes.dedup();
    let (extended, unseen_nodes, unseen_fallback) =
        model.model.assignment().with_unseen_assigned(&test_nodes)?;
    let unseen_block = (unseen_nodes > 0)
        .then(|| {
            let first_unseen = *test_nodes
                .iter()
                .find(|&&n| model.model.assignment().block_of(n).is_none())
                .expect("unseen node exists");
            extended.block_of(first_unseen)
        })
        .flatten();

    // Unseen nodes can populate block pairs the fit never saw (the joined
    // community was a singleton). Fill those with the degenerate zero-event
    // solution: floored base rate, no excitation.
    let bank = model.model.bank();
    let mut params = model.model.params().clone();
    let mut unfitted_pairs = 0usize;
    for a in 0..extended.block_count() {
        for b in 0..extended.block_count() {
            if ordered_pair_count(&extended, a, b) > 0 && !params.contains_key(&(a, b)) {
                params.insert((a, b), BlockPairParams::poisson(MU_FLOOR, bank.q()));
                unfitted_pairs += 1;
            }
        }
    }
    let scoring_model = BlockModel::new(extended, bank.clone(), params)?;

    let window = LikelihoodWindow::test(split.t_split, split.test.t_end());
    let total = total_log_likelihood(&scoring_model, &merged, &window)?;
    if total.event_count != split.test.len() {
        return Err(Error::Numerical(format!(
            "evaluation covered {} of {} test events",
            total.event_count,
            split.test.len()
        )));
    }
    Ok(report_from_total(
        total,
        unseen_nodes,
        unseen_block,
        unseen_fallback,
        unfitted_pairs,
    ))
}

fn report_from_total(
    total: TotalLogLikelihood,
    unseen_nodes: usize,
    unseen_block: Option<BlockId>,
    unseen_fallback: bool,
    unfitted_pairs: usize,
) -> EvalReport {
    EvalReport {
        total_ll: total.total,
        event_count: total.event_count,
        per_event_ll: total.total / total.event_count as f64,
        unseen_nodes,
        unseen_block,
        unseen_fallback,
        unfitted_pairs,
        per_pair: total
            .per_pair
            .into_iter()
            .map(|p| PairEval {
                source_block: p.source_block,
                target_block: p.target_block,
                ll: p.ll,
                events: p.events,
            })
            .collect(),
    }
}

/// Re-scores a fitted model on its own train window; bit-identical to the
/// fit's reported total by construction.
pub fn train_window_log_likelihood(
    model: &FittedModel,
    train: &EventLog,
) -> Result<TotalLogLikelihood> {
    total_log_likelihood(&model.model, train, &LikelihoodWindow::full(train))
}

/// Outcome of fitting two configurations on one split and scoring both on
/// the identical test set.
#[derive(Debug)]
pub struct ModelComparison {
    pub main: EvalReport,
    pub baseline: EvalReport,
    /// `main.per_event_ll - baseline.per_event_ll`; positive favors `main`.
    pub per_event_difference: f64,
    pub main_model: FittedModel,
    pub baseline_model: FittedModel,
}

/// Fits both option sets on the train side and evaluates both on the test
/// side. Identical options produce a difference of exactly zero.
pub fn compare_models(
    split: &TrainTestSplit,
    options_main: &FitOptions,
    options_baseline: &FitOptions,
) -> Result<ModelComparison> {
    let main_model = fit_model(&split.train, options_main)?;
    let baseline_model = fit_model(&split.train, options_baseline)?;
    let main = test_log_likelihood_per_event(&main_model, split)?;
    let baseline = test_log_likelihood_per_event(&baseline_model, split)?;
    Ok(ModelComparison {
        per_event_difference: main.per_event_ll - baseline.per_event_ll,
        main,
        baseline,
        main_model,
        baseline_model,
    })
}
