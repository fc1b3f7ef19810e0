//! Model fitting: clustering with hub/inactive reassignment followed by
//! independent bounded maximum-likelihood fits per ordered block pair.
//!
//! Each block pair maximizes its exact log-likelihood over
//! `theta = (mu, alpha_1..alpha_6, w_1..w_{Q-1})` with `mu >= MU_FLOOR`,
//! `alpha >= 0`, and the kernel weights represented by `Q - 1` free
//! variables in `[0, 1]` whose sum stays below one, restoring the simplex
//! via `c_Q = 1 - sum(w)`. Excitation strengths whose compensator mass is
//! identically zero cannot influence the objective; they are reported as
//! unidentified and set to zero. Fits are independent across block pairs and
//! run in parallel; results join in block-pair order, so a fit is a pure
//! function of `(log, options)`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment::{
    build_assignment, select_hubs, select_inactive, BlockAssignment, BlockId, BlockKind,
    ClusteringConfig,
};
use crate::error::{Error, Result};
use crate::events::{
    aggregate_counts, compute_activities, ActivityVector, Event, EventLog, NodeId,
};
use crate::kernel::{
    BlockPairParams, ExcitationMode, KernelBank, KernelScale, MODE_COUNT, MU_FLOOR,
};
use crate::likelihood::{sweep, BlockPairData, Direction, LikelihoodWindow};
use crate::model::BlockModel;
use crate::optim::{minimize, FeasibleSet, OptimOptions, OptimResult};
use crate::spectral::spectral_cluster;

/// Everything a fit needs besides the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub clustering: ClusteringConfig,
    pub bank: KernelBank,
    /// Convergence threshold on the projected-gradient infinity norm.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            clustering: ClusteringConfig::default(),
            bank: KernelBank::default_bank(),
            grad_tol: 1e-6,
            max_iters: 500,
        }
    }
}

impl FitOptions {
    pub fn new(clustering: ClusteringConfig, bank: KernelBank) -> Self {
        Self {
            clustering,
            bank,
            ..Self::default()
        }
    }

    fn optim_options(&self) -> OptimOptions {
        OptimOptions {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            ..OptimOptions::default()
        }
    }
}

/// Per-block-pair fit outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockPairDiagnostics {
    pub source_block: BlockId,
    pub target_block: BlockId,
    /// Ordered node pairs in the block pair.
    pub pair_count: usize,
    pub events_forward: usize,
    pub events_backward: usize,
    /// Log-term events inside the fitting window.
    pub window_events: usize,
    pub initial_ll: f64,
    pub final_ll: f64,
    pub iterations: usize,
    pub converged: bool,
    /// No window events: parameters pinned to the degenerate solution.
    pub degenerate: bool,
    /// Modes with zero compensator mass, reported and zeroed.
    pub unidentified: Vec<ExcitationMode>,
    /// Set when the pair's optimization failed outright; the pair then
    /// carries the degenerate parameters and the fit as a whole proceeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A fitted model with its diagnostics and provenance.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub model: BlockModel,
    pub train_start: f64,
    pub train_end: f64,
    pub total_train_ll: f64,
    pub stability_radius: f64,
    pub diagnostics: Vec<BlockPairDiagnostics>,
    pub warnings: Vec<String>,
    pub seed: u64,
    pub data_fingerprint: String,
    pub options: FitOptions,
}

/// Initial parameters: base rate at three quarters of the per-pair event
/// rate (floored), all excitation strengths at 0.1, uniform kernel weights.
pub fn initialize_params(
    data: &BlockPairData,
    window: &LikelihoodWindow,
    bank: &KernelBank,
) -> BlockPairParams {
    let events = data.window_event_count(window) as f64;
    let rate = if window.length() > 0.0 {
        events / (window.length() * data.pair_count as f64)
    } else {
        0.0
    };
    BlockPairParams {
        mu: (0.75 * rate).max(MU_FLOOR),
        alphas: [0.1; MODE_COUNT],
        weights: vec![1.0 / bank.q() as f64; bank.q()],
    }
}

fn pack(params: &BlockPairParams) -> Vec<f64> {
    let mut theta = Vec::with_capacity(1 + MODE_COUNT + params.weights.len() - 1);
    theta.push(params.mu);
    theta.extend_from_slice(&params.alphas);
    theta.extend_from_slice(&params.weights[..params.weights.len() - 1]);
    theta
}

fn unpack(theta: &[f64], q: usize) -> BlockPairParams {
    let mut alphas = [0.0; MODE_COUNT];
    alphas.copy_from_slice(&theta[1..1 + MODE_COUNT]);
    let free = &theta[1 + MODE_COUNT..];
    let mut weights: Vec<f64> = free.to_vec();
    weights.push(1.0 - free.iter().sum::<f64>());
    debug_assert_eq!(weights.len(), q);
    BlockPairParams {
        mu: theta[0],
        alphas,
        weights,
    }
}

fn feasible_set(q: usize) -> FeasibleSet {
    let dim = 1 + MODE_COUNT + (q - 1);
    let mut lower = vec![0.0; dim];
    let mut upper = vec![f64::INFINITY; dim];
    lower[0] = MU_FLOOR;
    for w in upper.iter_mut().skip(1 + MODE_COUNT) {
        *w = 1.0;
    }
    let set = FeasibleSet::box_only(lower, upper);
    if q > 2 {
        set.with_budget(1 + MODE_COUNT..dim, 1.0)
    } else {
        set
    }
}

/// Maximizes the block-pair log-likelihood over the bounded parameter box.
pub fn fit_block_pair(
    data: &BlockPairData,
    window: &LikelihoodWindow,
    options: &FitOptions,
) -> Result<(BlockPairParams, BlockPairDiagnostics)> {
    let bank = &options.bank;
    let q = bank.q();
    let events_forward = data
        .events
        .iter()
        .filter(|e| e.direction == Direction::Forward)
        .count();
    let events_backward = data.events.len() - events_forward;
    let window_events = data.window_event_count(window);

    let mut diagnostics = BlockPairDiagnostics {
        source_block: data.source_block,
        target_block: data.target_block,
        pair_count: data.pair_count,
        events_forward,
        events_backward,
        window_events,
        initial_ll: 0.0,
        final_ll: 0.0,
        iterations: 0,
        converged: true,
        degenerate: false,
        unidentified: Vec::new(),
        error: None,
    };

    if window_events == 0 {
        let params = BlockPairParams {
            mu: MU_FLOOR,
            alphas: [0.0; MODE_COUNT],
            weights: vec![1.0 / q as f64; q],
        };
        let ll = sweep(&params, bank, data, window, false)?.ll;
        diagnostics.initial_ll = ll;
        diagnostics.final_ll = ll;
        diagnostics.degenerate = true;
        return Ok((params, diagnostics));
    }

    let init = initialize_params(data, window, bank);
    let theta0 = pack(&init);
    let set = feasible_set(q);

    let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        let params = unpack(theta, q);
        match sweep(&params, bank, data, window, true) {
            Ok(out) => {
                let grad = out.gradient.expect("gradient requested");
                let mut neg = Vec::with_capacity(theta.len());
                neg.push(-grad.mu);
                neg.extend(grad.alphas.iter().map(|g| -g));
                neg.extend(grad.free_weight_partials().iter().map(|g| -g));
                (-out.ll, neg)
            }
            Err(_) => (f64::INFINITY, vec![0.0; theta.len()]),
        }
    };

    let result: OptimResult = minimize(objective, &theta0, &set, &options.optim_options())?;
    let mut params = unpack(&result.x, q);
    // Weights can carry a tiny negative residue from the simplex closure.
    if let Some(last) = params.weights.last_mut() {
        if *last < 0.0 && *last > -1e-12 {
            *last = 0.0;
        }
    }

    // Zero out structurally unidentified strengths: with no compensator mass
    // the objective does not depend on them, so they sit at the initial 0.1.
    let first_sweep = sweep(&params, bank, data, window, false)?;
    for (m, &mass) in first_sweep.mode_mass.iter().enumerate() {
        if mass == 0.0 && params.alphas[m] != 0.0 {
            params.alphas[m] = 0.0;
            diagnostics.unidentified.push(ExcitationMode::ALL[m]);
        }
    }

    let initial_ll = sweep(&init, bank, data, window, false)?.ll;
    let final_ll = sweep(&params, bank, data, window, false)?.ll;
    diagnostics.initial_ll = initial_ll;
    diagnostics.final_ll = final_ll;
    diagnostics.iterations = result.iterations;
    diagnostics.converged = result.converged;
    if final_ll + 1e-9 * final_ll.abs().max(1.0) < initial_ll {
        return Err(Error::Numerical(format!(
            "fit of block pair ({}, {}) regressed: {initial_ll} -> {final_ll}",
            data.source_block, data.target_block
        )));
    }
    Ok((params, diagnostics))
}

/// Clustering outcome shared by the fit pipeline and the `cluster` command.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    /// Assignment over the full node space; nodes absent from the data stay
    /// unassigned.
    pub assignment: BlockAssignment,
    /// Activities over the full node space.
    pub activities: ActivityVector,
    /// Nodes that had at least one event, ascending.
    pub active_nodes: Vec<NodeId>,
    /// Spectral labels of the active nodes (same order as `active_nodes`).
    pub spectral_labels: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Clustering + hub/inactive reassignment over the nodes active in `log`.
pub fn build_model_assignment(log: &EventLog, config: &ClusteringConfig) -> Result<ClusterOutcome> {
    let n = log.node_count();
    let mut seen = vec![false; n];
    for ev in log.events() {
        seen[ev.source as usize] = true;
        seen[ev.target as usize] = true;
    }
    let active_nodes: Vec<NodeId> = (0..n as NodeId).filter(|&i| seen[i as usize]).collect();
    if active_nodes.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 active nodes, found {}",
            active_nodes.len()
        )));
    }
    config.validate(active_nodes.len())?;

    let mut compact_of = vec![u32::MAX; n];
    for (compact, &node) in active_nodes.iter().enumerate() {
        compact_of[node as usize] = compact as u32;
    }
    let compact_events: Vec<Event> = log
        .events()
        .iter()
        .map(|ev| Event {
            source: compact_of[ev.source as usize],
            target: compact_of[ev.target as usize],
            time: ev.time,
        })
        .collect();
    let compact_log = EventLog::new(
        compact_events,
        log.t_start(),
        log.t_end(),
        active_nodes.len(),
    )?;
    let counts = aggregate_counts(&compact_log);
    let activities_compact = compute_activities(&compact_log);

    let mut warnings = Vec::new();
    let spectral = spectral_cluster(&counts, config.k, config.seed, config.kmeans_restarts)?;
    if spectral.zero_matrix_fallback {
        warnings.push("count matrix is all zeros; all nodes fell back to one community".into());
    }
    let hubs = select_hubs(&activities_compact, config.n_hubs);
    let inactive = select_inactive(&activities_compact, config.inactive_quantile)?;
    if !inactive.is_empty() && inactive.len() + hubs.len() >= active_nodes.len() {
        warnings.push(format!(
            "degenerate hyperparameters: {} of {} active nodes are hubs or inactive",
            inactive.len() + hubs.len(),
            active_nodes.len()
        ));
    }
    let compact_assignment = build_assignment(&spectral.labels, &hubs, &inactive, config.k)?;

    let mut membership = vec![None; n];
    for (compact, &node) in active_nodes.iter().enumerate() {
        membership[node as usize] = compact_assignment.block_of(compact as NodeId);
    }
    let assignment = BlockAssignment::new(membership, compact_assignment.kinds().to_vec())?;
    Ok(ClusterOutcome {
        assignment,
        activities: compute_activities(log),
        active_nodes,
        spectral_labels: spectral.labels,
        warnings,
    })
}

/// SHA-256 over the log's canonical byte encoding.
pub fn data_fingerprint(log: &EventLog) -> String {
    let mut hasher = Sha256::new();
    hasher.update((log.node_count() as u64).to_le_bytes());
    hasher.update(log.t_start().to_le_bytes());
    hasher.update(log.t_end().to_le_bytes());
    for ev in log.events() {
        hasher.update(ev.source.to_le_bytes());
        hasher.update(ev.target.to_le_bytes());
        hasher.update(ev.time.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs the whole fitting pipeline on a log: aggregate, cluster, reassign
/// hubs/inactive, then fit every populated ordered block pair independently.
pub fn fit_model(log: &EventLog, options: &FitOptions) -> Result<FittedModel> {
    if log.node_count() < 2 {
        return Err(Error::Data("need at least 2 nodes to fit".into()));
    }
    if log.horizon() <= 0.0 {
        return Err(Error::Data("cannot fit on a zero-length horizon".into()));
    }
    let cluster = build_model_assignment(log, &options.clustering)?;
    let mut warnings = cluster.warnings.clone();

    let window = LikelihoodWindow::full(log);
    let all_data = BlockPairData::build_all(log, &cluster.assignment);
    // A failing pair is flagged and pinned to the degenerate parameters; it
    // never aborts the rest of the fit.
    let fits: Vec<(BlockPairParams, BlockPairDiagnostics)> = all_data
        .par_iter()
        .map(|data| {
            fit_block_pair(data, &window, options).unwrap_or_else(|err| {
                let params = BlockPairParams {
                    mu: MU_FLOOR,
                    alphas: [0.0; MODE_COUNT],
                    weights: vec![1.0 / options.bank.q() as f64; options.bank.q()],
                };
                let diagnostics = BlockPairDiagnostics {
                    source_block: data.source_block,
                    target_block: data.target_block,
                    pair_count: data.pair_count,
                    events_forward: 0,
                    events_backward: 0,
                    window_events: data.window_event_count(&window),
                    initial_ll: f64::NAN,
                    final_ll: f64::NAN,
                    iterations: 0,
                    converged: false,
                    degenerate: true,
                    unidentified: Vec::new(),
                    error: Some(err.to_string()),
                };
                (params, diagnostics)
            })
        })
        .collect();

    let mut params = BTreeMap::new();
    let mut diagnostics = Vec::with_capacity(fits.len());
    for ((p, d), data) in fits.into_iter().zip(&all_data) {
        params.insert((data.source_block, data.target_block), p);
        diagnostics.push(d);
    }
    let total_train_ll = diagnostics
        .iter()
        .filter(|d| d.final_ll.is_finite())
        .map(|d| d.final_ll)
        .sum();
    let non_converged = diagnostics.iter().filter(|d| !d.converged).count();
    if non_converged > 0 {
        warnings.push(format!(
            "{non_converged} block-pair fit(s) did not converge within {} iterations",
            options.max_iters
        ));
    }
    for diag in diagnostics.iter().filter(|d| d.error.is_some()) {
        warnings.push(format!(
            "block pair ({}, {}) failed to fit: {}",
            diag.source_block,
            diag.target_block,
            diag.error.as_ref().expect("filtered")
        ));
    }

    let model = BlockModel::new(cluster.assignment, options.bank.clone(), params)?;
    let stability_radius = crate::generator::stability_check(&model);
    if stability_radius >= 1.0 {
        warnings.push(format!(
            "fitted model is explosive: branching spectral radius {stability_radius:.4} >= 1"
        ));
    }

    Ok(FittedModel {
        model,
        train_start: log.t_start(),
        train_end: log.t_end(),
        total_train_ll,
        stability_radius,
        diagnostics,
        warnings,
        seed: options.clustering.seed,
        data_fingerprint: data_fingerprint(log),
        options: options.clone(),
    })
}

// --- persistence ---------------------------------------------------------

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    seed: u64,
    data_fingerprint: String,
    options: FitOptions,
    train_window: [f64; 2],
    total_train_ll: f64,
    stability_radius: f64,
    warnings: Vec<String>,
    kernel_bank: Vec<KernelScale>,
    node_count: usize,
    blocks: Vec<BlockEntry>,
    nodes: Vec<NodeEntry>,
    block_pairs: Vec<PairEntry>,
}

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    id: BlockId,
    kind: BlockKind,
    size: usize,
}

#[derive(Serialize, Deserialize)]
struct NodeEntry {
    node: NodeId,
    block: BlockId,
}

#[derive(Serialize, Deserialize)]
struct PairEntry {
    source_block: BlockId,
    target_block: BlockId,
    mu: f64,
    alphas: AlphaEntry,
    weights: Vec<f64>,
    diagnostics: BlockPairDiagnostics,
}

#[derive(Serialize, Deserialize)]
struct AlphaEntry {
    #[serde(rename = "self")]
    self_excitation: f64,
    reciprocal: f64,
    turn_continuation: f64,
    generalized_reciprocity: f64,
    allied_continuation: f64,
    allied_reciprocity: f64,
}

impl From<&[f64; MODE_COUNT]> for AlphaEntry {
    fn from(a: &[f64; MODE_COUNT]) -> Self {
        Self {
            self_excitation: a[0],
            reciprocal: a[1],
            turn_continuation: a[2],
            generalized_reciprocity: a[3],
            allied_continuation: a[4],
            allied_reciprocity: a[5],
        }
    }
}

impl AlphaEntry {
    fn to_array(&self) -> [f64; MODE_COUNT] {
        [
            self.self_excitation,
            self.reciprocal,
            self.turn_continuation,
            self.generalized_reciprocity,
            self.allied_continuation,
            self.allied_reciprocity,
        ]
    }
}

impl FittedModel {
    /// Human-readable, bit-stable JSON encoding.
    pub fn to_json(&self) -> String {
        let assignment = self.model.assignment();
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            seed: self.seed,
            data_fingerprint: self.data_fingerprint.clone(),
            options: self.options.clone(),
            train_window: [self.train_start, self.train_end],
            total_train_ll: self.total_train_ll,
            stability_radius: self.stability_radius,
            warnings: self.warnings.clone(),
            kernel_bank: self.model.bank().scales().to_vec(),
            node_count: assignment.node_count(),
            blocks: (0..assignment.block_count())
                .map(|id| BlockEntry {
                    id,
                    kind: assignment.kind(id),
                    size: assignment.size(id),
                })
                .collect(),
            nodes: assignment
                .membership()
                .iter()
                .enumerate()
                .filter_map(|(node, block)| {
                    block.map(|block| NodeEntry {
                        node: node as NodeId,
                        block,
                    })
                })
                .collect(),
            block_pairs: self
                .model
                .params()
                .iter()
                .map(|(&(a, b), p)| PairEntry {
                    source_block: a,
                    target_block: b,
                    mu: p.mu,
                    alphas: AlphaEntry::from(&p.alphas),
                    weights: p.weights.clone(),
                    diagnostics: self
                        .diagnostics
                        .iter()
                        .find(|d| d.source_block == a && d.target_block == b)
                        .cloned()
                        .unwrap_or_else(|| BlockPairDiagnostics {
                            source_block: a,
                            target_block: b,
                            pair_count: self.model.pair_count(a, b),
                            events_forward: 0,
                            events_backward: 0,
                            window_events: 0,
                            initial_ll: 0.0,
                            final_ll: 0.0,
                            iterations: 0,
                            converged: true,
                            degenerate: true,
                            unidentified: Vec::new(),
                            error: None,
                        }),
                })
                .collect(),
        };
        let mut json = serde_json::to_string_pretty(&file).expect("model serialization");
        json.push('\n');
        json
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("invalid model file: {e}")))?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let mut membership = vec![None; file.node_count];
        for entry in &file.nodes {
            if entry.node as usize >= membership.len() {
                return Err(Error::Data(format!("node {} out of range", entry.node)));
            }
            membership[entry.node as usize] = Some(entry.block);
        }
        let kinds: Vec<BlockKind> = file.blocks.iter().map(|b| b.kind).collect();
        let assignment = BlockAssignment::new(membership, kinds)?;
        let bank = KernelBank::new(file.kernel_bank)?;
        let mut params = BTreeMap::new();
        let mut diagnostics = Vec::new();
        for pair in file.block_pairs {
            params.insert(
                (pair.source_block, pair.target_block),
                BlockPairParams {
                    mu: pair.mu,
                    alphas: pair.alphas.to_array(),
                    weights: pair.weights,
                },
            );
            diagnostics.push(pair.diagnostics);
        }
        let model = BlockModel::new(assignment, bank, params)?;
        Ok(FittedModel {
            model,
            train_start: file.train_window[0],
            train_end: file.train_window[1],
            total_train_ll: file.total_train_ll,
            stability_radius: file.stability_radius,
            diagnostics,
            warnings: file.warnings,
            seed: file.seed,
            data_fingerprint: file.data_fingerprint,
            options: file.options,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}
