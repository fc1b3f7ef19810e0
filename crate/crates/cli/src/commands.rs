//! The five pipeline commands. Each computes its results fully before
//! writing anything, so a failing run leaves no partial outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use minch_core::assignment::BlockKind;
use minch_core::estimator::{build_model_assignment, data_fingerprint, fit_model, FittedModel};
use minch_core::evaluation::{
    compare_models, test_log_likelihood_per_event, train_window_log_likelihood, EvalReport,
};
use minch_core::events::{
    parse_events, split_by_time, write_events, EventLog, NodeId, ParseOutcome, TrainTestSplit,
};
use minch_core::generator::{
    simulate as run_simulation, simulate_unchecked, stability_check, SimSpec,
};
use minch_core::kernel::ExcitationMode;

use crate::config::{Overrides, RunConfig};
use crate::tables::{kv_lines, matrix_csv};
use crate::CliError;

fn load_events(config: &RunConfig) -> Result<ParseOutcome, CliError> {
    let path = config.data_path()?;
    let file = fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let outcome = parse_events(file, &config.parse_format()?)?;
    if outcome.self_loops_dropped > 0 {
        eprintln!(
            "warning: dropped {} self-loop row(s) from {}",
            outcome.self_loops_dropped,
            path.display()
        );
    }
    Ok(outcome)
}

fn split_events(config: &RunConfig, log: &EventLog) -> Result<TrainTestSplit, CliError> {
    Ok(split_by_time(log, config.split.train_fraction)?)
}

struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputSet {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    /// Writes every staged file; called only after all computation is done.
    fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", self.dir.display())))?;
        let mut written = Vec::new();
        for (name, content) in self.files {
            let path = self.dir.join(name);
            fs::write(&path, content)
                .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn block_label(kind: BlockKind, id: usize) -> String {
    match kind {
        BlockKind::Community => format!("community{id}"),
        BlockKind::Hub => format!("hub{id}"),
        BlockKind::Inactive => format!("inactive{id}"),
    }
}

pub fn cluster(overrides: &Overrides) -> Result<(), CliError> {
    let config = RunConfig::resolve(overrides)?;
    let parsed = load_events(&config)?;
    let outcome = build_model_assignment(&parsed.log, &config.clustering_config())?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    let assignment = &outcome.assignment;

    let mut assignment_tsv = String::from("node\tblock\n");
    for node in 0..assignment.node_count() {
        if let Some(block) = assignment.block_of(node as NodeId) {
            assignment_tsv.push_str(&format!(
                "{}\t{block}\n",
                parsed.original_id(node as NodeId)
            ));
        }
    }
    let mut blocks_tsv = String::from("block\tkind\tsize\n");
    for block in 0..assignment.block_count() {
        let kind = match assignment.kind(block) {
            BlockKind::Community => "community",
            BlockKind::Hub => "hub",
            BlockKind::Inactive => "inactive",
        };
        blocks_tsv.push_str(&format!("{block}\t{kind}\t{}\n", assignment.size(block)));
    }
    let mut activity_tsv = String::from("node\tactivity\n");
    for node in 0..parsed.log.node_count() {
        activity_tsv.push_str(&format!(
            "{}\t{}\n",
            parsed.original_id(node as NodeId),
            outcome.activities.get(node as NodeId)
        ));
    }

    // Canonical event file: normalized times under original labels;
    // re-parsing it reproduces the identical log.
    let mut canonical = Vec::new();
    write_events(
        &parsed.log,
        Some(&parsed.original_ids),
        config.parse_format()?.delimiter,
        &mut canonical,
    )?;

    let mut outputs = OutputSet::new(&config.out);
    outputs.add("assignment.tsv", assignment_tsv);
    outputs.add("blocks.tsv", blocks_tsv);
    outputs.add("activity.tsv", activity_tsv);
    outputs.add(
        "canonical_events.csv",
        String::from_utf8(canonical).expect("csv is utf-8"),
    );
    let written = outputs.commit()?;

    let communities = assignment
        .kinds()
        .iter()
        .filter(|k| **k == BlockKind::Community)
        .count();
    let hubs = assignment
        .kinds()
        .iter()
        .filter(|k| **k == BlockKind::Hub)
        .count();
    let inactive = assignment
        .kinds()
        .iter()
        .filter(|k| **k == BlockKind::Inactive)
        .count();
    print!(
        "{}",
        kv_lines(&[
            ("nodes", parsed.log.node_count().to_string()),
            ("events", parsed.log.len().to_string()),
            ("blocks", assignment.block_count().to_string()),
            ("communities", communities.to_string()),
            ("hubs", hubs.to_string()),
            ("inactive_blocks", inactive.to_string()),
            (
                "outputs",
                written
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
        ])
    );
    Ok(())
}

pub fn fit(overrides: &Overrides) -> Result<(), CliError> {
    let config = RunConfig::resolve(overrides)?;
    let parsed = load_events(&config)?;
    let split = split_events(&config, &parsed.log)?;
    let options = config.fit_options()?;
    let fitted = fit_model(&split.train, &options)?;
    for warning in &fitted.warnings {
        eprintln!("warning: {warning}");
    }

    let assignment = fitted.model.assignment();
    let labels: Vec<String> = (0..assignment.block_count())
        .map(|b| block_label(assignment.kind(b), b))
        .collect();

    let mut report = kv_lines(&[
        ("train_events", split.train.len().to_string()),
        ("test_events", split.test.len().to_string()),
        (
            "train_window",
            format!("[{}, {}]", fitted.train_start, fitted.train_end),
        ),
        ("total_train_ll", fitted.total_train_ll.to_string()),
        ("stability_radius", fitted.stability_radius.to_string()),
        ("block_pairs", fitted.diagnostics.len().to_string()),
        ("seed", fitted.seed.to_string()),
        ("data_fingerprint", fitted.data_fingerprint.clone()),
    ]);
    report.push('\n');
    report.push_str(
        "source,target,pairs,window_events,mu,a_self,a_reciprocal,a_turn,a_genrecip,a_alliedcont,a_alliedrecip,weights,final_ll,iterations,converged,degenerate\n",
    );
    for diag in &fitted.diagnostics {
        let params = fitted
            .model
            .params_for(diag.source_block, diag.target_block)
            .expect("fitted pair");
        let weights = params
            .weights
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        report.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            diag.source_block,
            diag.target_block,
            diag.pair_count,
            diag.window_events,
            params.mu,
            params.alphas[0],
            params.alphas[1],
            params.alphas[2],
            params.alphas[3],
            params.alphas[4],
            params.alphas[5],
            weights,
            diag.final_ll,
            diag.iterations,
            diag.converged,
            diag.degenerate,
        ));
    }

    // Assignment under the original node labels (model.json keeps the dense
    // ids the canonical parse produces).
    let mut assignment_tsv = String::from("node\tblock\tkind\n");
    for node in 0..assignment.node_count() {
        if let Some(block) = assignment.block_of(node as NodeId) {
            let kind = match assignment.kind(block) {
                BlockKind::Community => "community",
                BlockKind::Hub => "hub",
                BlockKind::Inactive => "inactive",
            };
            assignment_tsv.push_str(&format!(
                "{}\t{block}\t{kind}\n",
                parsed.original_id(node as NodeId)
            ));
        }
    }

    let mut outputs = OutputSet::new(&config.out);
    outputs.add("model.json", fitted.to_json());
    outputs.add("fit_report.txt", report);
    outputs.add("assignment.tsv", assignment_tsv);

    // Parameter grids: row = source block, column = target block.
    let cell_from = |extract: &dyn Fn(usize, usize) -> Option<f64>| {
        matrix_csv("block", &labels, &labels, extract)
    };
    outputs.add(
        "matrix_mu.csv",
        cell_from(&|r, c| fitted.model.params_for(r, c).map(|p| p.mu)),
    );
    for mode in ExcitationMode::ALL {
        outputs.add(
            &format!("matrix_alpha_{}.csv", mode.name()),
            cell_from(&|r, c| fitted.model.params_for(r, c).map(|p| p.alpha(mode))),
        );
    }
    for (qi, scale) in fitted.model.bank().scales().iter().enumerate() {
        outputs.add(
            &format!("matrix_weight_{}.csv", scale.name),
            cell_from(&|r, c| fitted.model.params_for(r, c).map(|p| p.weights[qi])),
        );
    }
    let written = outputs.commit()?;

    print!(
        "{}",
        kv_lines(&[
            ("train_events", split.train.len().to_string()),
            ("blocks", assignment.block_count().to_string()),
            ("total_train_ll", fitted.total_train_ll.to_string()),
            ("stability_radius", fitted.stability_radius.to_string()),
            ("model", config.out.join("model.json").display().to_string()),
            ("files", written.len().to_string()),
        ])
    );
    Ok(())
}

fn eval_report_text(report: &EvalReport) -> String {
    kv_lines(&[
        ("test_events", report.event_count.to_string()),
        ("total_test_ll", report.total_ll.to_string()),
        ("per_event_test_ll", report.per_event_ll.to_string()),
        ("unseen_nodes", report.unseen_nodes.to_string()),
        (
            "unseen_block",
            report
                .unseen_block
                .map_or_else(|| "-".into(), |b| b.to_string()),
        ),
        ("unseen_fallback", report.unseen_fallback.to_string()),
        ("unfitted_pairs", report.unfitted_pairs.to_string()),
    ])
}

fn per_pair_csv(report: &EvalReport) -> String {
    let mut out = String::from("source,target,test_events,test_ll\n");
    for pair in &report.per_pair {
        out.push_str(&format!(
            "{},{},{},{}\n",
            pair.source_block, pair.target_block, pair.events, pair.ll
        ));
    }
    out
}

pub fn evaluate(
    overrides: &Overrides,
    model_path: Option<&Path>,
    compare: bool,
    train_window: bool,
) -> Result<(), CliError> {
    let config = RunConfig::resolve(overrides)?;
    let parsed = load_events(&config)?;
    let split = split_events(&config, &parsed.log)?;

    if compare {
        let comparison = compare_models(
            &split,
            &config.fit_options()?,
            &config.baseline_fit_options()?,
        )?;
        let text = kv_lines(&[
            ("test_events", comparison.main.event_count.to_string()),
            (
                "per_event_ll_minch",
                comparison.main.per_event_ll.to_string(),
            ),
            (
                "per_event_ll_baseline",
                comparison.baseline.per_event_ll.to_string(),
            ),
            ("difference", comparison.per_event_difference.to_string()),
            ("total_ll_minch", comparison.main.total_ll.to_string()),
            (
                "total_ll_baseline",
                comparison.baseline.total_ll.to_string(),
            ),
        ]);
        let json = serde_json::json!({
            "main": comparison.main,
            "baseline": comparison.baseline,
            "per_event_difference": comparison.per_event_difference,
        });
        let mut outputs = OutputSet::new(&config.out);
        outputs.add("comparison.txt", text.clone());
        outputs.add(
            "comparison.json",
            serde_json::to_string_pretty(&json).expect("comparison json") + "\n",
        );
        outputs.commit()?;
        print!("{text}");
        return Ok(());
    }

    let model_path =
        model_path.ok_or_else(|| CliError::Usage("evaluate needs --model or --compare".into()))?;
    let fitted = FittedModel::load(model_path)?;
    if fitted.data_fingerprint != data_fingerprint(&split.train) {
        eprintln!("warning: the train split does not match the data the model was fitted on");
    }

    if train_window {
        let recomputed = train_window_log_likelihood(&fitted, &split.train)?;
        let matches = recomputed.total.to_bits() == fitted.total_train_ll.to_bits();
        let text = kv_lines(&[
            ("train_events", recomputed.event_count.to_string()),
            ("train_ll_recomputed", recomputed.total.to_string()),
            ("train_ll_reported", fitted.total_train_ll.to_string()),
            ("matches_fit_report", matches.to_string()),
        ]);
        let mut outputs = OutputSet::new(&config.out);
        outputs.add("train_eval.txt", text.clone());
        outputs.commit()?;
        print!("{text}");
        return Ok(());
    }

    let report = test_log_likelihood_per_event(&fitted, &split)?;
    let text = eval_report_text(&report);

    // Per-block-pair breakdown as a matrix grid alongside the flat rows.
    let assignment = fitted.model.assignment();
    let labels: Vec<String> = (0..assignment.block_count())
        .map(|b| block_label(assignment.kind(b), b))
        .collect();
    let mut ll_by_pair = BTreeMap::new();
    for pair in &report.per_pair {
        ll_by_pair.insert((pair.source_block, pair.target_block), pair.ll);
    }
    let ll_matrix = matrix_csv("block", &labels, &labels, |r, c| {
        ll_by_pair.get(&(r, c)).copied()
    });

    let mut outputs = OutputSet::new(&config.out);
    outputs.add("eval_report.txt", text.clone());
    outputs.add(
        "eval_report.json",
        serde_json::to_string_pretty(&report).expect("eval json") + "\n",
    );
    outputs.add("eval_per_pair.csv", per_pair_csv(&report));
    outputs.add("eval_ll_matrix.csv", ll_matrix);
    outputs.commit()?;
    print!("{text}");
    Ok(())
}

pub fn simulate(
    model_path: &Path,
    horizon: f64,
    seed: u64,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let fitted = FittedModel::load(model_path)?;
    let spec = SimSpec {
        model: fitted.model.clone(),
        horizon,
        seed,
    };
    let radius = stability_check(&spec.model);
    let log = if force {
        if radius >= 1.0 {
            eprintln!("warning: simulating an explosive spec (radius {radius:.4}) under --force");
        }
        simulate_unchecked(&spec)?
    } else {
        run_simulation(&spec)?
    };

    let mut events_csv = Vec::new();
    write_events(&log, None, b',', &mut events_csv)?;

    let assignment = fitted.model.assignment();
    let mut summary = kv_lines(&[
        ("events", log.len().to_string()),
        ("horizon", horizon.to_string()),
        ("seed", seed.to_string()),
        ("stability_radius", radius.to_string()),
        (
            "empirical_rate",
            if horizon > 0.0 {
                (log.len() as f64 / horizon).to_string()
            } else {
                "-".into()
            },
        ),
    ]);
    summary.push('\n');
    summary.push_str("source,target,pairs,mu,events,rate_per_pair\n");
    let mut pair_counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for ev in log.events() {
        let a = assignment.block_of(ev.source).expect("simulated node");
        let b = assignment.block_of(ev.target).expect("simulated node");
        *pair_counts.entry((a, b)).or_default() += 1;
    }
    for (&(a, b), params) in fitted.model.params() {
        let m = fitted.model.pair_count(a, b);
        let events = pair_counts.get(&(a, b)).copied().unwrap_or(0);
        let rate = if horizon > 0.0 && m > 0 {
            (events as f64 / (horizon * m as f64)).to_string()
        } else {
            "-".into()
        };
        summary.push_str(&format!("{a},{b},{m},{},{events},{rate}\n", params.mu));
    }

    let mut outputs = OutputSet::new(out);
    outputs.add(
        "simulated_events.csv",
        String::from_utf8(events_csv).expect("csv is utf-8"),
    );
    outputs.add("sim_summary.txt", summary.clone());
    outputs.commit()?;
    print!("{summary}");
    Ok(())
}

pub fn report(overrides: &Overrides, model_path: &Path, bins: usize) -> Result<(), CliError> {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be positive".into()));
    }
    let config = RunConfig::resolve(overrides)?;
    let parsed = load_events(&config)?;
    let fitted = FittedModel::load(model_path)?;

    let mut event_nodes: Vec<NodeId> = parsed
        .log
        .events()
        .iter()
        .flat_map(|ev| [ev.source, ev.target])
        .collect();
    event_nodes.sort_unstable();
    event_nodes.dedup();
    let (assignment, joined, _) = fitted
        .model
        .assignment()
        .with_unseen_assigned(&event_nodes)?;
    if joined > 0 {
        eprintln!("warning: {joined} node(s) absent from the model joined the largest community");
    }

    let blocks = assignment.block_count();
    let labels: Vec<String> = (0..blocks)
        .map(|b| block_label(assignment.kind(b), b))
        .collect();

    let mut counts = vec![0u64; blocks * blocks];
    for ev in parsed.log.events() {
        let a = assignment.block_of(ev.source).expect("extended");
        let b = assignment.block_of(ev.target).expect("extended");
        counts[a * blocks + b] += 1;
    }
    let pair_count = |a: usize, b: usize| minch_core::model::ordered_pair_count(&assignment, a, b);

    let counts_csv = matrix_csv("block", &labels, &labels, |r, c| {
        Some(counts[r * blocks + c])
    });
    let avg_csv = matrix_csv("block", &labels, &labels, |r, c| {
        let m = pair_count(r, c);
        (m > 0).then(|| counts[r * blocks + c] as f64 / m as f64)
    });

    let mut outgoing_csv = String::from("block,size,outgoing_events\n");
    for a in 0..blocks {
        let total: u64 = (0..blocks).map(|b| counts[a * blocks + b]).sum();
        outgoing_csv.push_str(&format!("{},{},{total}\n", labels[a], assignment.size(a)));
    }

    // Time-binned series, one column per populated ordered block pair.
    let horizon = parsed.log.horizon();
    let populated: Vec<(usize, usize)> = (0..blocks)
        .flat_map(|a| (0..blocks).map(move |b| (a, b)))
        .filter(|&(a, b)| pair_count(a, b) > 0)
        .collect();
    let mut series = String::from("bin_start,bin_end");
    for &(a, b) in &populated {
        series.push_str(&format!(",{}->{}", labels[a], labels[b]));
    }
    series.push('\n');
    if !parsed.log.is_empty() && horizon > 0.0 {
        let width = horizon / bins as f64;
        let mut grid = vec![0u64; bins * populated.len()];
        let column: BTreeMap<(usize, usize), usize> = populated
            .iter()
            .enumerate()
            .map(|(idx, &pair)| (pair, idx))
            .collect();
        for ev in parsed.log.events() {
            let a = assignment.block_of(ev.source).expect("extended");
            let b = assignment.block_of(ev.target).expect("extended");
            let bin = (((ev.time - parsed.log.t_start()) / width) as usize).min(bins - 1);
            grid[bin * populated.len() + column[&(a, b)]] += 1;
        }
        for bin in 0..bins {
            let start = parsed.log.t_start() + bin as f64 * width;
            series.push_str(&format!("{start},{}", start + width));
            for idx in 0..populated.len() {
                series.push_str(&format!(",{}", grid[bin * populated.len() + idx]));
            }
            series.push('\n');
        }
    }

    let mut outputs = OutputSet::new(&config.out);
    outputs.add("report_block_counts.csv", counts_csv);
    outputs.add("report_avg_per_pair.csv", avg_csv);
    outputs.add("report_outgoing.csv", outgoing_csv);
    outputs.add("report_series.csv", series);
    outputs.commit()?;

    print!(
        "{}",
        kv_lines(&[
            ("events", parsed.log.len().to_string()),
            ("blocks", blocks.to_string()),
            ("unseen_nodes_joined", joined.to_string()),
            ("out", config.out.display().to_string()),
        ])
    );
    Ok(())
}
