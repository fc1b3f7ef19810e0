//! Ingestion, validation, normalization, splitting, and aggregation of
//! directed timestamped event streams.
//!
//! Raw inputs are delimited text rows `(source, target, timestamp)`. Parsing
//! remaps node labels to dense ids, drops self-loops, sorts events by
//! `(time, source, target, input order)`, and shifts times so the observation
//! window starts at zero. All types here are immutable after construction.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Dense node identifier in `[0, node_count)`.
pub type NodeId = u32;

/// Seconds per model time unit (one day).
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// A single directed event at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub source: NodeId,
    pub target: NodeId,
    /// Timestamp in model time units, relative to the window start.
    pub time: f64,
}

/// A time-ordered directed event stream over a fixed observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
    t_start: f64,
    t_end: f64,
    node_count: usize,
}

impl EventLog {
    /// Builds a log, validating ordering, window containment, and id density.
    pub fn new(events: Vec<Event>, t_start: f64, t_end: f64, node_count: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end < t_start {
            return Err(Error::Data(format!(
                "invalid observation window [{t_start}, {t_end}]"
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for ev in &events {
            if ev.source == ev.target {
                return Err(Error::Data(format!("self-loop on node {}", ev.source)));
            }
            if (ev.source as usize) >= node_count || (ev.target as usize) >= node_count {
                return Err(Error::Data(format!(
                    "node id out of range: ({}, {}) with node_count {}",
                    ev.source, ev.target, node_count
                )));
            }
            if !ev.time.is_finite() || ev.time < t_start || ev.time > t_end {
                return Err(Error::Data(format!(
                    "event time {} outside window [{t_start}, {t_end}]",
                    ev.time
                )));
            }
            if ev.time < prev {
                return Err(Error::Data("events not sorted by time".into()));
            }
            prev = ev.time;
        }
        Ok(Self {
            events,
            t_start,
            t_end,
            node_count,
        })
    }

    /// An empty log over a zero-length window.
    pub fn empty() -> Self {
        Self {
            events: Vec::new(),
            t_start: 0.0,
            t_end: 0.0,
            node_count: 0,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Length of the observation window.
    pub fn horizon(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }
}

/// Event counts aggregated over the whole window: `counts[i][j]` is the
/// number of events from `i` to `j`. The diagonal is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyCounts {
    counts: Vec<u64>,
    n: usize,
}

impl AdjacencyCounts {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: NodeId, j: NodeId) -> u64 {
        self.counts[i as usize * self.n + j as usize]
    }

    /// Out-event count of node `i` (row sum).
    pub fn row_sum(&self, i: NodeId) -> u64 {
        let i = i as usize;
        self.counts[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Row-major dense view, `n * n` entries.
    pub fn as_slice(&self) -> &[u64] {
        &self.counts
    }
}

/// Per-node activity: the number of outgoing events of each node.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityVector(Vec<u64>);

impl ActivityVector {
    pub fn get(&self, node: NodeId) -> u64 {
        self.0[node as usize]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// A chronological train/test partition of a log.
#[derive(Debug, Clone)]
pub struct TrainTestSplit {
    pub train: EventLog,
    pub test: EventLog,
    pub t_split: f64,
}

/// Unit of raw input timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    /// Epoch seconds; divided by 86400 so the model unit is days.
    Seconds,
    /// Already in days.
    Days,
    /// Kept as-is, unit unspecified.
    Raw,
}

impl TimeUnit {
    fn scale(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0 / SECONDS_PER_DAY,
            TimeUnit::Days | TimeUnit::Raw => 1.0,
        }
    }
}

impl std::str::FromStr for TimeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seconds" => Ok(TimeUnit::Seconds),
            "days" => Ok(TimeUnit::Days),
            "raw" => Ok(TimeUnit::Raw),
            other => Err(Error::Config(format!(
                "unknown time unit {other:?} (expected seconds, days, or raw)"
            ))),
        }
    }
}

/// How to interpret a delimited event file.
#[derive(Debug, Clone)]
pub struct ParseFormat {
    pub delimiter: u8,
    pub has_header: bool,
    pub time_unit: TimeUnit,
    /// Optional horizon length (model units, after the shift to zero). When
    /// absent the horizon ends at the last event.
    pub horizon: Option<f64>,
}

impl Default for ParseFormat {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: false,
            time_unit: TimeUnit::Days,
            horizon: None,
        }
    }
}

/// A parsed log plus the label bookkeeping produced during ingestion.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub log: EventLog,
    /// Dense id -> original label.
    pub original_ids: Vec<u64>,
    /// Self-loop rows dropped during ingestion.
    pub self_loops_dropped: usize,
}

impl ParseOutcome {
    pub fn original_id(&self, node: NodeId) -> u64 {
        self.original_ids[node as usize]
    }
}

/// Parses delimited `(source, target, timestamp)` rows into a normalized log.
///
/// Node labels are remapped to dense ids in order of first appearance in the
/// time-sorted stream, which makes the result independent of input row order.
/// Times are rescaled to the configured unit and shifted so the first event
/// sits at zero. Self-loop rows are dropped and counted, malformed rows are
/// reported with their line number, and an empty input yields an empty log.
pub fn parse_events<R: Read>(reader: R, format: &ParseFormat) -> Result<ParseOutcome> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);

    let scale = format.time_unit.scale();
    let mut rows: Vec<(u64, u64, f64)> = Vec::new();
    let mut self_loops = 0usize;

    for record in csv_reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, csv::Position::line);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, csv::Position::line);
        if record.len() == 1 && record.get(0).is_some_and(|f| f.is_empty()) {
            continue; // blank line
        }
        if record.len() < 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 columns, found {}", record.len()),
            });
        }
        let field = |idx: usize, name: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing {name} column"),
            })
        };
        let source: u64 = field(0, "source")?.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid source id {:?}", record.get(0).unwrap_or("")),
        })?;
        let target: u64 = field(1, "target")?.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid target id {:?}", record.get(1).unwrap_or("")),
        })?;
        let raw_time: f64 = field(2, "timestamp")?.parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid timestamp {:?}", record.get(2).unwrap_or("")),
        })?;
        if !raw_time.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite timestamp {raw_time}"),
            });
        }
        if source == target {
            self_loops += 1;
            continue;
        }
        rows.push((source, target, raw_time * scale));
    }

    if rows.is_empty() {
        let mut log = EventLog::empty();
        if let Some(h) = format.horizon {
            if h < 0.0 || !h.is_finite() {
                return Err(Error::Config(format!("invalid horizon {h}")));
            }
            log.t_end = h;
        }
        return Ok(ParseOutcome {
            log,
            original_ids: Vec::new(),
            self_loops_dropped: self_loops,
        });
    }

    // Canonical order: (time, source label, target label), stable in input
    // order. Dense ids are assigned by first appearance in this order so the
    // mapping does not depend on how the input rows were shuffled.
    rows.sort_by(|a, b| {
        a.2.partial_cmp(&b.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let t_first = rows[0].2;
    let t_last = rows[rows.len() - 1].2;
    let span = t_last - t_first;
    let t_end = match format.horizon {
        Some(h) => {
            if !h.is_finite() || h < span {
                return Err(Error::Config(format!(
                    "horizon {h} shorter than the event span {span}"
                )));
            }
            h
        }
        None => span,
    };

    let mut dense: HashMap<u64, NodeId> = HashMap::new();
    let mut original_ids: Vec<u64> = Vec::new();
    let mut intern = |label: u64, dense: &mut HashMap<u64, NodeId>| -> NodeId {
        *dense.entry(label).or_insert_with(|| {
            let id = original_ids.len() as NodeId;
            original_ids.push(label);
            id
        })
    };

    let mut events = Vec::with_capacity(rows.len());
    for (src, tgt, time) in &rows {
        let source = intern(*src, &mut dense);
        let target = intern(*tgt, &mut dense);
        events.push(Event {
            source,
            target,
            time: time - t_first,
        });
    }
    let node_count = original_ids.len();
    let log = EventLog::new(events, 0.0, t_end, node_count)?;
    Ok(ParseOutcome {
        log,
        original_ids,
        self_loops_dropped: self_loops,
    })
}

/// Writes a log back out in the canonical delimited format.
///
/// When `original_ids` is given, events are emitted under their original
/// labels; re-parsing that output reproduces the identical log.
pub fn write_events<W: Write>(
    log: &EventLog,
    original_ids: Option<&[u64]>,
    delimiter: u8,
    writer: W,
) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    for ev in log.events() {
        let (s, t) = match original_ids {
            Some(ids) => (ids[ev.source as usize], ids[ev.target as usize]),
            None => (u64::from(ev.source), u64::from(ev.target)),
        };
        out.write_record([s.to_string(), t.to_string(), ev.time.to_string()])
            .map_err(|e| Error::Data(format!("failed to write events: {e}")))?;
    }
    out.flush()?;
    Ok(())
}

/// Splits a log chronologically at `t_start + train_fraction * horizon`.
///
/// Events exactly at the split time go to the train side. The test side may
/// be empty; a zero-length horizon is an error.
pub fn split_by_time(log: &EventLog, train_fraction: f64) -> Result<TrainTestSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if log.horizon() <= 0.0 {
        return Err(Error::Data(
            "cannot split a log with a degenerate (zero-length) horizon".into(),
        ));
    }
    let t_split = log.t_start() + train_fraction * log.horizon();
    let boundary = log.events().partition_point(|ev| ev.time <= t_split);
    let train = EventLog::new(
        log.events()[..boundary].to_vec(),
        log.t_start(),
        t_split,
        log.node_count(),
    )?;
    let test = EventLog::new(
        log.events()[boundary..].to_vec(),
        t_split,
        log.t_end(),
        log.node_count(),
    )?;
    Ok(TrainTestSplit {
        train,
        test,
        t_split,
    })
}

/// Aggregates a log into whole-window directed event counts.
pub fn aggregate_counts(log: &EventLog) -> AdjacencyCounts {
    let n = log.node_count();
    let mut counts = vec![0u64; n * n];
    for ev in log.events() {
        counts[ev.source as usize * n + ev.target as usize] += 1;
    }
    AdjacencyCounts { counts, n }
}

/// Per-node out-event counts.
pub fn compute_activities(log: &EventLog) -> ActivityVector {
    let mut activity = vec![0u64; log.node_count()];
    for ev in log.events() {
        activity[ev.source as usize] += 1;
    }
    ActivityVector(activity)
}
