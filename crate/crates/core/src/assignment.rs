//! Node partitioning into community blocks, singleton hub blocks, and one
//! shared inactive block.
//!
//! Starting from spectral community labels, the most active nodes are pulled
//! out into their own singleton hub blocks and nodes at or below an activity
//! quantile are pooled into a single inactive block. Block ids are contiguous
//! and ordered: communities first (in original label order), then hubs in
//! decreasing activity, then the inactive block last.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{ActivityVector, NodeId};

/// Block identifier, contiguous in `[0, block_count)`.
pub type BlockId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Community,
    Hub,
    Inactive,
}

/// Hyperparameters of the partitioning step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringConfig {
    /// Number of spectral communities.
    pub k: usize,
    /// Number of top-activity nodes isolated into singleton hub blocks.
    pub n_hubs: usize,
    /// Activity quantile at or below which non-hub nodes are pooled into the
    /// inactive block; `None` disables the inactive block.
    pub inactive_quantile: Option<f64>,
    pub seed: u64,
    pub kmeans_restarts: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: 2,
            n_hubs: 0,
            inactive_quantile: None,
            seed: 0,
            kmeans_restarts: 10,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self, node_count: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.k > node_count {
            return Err(Error::Config(format!(
                "k = {} exceeds the node count {node_count}",
                self.k
            )));
        }
        if self.n_hubs >= node_count && node_count > 0 {
            return Err(Error::Config(format!(
                "n_hubs = {} must be smaller than the node count {node_count}",
                self.n_hubs
            )));
        }
        if let Some(p) = self.inactive_quantile {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "inactive quantile must lie in [0, 1), got {p}"
                )));
            }
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Config("kmeans_restarts must be positive".into()));
        }
        Ok(())
    }
}

/// A node -> block partition. Nodes may be unassigned (`None`) when they were
/// absent from the data the assignment was built on; evaluation resolves them
/// through [`assign_unseen`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAssignment {
    membership: Vec<Option<BlockId>>,
    kinds: Vec<BlockKind>,
    sizes: Vec<usize>,
}

impl BlockAssignment {
    pub fn new(membership: Vec<Option<BlockId>>, kinds: Vec<BlockKind>) -> Result<Self> {
        let mut sizes = vec![0usize; kinds.len()];
        for block in membership.iter().flatten() {
            if *block >= kinds.len() {
                return Err(Error::Data(format!(
                    "block id {block} out of range ({} blocks)",
                    kinds.len()
                )));
            }
            sizes[*block] += 1;
        }
        let assignment = Self {
            membership,
            kinds,
            sizes,
        };
        assignment.validate()?;
        Ok(assignment)
    }

    /// All-community assignment straight from cluster labels.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let blocks = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(
            labels.iter().map(|&l| Some(l)).collect(),
            vec![BlockKind::Community; blocks],
        )
    }

    fn validate(&self) -> Result<()> {
        for (b, kind) in self.kinds.iter().enumerate() {
            if *kind == BlockKind::Hub && self.sizes[b] != 1 {
                return Err(Error::Data(format!(
                    "hub block {b} has {} nodes, expected exactly 1",
                    self.sizes[b]
                )));
            }
            if self.sizes[b] == 0 {
                return Err(Error::Data(format!("block {b} is empty")));
            }
        }
        if self
            .kinds
            .iter()
            .filter(|k| **k == BlockKind::Inactive)
            .count()
            > 1
        {
            return Err(Error::Data("more than one inactive block".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.membership.len()
    }

    pub fn block_count(&self) -> usize {
        self.kinds.len()
    }

    /// Block of `node`, `None` when the node is unassigned or out of range.
    pub fn block_of(&self, node: NodeId) -> Option<BlockId> {
        self.membership.get(node as usize).copied().flatten()
    }

    pub fn kind(&self, block: BlockId) -> BlockKind {
        self.kinds[block]
    }

    pub fn size(&self, block: BlockId) -> usize {
        self.sizes[block]
    }

    pub fn membership(&self) -> &[Option<BlockId>] {
        &self.membership
    }

    pub fn kinds(&self) -> &[BlockKind] {
        &self.kinds
    }

    pub fn assigned_node_count(&self) -> usize {
        self.membership.iter().flatten().count()
    }

    pub fn nodes_in(&self, block: BlockId) -> Vec<NodeId> {
        self.membership
            .iter()
            .enumerate()
            .filter_map(|(i, b)| (*b == Some(block)).then_some(i as NodeId))
            .collect()
    }

    /// Largest community block (lowest id on ties); falls back to the largest
    /// block of any kind when no community exists.
    pub fn largest_community(&self) -> Option<(BlockId, bool)> {
        let best_of = |filter: &dyn Fn(BlockKind) -> bool| -> Option<BlockId> {
            (0..self.block_count())
                .filter(|&b| filter(self.kinds[b]))
                .max_by(|&a, &b| self.sizes[a].cmp(&self.sizes[b]).then(b.cmp(&a)))
        };
        if let Some(b) = best_of(&|k| k == BlockKind::Community) {
            return Some((b, false));
        }
        best_of(&|_| true).map(|b| (b, true))
    }

    /// Returns a copy where every node in `nodes` that is currently
    /// unassigned (or out of range) is placed in the block chosen by
    /// [`assign_unseen`]. The target block is resolved once, so all unseen
    /// nodes land together. The boolean reports whether the no-community
    /// fallback was used.
    pub fn with_unseen_assigned(&self, nodes: &[NodeId]) -> Result<(Self, usize, bool)> {
        let mut extended = self.clone();
        let mut newly_assigned = 0usize;
        let mut target: Option<(BlockId, bool)> = None;
        for &node in nodes {
            if extended.block_of(node).is_some() {
                continue;
            }
            let (block, _) = match target {
                Some(t) => t,
                None => *target.insert(assign_unseen(&extended, node)?),
            };
            if extended.membership.len() <= node as usize {
                extended.membership.resize(node as usize + 1, None);
            }
            extended.membership[node as usize] = Some(block);
            extended.sizes[block] += 1;
            newly_assigned += 1;
        }
        Ok((extended, newly_assigned, target.is_some_and(|(_, f)| f)))
    }
}

/// Top `n_hubs` nodes by activity, ordered by decreasing activity with ties
/// broken toward the lower node id.
pub fn select_hubs(activity: &ActivityVector, n_hubs: usize) -> Vec<NodeId> {
    let mut order: Vec<NodeId> = (0..activity.len() as NodeId).collect();
    order.sort_by(|&a, &b| activity.get(b).cmp(&activity.get(a)).then(a.cmp(&b)));
    order.truncate(n_hubs);
    order
}

/// Nodes with activity at or below the `p`-th quantile, ascending by id.
///
/// The quantile uses linear interpolation on the sorted activity values:
/// with `h = p * (n - 1)`, `Q_p = a[floor(h)] + frac(h) * (a[ceil(h)] -
/// a[floor(h)])`. A disabled quantile (`None`) selects nothing.
pub fn select_inactive(activity: &ActivityVector, p: Option<f64>) -> Result<Vec<NodeId>> {
    let Some(p) = p else {
        return Ok(Vec::new());
    };
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "inactive quantile must lie in [0, 1), got {p}"
        )));
    }
    if activity.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted: Vec<u64> = activity.as_slice().to_vec();
    sorted.sort_unstable();
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    let threshold = sorted[lo] as f64 + frac * (sorted[hi] as f64 - sorted[lo] as f64);
    Ok((0..activity.len() as NodeId)
        .filter(|&i| (activity.get(i) as f64) <= threshold)
        .collect())
}

/// Combines spectral labels with hub and inactive reassignment.
///
/// Hub nodes move to fresh singleton blocks (in the given order, expected to
/// be decreasing activity); inactive non-hub nodes move to one shared block;
/// hub membership takes precedence. Communities drained empty by the
/// reassignment are removed and block ids compacted.
pub fn build_assignment(
    labels: &[usize],
    hubs: &[NodeId],
    inactive: &[NodeId],
    k: usize,
) -> Result<BlockAssignment> {
    let n = labels.len();
    for &l in labels {
        if l >= k {
            return Err(Error::Data(format!("label {l} out of range for k = {k}")));
        }
    }
    let hub_set: HashSet<NodeId> = hubs.iter().copied().collect();
    let inactive_set: HashSet<NodeId> = inactive
        .iter()
        .copied()
        .filter(|node| !hub_set.contains(node))
        .collect();

    let mut community_size = vec![0usize; k];
    for (node, &label) in labels.iter().enumerate() {
        let node = node as NodeId;
        if !hub_set.contains(&node) && !inactive_set.contains(&node) {
            community_size[label] += 1;
        }
    }
    let mut compact = vec![usize::MAX; k];
    let mut next = 0usize;
    for label in 0..k {
        if community_size[label] > 0 {
            compact[label] = next;
            next += 1;
        }
    }
    let community_count = next;
    let hub_base = community_count;
    let inactive_block = (!inactive_set.is_empty()).then_some(hub_base + hubs.len());

    let mut membership = vec![None; n];
    for (node, &label) in labels.iter().enumerate() {
        let id = node as NodeId;
        membership[node] = if let Some(h) = hubs.iter().position(|&x| x == id) {
            Some(hub_base + h)
        } else if inactive_set.contains(&id) {
            inactive_block
        } else {
            Some(compact[label])
        };
    }

    let mut kinds = vec![BlockKind::Community; community_count];
    kinds.extend(std::iter::repeat_n(BlockKind::Hub, hubs.len()));
    if inactive_block.is_some() {
        kinds.push(BlockKind::Inactive);
    }
    BlockAssignment::new(membership, kinds)
}

/// Block for a node absent from the assignment: the largest community block
/// (lowest id on ties), or the largest block of any kind when no community
/// exists. The boolean reports the fallback case.
pub fn assign_unseen(assignment: &BlockAssignment, node: NodeId) -> Result<(BlockId, bool)> {
    if assignment.block_of(node).is_some() {
        return Err(Error::Data(format!(
            "node {node} is already assigned to a block"
        )));
    }
    assignment
        .largest_community()
        .ok_or_else(|| Error::Data("assignment has no blocks".into()))
}

/// Adjusted Rand index between two labelings of the same nodes.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![0u64; ka * kb];
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for i in 0..n {
        table[a[i] * kb + b[i]] += 1;
        rows[a[i]] += 1;
        cols[b[i]] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().map(|&x| c2(x)).sum();
    let sum_rows: f64 = rows.iter().map(|&x| c2(x)).sum();
    let sum_cols: f64 = cols.iter().map(|&x| c2(x)).sum();
    let total = c2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return if (sum_cells - expected).abs() < 1e-12 {
            1.0
        } else {
            0.0
        };
    }
    (sum_cells - expected) / (max_index - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{compute_activities, Event, EventLog};

    fn activities(counts: &[u64]) -> ActivityVector {
        let n = counts.len();
        let mut events = Vec::new();
        for (node, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                events.push(Event {
                    source: node as NodeId,
                    target: ((node + 1) % n) as NodeId,
                    time: 0.0,
                });
            }
        }
        compute_activities(&EventLog::new(events, 0.0, 1.0, n).unwrap())
    }

    #[test]
    fn select_hubs_empty_and_tie_break() {
        let act = activities(&[9, 3, 9, 1]);
        assert!(select_hubs(&act, 0).is_empty());
        assert_eq!(select_hubs(&act, 2), vec![0, 2]);
        assert_eq!(select_hubs(&act, 3), vec![0, 2, 1]);
    }

    #[test]
    fn select_inactive_disabled_is_empty() {
        let act = activities(&[1, 2, 3]);
        assert!(select_inactive(&act, None).unwrap().is_empty());
    }

    #[test]
    fn select_inactive_linear_quantile() {
        // Sorted activities (0, 0, 5, 7, 9); h = 0.2 * 4 = 0.8 interpolates
        // between the two zeros, so Q_0.2 = 0 and only the zeros qualify.
        let act = activities(&[0, 0, 5, 7, 9]);
        assert_eq!(select_inactive(&act, Some(0.2)).unwrap(), vec![0, 1]);

        // Enumeration cross-check of the interpolation: p = 0.5 on
        // (0, 0, 5, 7, 9) gives h = 2, Q = 5.
        assert_eq!(select_inactive(&act, Some(0.5)).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn select_inactive_equal_activities_takes_everything() {
        let act = activities(&[4, 4, 4]);
        assert_eq!(select_inactive(&act, Some(0.3)).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn build_assignment_identity_without_hubs_or_inactive() {
        let labels = vec![0, 1, 0, 1];
        let assignment = build_assignment(&labels, &[], &[], 2).unwrap();
        for (node, &label) in labels.iter().enumerate() {
            assert_eq!(assignment.block_of(node as NodeId), Some(label));
        }
        assert_eq!(assignment.block_count(), 2);
        assert!(matches!(assignment.kind(0), BlockKind::Community));
    }

    #[test]
    fn build_assignment_applies_precedence_and_ordering() {
        // labels (0,0,1,1), hub {0}, inactive {3}:
        // community {1} (from label 0), community {2} (from label 1),
        // hub {0}, inactive {3}.
        let assignment = build_assignment(&[0, 0, 1, 1], &[0], &[3], 2).unwrap();
        assert_eq!(assignment.block_count(), 4);
        assert_eq!(assignment.block_of(1), Some(0));
        assert_eq!(assignment.block_of(2), Some(1));
        assert_eq!(assignment.block_of(0), Some(2));
        assert_eq!(assignment.block_of(3), Some(3));
        assert_eq!(assignment.kind(2), BlockKind::Hub);
        assert_eq!(assignment.kind(3), BlockKind::Inactive);
    }

    #[test]
    fn hub_wins_over_inactive() {
        let assignment = build_assignment(&[0, 0, 0], &[1], &[1, 2], 1).unwrap();
        assert_eq!(
            assignment.kind(assignment.block_of(1).unwrap()),
            BlockKind::Hub
        );
        assert_eq!(
            assignment.kind(assignment.block_of(2).unwrap()),
            BlockKind::Inactive
        );
    }

    #[test]
    fn drained_communities_are_compacted() {
        // Label 0 has only node 0, which becomes a hub; community ids compact.
        let assignment = build_assignment(&[0, 1, 1], &[0], &[], 2).unwrap();
        assert_eq!(assignment.block_count(), 2);
        assert_eq!(assignment.block_of(1), Some(0));
        assert_eq!(assignment.kind(1), BlockKind::Hub);
        assert_eq!(assignment.block_of(0), Some(1));
    }

    #[test]
    fn assign_unseen_prefers_largest_community() {
        let mut labels = vec![0; 10];
        labels.extend(vec![1; 25]);
        let assignment = build_assignment(&labels, &[], &[], 2).unwrap();
        let (block, fallback) = assign_unseen(&assignment, 99).unwrap();
        assert_eq!(block, 1);
        assert!(!fallback);
    }

    #[test]
    fn assign_unseen_breaks_size_ties_by_lowest_id() {
        let mut labels = vec![0; 12];
        labels.extend(vec![1; 12]);
        let assignment = build_assignment(&labels, &[], &[], 2).unwrap();
        let (block, _) = assign_unseen(&assignment, 99).unwrap();
        assert_eq!(block, 0);
    }

    #[test]
    fn assign_unseen_falls_back_without_communities() {
        let assignment =
            BlockAssignment::new(vec![Some(0), Some(1)], vec![BlockKind::Hub, BlockKind::Hub])
                .unwrap();
        let (block, fallback) = assign_unseen(&assignment, 5).unwrap();
        assert_eq!(block, 0);
        assert!(fallback);
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(
            ari < 0.1,
            "independent partitions should score near 0, got {ari}"
        );
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[0, 0, 0]), 1.0);
    }
}
