//! Equal-frequency binary bucket tree over integer conversion counts, the
//! root-to-leaf path of a label, and the non-normalized soft edge labels.
//!
//! Nodes live in an implicit array: node `i` has children `2i + 1` (range
//! `[l_i, m_i)`) and `2i + 2` (range `[m_i, r_i)`). Trees can be non-perfect
//! when a node's samples share a single value or the leaf budget runs out.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Soft labels below this value are snapped to exactly zero.
pub const SOFT_LABEL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("cannot build a bucket tree from an empty label set")]
    EmptyLabels,
    #[error("leaf budget must be at least 1, got {0}")]
    InvalidLeafBudget(usize),
    #[error("leaf {node} covering [{lower}, {upper}) contains no training label")]
    EmptyLeaf { node: usize, lower: u64, upper: u64 },
    #[error("malformed tree: {0}")]
    Malformed(String),
}

/// How the representative value `e_i` of a leaf is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LeafValue {
    /// Mean of the distinct label values inside the leaf range.
    #[default]
    DistinctMean,
    /// Mean over the training multiset inside the leaf range.
    SampleMean,
    /// `(l + r) / 2`; overestimates wide tail buckets.
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub lower: u64,
    pub upper: u64,
    /// Present on internal nodes only.
    pub cutoff: Option<u64>,
    /// Present on leaves only.
    pub expectation: Option<f64>,
}

impl TreeNode {
    pub fn contains(&self, y: f64) -> bool {
        self.lower as f64 <= y && y < self.upper as f64
    }

    pub fn is_leaf(&self) -> bool {
        self.cutoff.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTree {
    nodes: Vec<Option<TreeNode>>,
    leaves: Vec<usize>,
    internal: Vec<usize>,
    depth: usize,
}

pub fn left_child(i: usize) -> usize {
    2 * i + 1
}

pub fn right_child(i: usize) -> usize {
    2 * i + 2
}

pub fn parent(i: usize) -> Option<usize> {
    (i > 0).then(|| (i - 1) / 2)
}

fn node_depth(i: usize) -> usize {
    (usize::BITS - 1 - (i + 1).leading_zeros()) as usize
}

/// Cutoff for a sorted, non-degenerate sample run. Takes the two candidate
/// boundaries around the tie group holding the median and keeps the more
/// balanced one; ties resolve to the boundary after the group.
fn choose_cutoff(sorted: &[u64]) -> u64 {
    let n = sorted.len();
    let half = n.div_ceil(2);
    let v = sorted[half - 1];
    let below = sorted.partition_point(|&x| x < v);
    let through = sorted.partition_point(|&x| x <= v);
    let imbalance = |left: usize| (2 * left).abs_diff(n);

    let before_ok = below > 0;
    let after_ok = through < n;
    match (before_ok, after_ok) {
        (true, true) => {
            if imbalance(below) < imbalance(through) {
                v
            } else {
                v + 1
            }
        }
        (true, false) => v,
        (false, true) => v + 1,
        (false, false) => unreachable!("caller guarantees two distinct values"),
    }
}

impl BucketTree {
    /// Recursive equal-frequency splits, breadth first, until the leaf budget
    /// is spent or the depth limit `ceil(log2(num_leaves))` is reached.
    pub fn build(labels: &[u64], num_leaves: usize, leaf_value: LeafValue) -> Result<Self, TreeError> {
        if labels.is_empty() {
            return Err(TreeError::EmptyLabels);
        }
        if num_leaves == 0 {
            return Err(TreeError::InvalidLeafBudget(num_leaves));
        }
        let mut sorted = labels.to_vec();
        sorted.sort_unstable();
        let max_depth = num_leaves.next_power_of_two().trailing_zeros() as usize;

        let mut nodes: Vec<Option<TreeNode>> = vec![Some(TreeNode {
            lower: sorted[0],
            upper: sorted[sorted.len() - 1] + 1,
            cutoff: None,
            expectation: None,
        })];
        // Each queued node carries its slice of the sorted labels.
        let mut queue = VecDeque::from([(0usize, 0usize, sorted.len())]);
        let mut leaf_count = 1;
        while let Some((i, start, end)) = queue.pop_front() {
            if leaf_count >= num_leaves {
                break;
            }
            if node_depth(i) >= max_depth {
                continue;
            }
            let slice = &sorted[start..end];
            if slice[0] == slice[slice.len() - 1] {
                continue;
            }
            let cutoff = choose_cutoff(slice);
            let split = start + slice.partition_point(|&x| x < cutoff);
            let (lower, upper) = {
                let node = nodes[i].as_mut().expect("queued node exists");
                node.cutoff = Some(cutoff);
                (node.lower, node.upper)
            };
            let needed = right_child(i) + 1;
            if nodes.len() < needed {
                nodes.resize(needed, None);
            }
            nodes[left_child(i)] = Some(TreeNode {
                lower,
                upper: cutoff,
                cutoff: None,
                expectation: None,
            });
            nodes[right_child(i)] = Some(TreeNode {
                lower: cutoff,
                upper,
                cutoff: None,
                expectation: None,
            });
            leaf_count += 1;
            queue.push_back((left_child(i), start, split));
            queue.push_back((right_child(i), split, end));
        }
        if leaf_count < num_leaves {
            warn!(
                "bucket tree has {leaf_count} leaves, fewer than the requested {num_leaves} \
                 (too few distinct label values or depth limit)"
            );
        }

        let mut tree = Self::from_nodes(nodes)?;
        let values = leaf_expectations(&tree, &sorted, leaf_value)?;
        for (&leaf, e) in tree.leaves.iter().zip(values) {
            tree.nodes[leaf].as_mut().expect("leaf exists").expectation = Some(e);
        }
        Ok(tree)
    }

    /// Rebuilds index sets from a raw node array and validates the structure.
    pub fn from_nodes(nodes: Vec<Option<TreeNode>>) -> Result<Self, TreeError> {
        let mut leaves = Vec::new();
        let mut internal = Vec::new();
        let mut depth = 0;
        if nodes.first().and_then(|n| n.as_ref()).is_none() {
            return Err(TreeError::Malformed("missing root".into()));
        }
        for (i, slot) in nodes.iter().enumerate() {
            let Some(node) = slot else { continue };
            if let Some(p) = parent(i) {
                let parent_node = nodes[p]
                    .as_ref()
                    .ok_or_else(|| TreeError::Malformed(format!("node {i} has no parent")))?;
                let m = parent_node
                    .cutoff
                    .ok_or_else(|| TreeError::Malformed(format!("parent of {i} is a leaf")))?;
                let expected = if i == left_child(p) {
                    (parent_node.lower, m)
                } else {
                    (m, parent_node.upper)
                };
                if (node.lower, node.upper) != expected {
                    return Err(TreeError::Malformed(format!("node {i} range does not match parent")));
                }
            }
            match node.cutoff {
                Some(m) => {
                    if !(node.lower < m && m < node.upper) {
                        return Err(TreeError::Malformed(format!("node {i} cutoff outside range")));
                    }
                    let has_children = nodes.get(right_child(i)).is_some_and(|c| c.is_some())
                        && nodes.get(left_child(i)).is_some_and(|c| c.is_some());
                    if !has_children {
                        return Err(TreeError::Malformed(format!("internal node {i} lacks children")));
                    }
                    internal.push(i);
                }
                None => leaves.push(i),
            }
            depth = depth.max(node_depth(i));
        }
        Ok(Self {
            nodes,
            leaves,
            internal,
            depth,
        })
    }

    pub fn node(&self, i: usize) -> Option<&TreeNode> {
        self.nodes.get(i).and_then(|n| n.as_ref())
    }

    pub fn nodes(&self) -> &[Option<TreeNode>] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        self.node(0).expect("root exists")
    }

    /// Leaf node indices in ascending array order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Internal node indices in ascending array order. The position of a node
    /// in this list is its slot in the edge-predictor output.
    pub fn internal(&self) -> &[usize] {
        &self.internal
    }

    pub fn internal_slot(&self, node: usize) -> Option<usize> {
        self.internal.binary_search(&node).ok()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn leaf_expectation(&self, leaf: usize) -> f64 {
        self.node(leaf)
            .and_then(|n| n.expectation)
            .expect("leaf expectation set at build time")
    }

    /// Leaf ranges sorted by lower bound.
    pub fn leaf_ranges(&self) -> Vec<(u64, u64)> {
        let mut ranges: Vec<(u64, u64)> = self
            .leaves
            .iter()
            .map(|&i| {
                let n = self.node(i).expect("leaf exists");
                (n.lower, n.upper)
            })
            .collect();
        ranges.sort_unstable();
        ranges
    }

    /// Clips `y` into `[l_0, r_0 - 1]`, warning when it had to move.
    pub fn clip(&self, y: f64) -> f64 {
        let root = self.root();
        let lo = root.lower as f64;
        let hi = root.upper as f64;
        if y < lo {
            warn!("label {y} below the tree range [{lo}, {hi}); clipped");
            lo
        } else if y >= hi {
            warn!("label {y} beyond the tree range [{lo}, {hi}); clipped");
            hi - 1.0
        } else {
            y
        }
    }

    /// Root-to-leaf chain of nodes whose ranges contain `y` (after clipping).
    pub fn path_nodes(&self, y: f64) -> Vec<usize> {
        let y = self.clip(y);
        let mut path = Vec::with_capacity(self.depth + 1);
        let mut i = 0;
        loop {
            path.push(i);
            let node = self.node(i).expect("path follows existing nodes");
            match node.cutoff {
                Some(m) => i = if y < m as f64 { left_child(i) } else { right_child(i) },
                None => return path,
            }
        }
    }

    /// Leaf whose range contains `y` (after clipping).
    pub fn leaf_for(&self, y: f64) -> usize {
        *self.path_nodes(y).last().expect("path is never empty")
    }
}

/// `e_i` for every leaf of `tree`, in [`BucketTree::leaves`] order.
pub fn leaf_expectations(tree: &BucketTree, labels: &[u64], mode: LeafValue) -> Result<Vec<f64>, TreeError> {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    tree.leaves()
        .iter()
        .map(|&leaf| {
            let node = tree.node(leaf).expect("leaf exists");
            let lo = sorted.partition_point(|&x| x < node.lower);
            let hi = sorted.partition_point(|&x| x < node.upper);
            let inside = &sorted[lo..hi];
            if inside.is_empty() {
                return Err(TreeError::EmptyLeaf {
                    node: leaf,
                    lower: node.lower,
                    upper: node.upper,
                });
            }
            Ok(match mode {
                LeafValue::DistinctMean => {
                    let mut distinct = inside.to_vec();
                    distinct.dedup();
                    distinct.iter().map(|&v| v as f64).sum::<f64>() / distinct.len() as f64
                }
                LeafValue::SampleMean => inside.iter().map(|&v| v as f64).sum::<f64>() / inside.len() as f64,
                LeafValue::Midpoint => (node.lower as f64 + node.upper as f64) / 2.0,
            })
        })
        .collect()
}

/// Distance `psi(y, m) = |y - m| / (y + eps)` and its probability map
/// `h(d) = exp(-k d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingKernel {
    pub eps: f64,
    pub sharpness: f64,
}

impl Default for SmoothingKernel {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            sharpness: 10.0,
        }
    }
}

impl SmoothingKernel {
    pub fn new(eps: f64, sharpness: f64) -> Option<Self> {
        (eps > 0.0 && sharpness > 0.0).then_some(Self { eps, sharpness })
    }

    pub fn psi(&self, y: f64, m: f64) -> f64 {
        psi(y, m, self.eps)
    }

    pub fn h(&self, d: f64) -> f64 {
        h_map(d, self.sharpness)
    }
}

pub fn psi(y: f64, m: f64, eps: f64) -> f64 {
    (y - m).abs() / (y + eps)
}

pub fn h_map(d: f64, sharpness: f64) -> f64 {
    (-sharpness * d).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelKind {
    /// Target in {0, 1}: fitted with cross entropy.
    Classification,
    /// Target in (0, 1): fitted with squared error.
    Regression,
}

impl LabelKind {
    pub fn of(p: f64) -> Self {
        if p == 0.0 || p == 1.0 {
            LabelKind::Classification
        } else {
            LabelKind::Regression
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftLabel {
    pub node: usize,
    pub left: f64,
    pub right: f64,
}

impl SoftLabel {
    pub fn left_kind(&self) -> LabelKind {
        LabelKind::of(self.left)
    }

    pub fn right_kind(&self) -> LabelKind {
        LabelKind::of(self.right)
    }
}

/// Edge targets for every internal node on a label's path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SoftLabelSet {
    pub entries: Vec<SoftLabel>,
}

fn snap(p: f64) -> f64 {
    if p < SOFT_LABEL_FLOOR {
        0.0
    } else {
        p
    }
}

/// Non-normalized soft labels: the side containing `y` gets 1, the other side
/// gets `h(psi(y, m))`.
pub fn soft_labels(tree: &BucketTree, y: f64, kernel: &SmoothingKernel) -> SoftLabelSet {
    let y = tree.clip(y);
    let entries = tree
        .path_nodes(y)
        .into_iter()
        .filter_map(|i| {
            let node = tree.node(i)?;
            let m = node.cutoff? as f64;
            let in_left = node.lower as f64 <= y && y < m;
            let in_right = m <= y && y < node.upper as f64;
            let d_left = if in_left { 0.0 } else { kernel.psi(y, m) };
            let d_right = if in_right { 0.0 } else { kernel.psi(y, m) };
            Some(SoftLabel {
                node: i,
                left: snap(kernel.h(d_left)),
                right: snap(kernel.h(d_right)),
            })
        })
        .collect();
    SoftLabelSet { entries }
}

/// One-hot path labels: 1 toward the child containing `y`, 0 on the other edge.
pub fn hard_labels(tree: &BucketTree, y: f64) -> SoftLabelSet {
    let y = tree.clip(y);
    let entries = tree
        .path_nodes(y)
        .into_iter()
        .filter_map(|i| {
            let m = tree.node(i)?.cutoff? as f64;
            let goes_left = y < m;
            Some(SoftLabel {
                node: i,
                left: if goes_left { 1.0 } else { 0.0 },
                right: if goes_left { 0.0 } else { 1.0 },
            })
        })
        .collect();
    SoftLabelSet { entries }
}
