//! Bucket classification over the tree: per-edge sigmoid predictors, the
//! mixed cross-entropy / squared-error loss on soft edge labels, and
//! expectation inference `y_f = sum_leaf e_leaf * w_leaf`.

use crate::nn::sigmoid;
use crate::tree::{left_child, parent, right_child, BucketTree, LabelKind, SoftLabelSet};

/// Predicted probabilities `(p_left, p_right)` for one internal node.
pub type EdgePair = [f64; 2];

/// Predictions are clamped into `[CE_CLAMP, 1 - CE_CLAMP]` before the log.
pub const CE_CLAMP: f64 = 1e-7;

/// Sum of left and right predictions below which the conditional falls back to 1/2.
pub const DEGENERATE_PAIR: f64 = 1e-12;

/// Squashes head logits laid out as `[l_0, r_0, l_1, r_1, ...]` (one pair per
/// internal slot) into edge probabilities.
pub fn edge_probabilities(logits: &[f64]) -> Vec<EdgePair> {
    logits
        .chunks_exact(2)
        .map(|c| [sigmoid(c[0]), sigmoid(c[1])])
        .collect()
}

/// Loss of one edge predictor against its target.
pub fn side_loss(target: f64, predicted: f64) -> f64 {
    match LabelKind::of(target) {
        LabelKind::Classification => {
            let p = predicted.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
            -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
        }
        LabelKind::Regression => (target - predicted).powi(2),
    }
}

/// Derivative of [`side_loss`] with respect to the predicted probability.
pub fn side_loss_derivative(target: f64, predicted: f64) -> f64 {
    match LabelKind::of(target) {
        LabelKind::Classification => {
            if !(CE_CLAMP..=1.0 - CE_CLAMP).contains(&predicted) {
                return 0.0;
            }
            -target / predicted + (1.0 - target) / (1.0 - predicted)
        }
        LabelKind::Regression => 2.0 * (predicted - target),
    }
}

/// Per-sample loss summed over both edges of every node on the label path.
pub fn bucket_loss(tree: &BucketTree, soft: &SoftLabelSet, predicted: &[EdgePair]) -> f64 {
    soft.entries
        .iter()
        .map(|e| {
            let slot = tree.internal_slot(e.node).expect("soft label on an internal node");
            let [pl, pr] = predicted[slot];
            side_loss(e.left, pl) + side_loss(e.right, pr)
        })
        .sum()
}

/// Batch mean of [`bucket_loss`].
pub fn bucket_loss_batch<'a, I>(tree: &BucketTree, batch: I) -> f64
where
    I: IntoIterator<Item = (&'a SoftLabelSet, &'a [EdgePair])>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for (soft, predicted) in batch {
        total += bucket_loss(tree, soft, predicted);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketPrediction {
    /// `p(i -> 2i+1)` per internal slot.
    pub left_conditionals: Vec<f64>,
    /// `w_i` per leaf, aligned with [`BucketTree::leaves`].
    pub leaf_weights: Vec<f64>,
    pub y_f: f64,
}

fn left_conditional([pl, pr]: EdgePair) -> f64 {
    let s = pl + pr;
    if s < DEGENERATE_PAIR {
        0.5
    } else {
        pl / s
    }
}

/// Path-product inference over the whole tree.
pub fn infer_yf(tree: &BucketTree, predicted: &[EdgePair]) -> BucketPrediction {
    assert_eq!(predicted.len(), tree.internal().len(), "one pair per internal node");
    let left_conditionals: Vec<f64> = predicted.iter().map(|&p| left_conditional(p)).collect();
    let nodes = tree.nodes();
    let mut reach = vec![0.0; nodes.len()];
    reach[0] = 1.0;
    for i in 1..nodes.len() {
        if nodes[i].is_none() {
            continue;
        }
        let p = parent(i).expect("non-root");
        let slot = tree.internal_slot(p).expect("parent is internal");
        let c = left_conditionals[slot];
        let step = if i == left_child(p) { c } else { 1.0 - c };
        reach[i] = reach[p] * step;
    }
    let leaf_weights: Vec<f64> = tree.leaves().iter().map(|&l| reach[l]).collect();
    let y_f = tree
        .leaves()
        .iter()
        .zip(&leaf_weights)
        .map(|(&l, w)| tree.leaf_expectation(l) * w)
        .sum();
    BucketPrediction {
        left_conditionals,
        leaf_weights,
        y_f,
    }
}

/// `d y_f / d p_hat` for every internal slot, as `[d/dp_left, d/dp_right]`.
pub fn yf_gradient(tree: &BucketTree, predicted: &[EdgePair]) -> Vec<EdgePair> {
    let nodes = tree.nodes();
    let cond: Vec<f64> = predicted.iter().map(|&p| left_conditional(p)).collect();
    let slot_of = |i: usize| tree.internal_slot(i).expect("internal node");

    // Expected leaf value below each node.
    let mut below = vec![0.0; nodes.len()];
    for i in (0..nodes.len()).rev() {
        let Some(node) = &nodes[i] else { continue };
        below[i] = match node.cutoff {
            None => tree.leaf_expectation(i),
            Some(_) => {
                let c = cond[slot_of(i)];
                c * below[left_child(i)] + (1.0 - c) * below[right_child(i)]
            }
        };
    }
    // Probability of reaching each node.
    let mut reach = vec![0.0; nodes.len()];
    reach[0] = 1.0;
    for i in 1..nodes.len() {
        if nodes[i].is_none() {
            continue;
        }
        let p = parent(i).expect("non-root");
        let c = cond[slot_of(p)];
        reach[i] = reach[p] * if i == left_child(p) { c } else { 1.0 - c };
    }

    tree.internal()
        .iter()
        .zip(predicted)
        .map(|(&i, &[pl, pr])| {
            let s = pl + pr;
            if s < DEGENERATE_PAIR {
                return [0.0, 0.0];
            }
            let d_cond = reach[i] * (below[left_child(i)] - below[right_child(i)]);
            [d_cond * pr / (s * s), -d_cond * pl / (s * s)]
        })
        .collect()
}
