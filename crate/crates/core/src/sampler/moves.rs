//! Move mixture and the structural parts of the Metropolis-Hastings ratios.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Branching;
use crate::data::ColumnKind;
use crate::tree::{rule_log_density, split_probability, DecisionRule, NodeId, RidgeTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

impl MoveKind {
    pub const ALL: [MoveKind; 3] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change];

    pub fn index(self) -> usize {
        match self {
            MoveKind::Grow => 0,
            MoveKind::Prune => 1,
            MoveKind::Change => 2,
        }
    }
}

/// `(grow, prune, change)` probabilities for a tree with `leaves` leaves.
/// A single leaf cannot be pruned, so its prune mass goes to grow.
pub fn move_probabilities(leaves: usize) -> [f64; 3] {
    if leaves <= 1 {
        [0.8, 0.0, 0.2]
    } else {
        [0.4, 0.4, 0.2]
    }
}

pub fn choose_move<R: Rng + ?Sized>(leaves: usize, rng: &mut R) -> MoveKind {
    let probs = move_probabilities(leaves);
    let u: f64 = rng.random();
    if u < probs[0] {
        MoveKind::Grow
    } else if u < probs[0] + probs[1] {
        MoveKind::Prune
    } else {
        MoveKind::Change
    }
}

/// Change in log tree prior from splitting `leaf` of `tree` with `rule`.
pub fn grow_prior_delta(
    tree: &RidgeTree,
    leaf: NodeId,
    rule: &DecisionRule,
    kinds: &[ColumnKind],
    branching: &Branching,
) -> f64 {
    let depth = leaf.depth();
    let cell = tree.cell(leaf, kinds);
    let p = split_probability(branching, depth, cell.splittable_count());
    let p_left = split_probability(branching, depth + 1, cell.child(rule, true).splittable_count());
    let p_right = split_probability(branching, depth + 1, cell.child(rule, false).splittable_count());
    p.ln() + (1.0 - p_left).ln() + (1.0 - p_right).ln() - (1.0 - p).ln() + rule_log_density(&cell, rule)
}

/// Number of prunable nodes after growing `leaf`.
fn prunable_after_grow(tree: &RidgeTree, leaf: NodeId) -> usize {
    let before = tree.prunable_nodes().len();
    let parent_was_prunable = leaf
        .parent()
        .is_some_and(|p| tree.is_leaf(p.left()) && tree.is_leaf(p.right()));
    before + 1 - usize::from(parent_was_prunable)
}

/// Log acceptance ratio for growing `leaf` of `tree` (the smaller tree) with
/// `rule`, given the leaf log marginals of the parent and the two children.
///
/// Pruning the grown tree back to `tree` has exactly the negated ratio; the
/// sampler evaluates prunes through this function so the two agree bitwise.
#[allow(clippy::too_many_arguments)]
pub fn grow_log_ratio(
    tree: &RidgeTree,
    leaf: NodeId,
    rule: &DecisionRule,
    lm_parent: f64,
    lm_left: f64,
    lm_right: f64,
    kinds: &[ColumnKind],
    branching: &Branching,
) -> f64 {
    let prior = grow_prior_delta(tree, leaf, rule, kinds, branching);
    let leaves = tree.leaf_count();
    let reverse = move_probabilities(leaves + 1)[MoveKind::Prune.index()].ln()
        - (prunable_after_grow(tree, leaf) as f64).ln();
    let forward = move_probabilities(leaves)[MoveKind::Grow.index()].ln() - (leaves as f64).ln()
        + rule_log_density(&tree.cell(leaf, kinds), rule);
    prior + (lm_left + lm_right - lm_parent) + reverse - forward
}
