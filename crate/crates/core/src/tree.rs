//! Decision-tree mechanics: routing, the branching-process prior, decision
//! rule sampling and the structural halves of grow/prune moves.
//!
//! Nodes are addressed by heap index: the root is 1 and node `k` has children
//! `2k` (left) and `2k + 1` (right). A node's depth is `floor(log2 k)`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Branching;
use crate::data::ColumnKind;
use crate::error::TreeError;
use crate::model::LeafParams;

/// Nodes at this depth are always leaves.
pub const MAX_DEPTH: usize = 32;

/// Continuous intervals narrower than this are treated as exhausted.
const MIN_INTERVAL_WIDTH: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl NodeId {
    pub const ROOT: NodeId = NodeId(1);

    #[inline]
    pub fn left(self) -> NodeId {
        NodeId(2 * self.0)
    }
    #[inline]
    pub fn right(self) -> NodeId {
        NodeId(2 * self.0 + 1)
    }
    pub fn parent(self) -> Option<NodeId> {
        (self.0 > 1).then_some(NodeId(self.0 / 2))
    }
    #[inline]
    pub fn depth(self) -> usize {
        (63 - self.0.leading_zeros()) as usize
    }
    pub fn is_left_child(self) -> bool {
        self.0 > 1 && self.0.is_multiple_of(2)
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Bitmask over categorical levels `0..64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelSet(pub u64);

impl LevelSet {
    pub fn all(levels: u32) -> LevelSet {
        if levels >= 64 {
            LevelSet(u64::MAX)
        } else {
            LevelSet((1u64 << levels) - 1)
        }
    }
    #[inline]
    pub fn contains(self, level: u32) -> bool {
        level < 64 && self.0 >> level & 1 == 1
    }
    pub fn len(self) -> u32 {
        self.0.count_ones()
    }
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
    pub fn iter(self) -> impl Iterator<Item = u32> {
        (0..64).filter(move |&l| self.contains(l))
    }
    pub fn intersect(self, other: LevelSet) -> LevelSet {
        LevelSet(self.0 & other.0)
    }
    pub fn minus(self, other: LevelSet) -> LevelSet {
        LevelSet(self.0 & !other.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DecisionRule {
    /// Route left iff `x[var] < cut`.
    Continuous { var: usize, cut: f64 },
    /// Route left iff the level code of `x[var]` is in `left`.
    Categorical { var: usize, left: LevelSet },
}

impl DecisionRule {
    pub fn var(&self) -> usize {
        match *self {
            DecisionRule::Continuous { var, .. } | DecisionRule::Categorical { var, .. } => var,
        }
    }

    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        match *self {
            DecisionRule::Continuous { var, cut } => x[var] < cut,
            DecisionRule::Categorical { var, left } => left.contains(x[var] as u32),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Reach {
    Interval { lo: f64, hi: f64 },
    Levels(LevelSet),
}

/// The region of covariate space reaching a node.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    reach: Vec<Reach>,
}

impl Cell {
    pub fn root(kinds: &[ColumnKind]) -> Cell {
        Cell {
            reach: kinds
                .iter()
                .map(|k| match *k {
                    ColumnKind::Continuous => Reach::Interval { lo: 0.0, hi: 1.0 },
                    ColumnKind::Categorical { levels } => Reach::Levels(LevelSet::all(levels)),
                })
                .collect(),
        }
    }

    /// Variables that can still be split at this cell.
    pub fn splittable_vars(&self) -> Vec<usize> {
        self.reach
            .iter()
            .enumerate()
            .filter(|(_, r)| match **r {
                Reach::Interval { lo, hi } => hi - lo > MIN_INTERVAL_WIDTH,
                Reach::Levels(set) => set.len() >= 2,
            })
            .map(|(j, _)| j)
            .collect()
    }

    pub fn splittable_count(&self) -> usize {
        self.splittable_vars().len()
    }

    /// Cell of the left (`left = true`) or right child under `rule`.
    pub fn child(&self, rule: &DecisionRule, left: bool) -> Cell {
        let mut reach = self.reach.clone();
        match (*rule, &mut reach[rule.var()]) {
            (DecisionRule::Continuous { cut, .. }, Reach::Interval { lo, hi }) => {
                if left {
                    *hi = cut;
                } else {
                    *lo = cut;
                }
            }
            (DecisionRule::Categorical { left: set, .. }, Reach::Levels(levels)) => {
                *levels = if left {
                    levels.intersect(set)
                } else {
                    levels.minus(set)
                };
            }
            _ => {}
        }
        Cell { reach }
    }

    /// `(lo, hi)` of a continuous variable.
    pub fn interval(&self, var: usize) -> Option<(f64, f64)> {
        match self.reach[var] {
            Reach::Interval { lo, hi } => Some((lo, hi)),
            Reach::Levels(_) => None,
        }
    }

    pub fn levels(&self, var: usize) -> Option<LevelSet> {
        match self.reach[var] {
            Reach::Levels(s) => Some(s),
            Reach::Interval { .. } => None,
        }
    }

    /// Whether `rule` leaves both children nonempty.
    pub fn admits(&self, rule: &DecisionRule) -> bool {
        match (*rule, self.reach.get(rule.var())) {
            (DecisionRule::Continuous { cut, .. }, Some(Reach::Interval { lo, hi })) => *lo < cut && cut < *hi,
            (DecisionRule::Categorical { left, .. }, Some(Reach::Levels(levels))) => {
                !levels.intersect(left).is_empty() && !levels.minus(left).is_empty()
            }
            _ => false,
        }
    }
}

/// Probability that a node at `depth` with `splittable` variables splits.
pub fn split_probability(branching: &Branching, depth: usize, splittable: usize) -> f64 {
    if splittable == 0 || depth >= MAX_DEPTH {
        0.0
    } else {
        branching.split_probability(depth)
    }
}

/// Draws a decision rule for a node whose reachable region is `cell`.
///
/// The variable is uniform over splittable variables; continuous cutpoints are
/// uniform on the reachable interval and categorical left sets are uniform
/// over nonempty proper subsets of the reachable levels.
pub fn sample_decision_rule<R: Rng + ?Sized>(
    node: NodeId,
    cell: &Cell,
    rng: &mut R,
) -> Result<DecisionRule, TreeError> {
    let vars = cell.splittable_vars();
    if vars.is_empty() {
        return Err(TreeError::NoSplittableVariable(node.0));
    }
    let var = vars[rng.random_range(0..vars.len())];
    match cell.reach[var] {
        Reach::Interval { lo, hi } => loop {
            let cut = lo + (hi - lo) * rng.random::<f64>();
            if lo < cut && cut < hi {
                return Ok(DecisionRule::Continuous { var, cut });
            }
        },
        Reach::Levels(levels) => {
            let reachable: Vec<u32> = levels.iter().collect();
            loop {
                let mut left = 0u64;
                for &l in &reachable {
                    if rng.random::<bool>() {
                        left |= 1 << l;
                    }
                }
                let left = LevelSet(left);
                if !left.is_empty() && left != levels {
                    return Ok(DecisionRule::Categorical { var, left });
                }
            }
        }
    }
}

/// Log density of `rule` under [`sample_decision_rule`] at `cell`.
pub fn rule_log_density(cell: &Cell, rule: &DecisionRule) -> f64 {
    let choose_var = -(cell.splittable_count() as f64).ln();
    let within = match cell.reach[rule.var()] {
        Reach::Interval { lo, hi } => -(hi - lo).ln(),
        Reach::Levels(levels) => -(2f64.powi(levels.len() as i32) - 2.0).ln(),
    };
    choose_var + within
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Internal(DecisionRule),
    Leaf(LeafParams),
}

/// Binary decision tree whose leaves carry ridge-leaf parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeRepr", into = "TreeRepr")]
pub struct RidgeTree {
    nodes: BTreeMap<NodeId, Node>,
}

#[derive(Serialize, Deserialize)]
struct NodeEntry {
    id: NodeId,
    #[serde(flatten)]
    node: Node,
}

#[derive(Serialize, Deserialize)]
struct TreeRepr {
    nodes: Vec<NodeEntry>,
}

impl From<RidgeTree> for TreeRepr {
    fn from(t: RidgeTree) -> Self {
        TreeRepr {
            nodes: t.nodes.into_iter().map(|(id, node)| NodeEntry { id, node }).collect(),
        }
    }
}

impl TryFrom<TreeRepr> for RidgeTree {
    type Error = TreeError;
    fn try_from(r: TreeRepr) -> Result<Self, Self::Error> {
        let mut nodes = BTreeMap::new();
        for e in r.nodes {
            if nodes.insert(e.id, e.node).is_some() {
                return Err(TreeError::Malformed(format!("duplicate node {}", e.id)));
            }
        }
        let tree = RidgeTree { nodes };
        tree.check_shape()?;
        Ok(tree)
    }
}

impl RidgeTree {
    pub fn single_leaf(params: LeafParams) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeId::ROOT, Node::Leaf(params));
        RidgeTree { nodes }
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().map(|(&id, n)| (id, n))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(&id), Some(Node::Leaf(_)))
    }

    pub fn rule(&self, id: NodeId) -> Option<&DecisionRule> {
        match self.nodes.get(&id) {
            Some(Node::Internal(r)) => Some(r),
            _ => None,
        }
    }

    pub fn leaf(&self, id: NodeId) -> Option<&LeafParams> {
        match self.nodes.get(&id) {
            Some(Node::Leaf(p)) => Some(p),
            _ => None,
        }
    }

    pub fn leaf_mut(&mut self, id: NodeId) -> Option<&mut LeafParams> {
        match self.nodes.get_mut(&id) {
            Some(Node::Leaf(p)) => Some(p),
            _ => None,
        }
    }

    /// Leaf ids in ascending order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, n)| matches!(n, Node::Leaf(_)))
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.values().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Internal nodes whose children are both leaves ("no grandchildren").
    pub fn prunable_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(&id, n)| matches!(n, Node::Internal(_)) && self.is_leaf(id.left()) && self.is_leaf(id.right()))
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn leaves_mut(&mut self) -> impl Iterator<Item = (NodeId, &mut LeafParams)> {
        self.nodes.iter_mut().filter_map(|(&id, n)| match n {
            Node::Leaf(p) => Some((id, p)),
            Node::Internal(_) => None,
        })
    }

    /// Leaf reached by `x`.
    #[inline]
    pub fn assign_leaf(&self, x: &[f64]) -> NodeId {
        let mut id = NodeId::ROOT;
        loop {
            match &self.nodes[&id] {
                Node::Leaf(_) => return id,
                Node::Internal(rule) => {
                    id = if rule.goes_left(x) { id.left() } else { id.right() };
                }
            }
        }
    }

    /// Reachable region of node `id`, from the rules of its ancestors.
    pub fn cell(&self, id: NodeId, kinds: &[ColumnKind]) -> Cell {
        let mut path = Vec::new();
        let mut cur = id;
        while let Some(parent) = cur.parent() {
            path.push((parent, cur.is_left_child()));
            cur = parent;
        }
        let mut cell = Cell::root(kinds);
        for &(anc, left) in path.iter().rev() {
            if let Some(rule) = self.rule(anc) {
                cell = cell.child(rule, left);
            }
        }
        cell
    }

    /// Turns leaf `id` into an internal node with `rule` and two new leaves.
    /// Returns the parameters of the replaced leaf.
    pub fn grow(&mut self, id: NodeId, rule: DecisionRule, left: LeafParams, right: LeafParams) -> Result<LeafParams, TreeError> {
        match self.nodes.get(&id) {
            None => return Err(TreeError::MissingNode(id.0)),
            Some(Node::Internal(_)) => return Err(TreeError::NotALeaf(id.0)),
            Some(Node::Leaf(_)) => {}
        }
        if id.depth() >= MAX_DEPTH {
            return Err(TreeError::Malformed(format!("node {id} is at the depth cap")));
        }
        let old = self.nodes.insert(id, Node::Internal(rule));
        self.nodes.insert(id.left(), Node::Leaf(left));
        self.nodes.insert(id.right(), Node::Leaf(right));
        match old {
            Some(Node::Leaf(p)) => Ok(p),
            _ => unreachable!(),
        }
    }

    /// Collapses prunable node `id` into a leaf with `merged` parameters.
    /// Returns the removed rule and the two removed leaves.
    pub fn prune(&mut self, id: NodeId, merged: LeafParams) -> Result<(DecisionRule, LeafParams, LeafParams), TreeError> {
        match self.nodes.get(&id) {
            None => return Err(TreeError::MissingNode(id.0)),
            Some(Node::Leaf(_)) => return Err(TreeError::NotPrunable(id.0)),
            Some(Node::Internal(_)) => {}
        }
        if !self.is_leaf(id.left()) || !self.is_leaf(id.right()) {
            return Err(TreeError::NotPrunable(id.0));
        }
        let take_leaf = |n: Option<Node>| match n {
            Some(Node::Leaf(p)) => p,
            _ => unreachable!(),
        };
        let left = take_leaf(self.nodes.remove(&id.left()));
        let right = take_leaf(self.nodes.remove(&id.right()));
        let rule = match self.nodes.insert(id, Node::Leaf(merged)) {
            Some(Node::Internal(r)) => r,
            _ => unreachable!(),
        };
        Ok((rule, left, right))
    }

    fn check_shape(&self) -> Result<(), TreeError> {
        if !self.nodes.contains_key(&NodeId::ROOT) {
            return Err(TreeError::Malformed("missing root".into()));
        }
        for (&id, node) in &self.nodes {
            if id.0 == 0 {
                return Err(TreeError::Malformed("node id 0".into()));
            }
            if let Some(p) = id.parent() {
                if !matches!(self.nodes.get(&p), Some(Node::Internal(_))) {
                    return Err(TreeError::Malformed(format!("node {id} has no internal parent")));
                }
            }
            let has_children = self.nodes.contains_key(&id.left()) || self.nodes.contains_key(&id.right());
            match node {
                Node::Internal(_) => {
                    if !(self.nodes.contains_key(&id.left()) && self.nodes.contains_key(&id.right())) {
                        return Err(TreeError::Malformed(format!("internal node {id} lacks a child")));
                    }
                }
                Node::Leaf(_) if has_children => {
                    return Err(TreeError::Malformed(format!("leaf {id} has children")));
                }
                Node::Leaf(_) => {}
            }
        }
        Ok(())
    }

    /// Checks the structural invariants plus nonempty leaf cells.
    pub fn validate(&self, kinds: &[ColumnKind]) -> Result<(), TreeError> {
        self.check_shape()?;
        for (&id, node) in &self.nodes {
            if let Node::Internal(rule) = node {
                if rule.var() >= kinds.len() || !self.cell(id, kinds).admits(rule) {
                    return Err(TreeError::Malformed(format!("rule at node {id} empties a child cell")));
                }
            }
        }
        Ok(())
    }

    /// Prior log density: branching-process terms plus rule densities.
    pub fn log_prior(&self, branching: &Branching, kinds: &[ColumnKind]) -> f64 {
        let (structure, rules) = self.log_prior_parts(branching, kinds);
        structure + rules
    }

    /// Branching-process terms only (the probability of the tree's shape).
    pub fn log_structure_prior(&self, branching: &Branching, kinds: &[ColumnKind]) -> f64 {
        self.log_prior_parts(branching, kinds).0
    }

    fn log_prior_parts(&self, branching: &Branching, kinds: &[ColumnKind]) -> (f64, f64) {
        let mut structure = 0.0;
        let mut rules = 0.0;
        let mut stack = vec![(NodeId::ROOT, Cell::root(kinds))];
        while let Some((id, cell)) = stack.pop() {
            let p = split_probability(branching, id.depth(), cell.splittable_count());
            match &self.nodes[&id] {
                Node::Leaf(_) => structure += (1.0 - p).ln(),
                Node::Internal(rule) => {
                    structure += p.ln();
                    rules += rule_log_density(&cell, rule);
                    stack.push((id.right(), cell.child(rule, false)));
                    stack.push((id.left(), cell.child(rule, true)));
                }
            }
        }
        (structure, rules)
    }
}

/// Draws a tree structure from the branching-process prior. Leaves get
/// `LeafParams::placeholder()`; callers fill them in.
pub fn sample_tree_prior<R: Rng + ?Sized>(branching: &Branching, kinds: &[ColumnKind], rng: &mut R) -> RidgeTree {
    let mut tree = RidgeTree::single_leaf(LeafParams::placeholder());
    let mut stack = vec![(NodeId::ROOT, Cell::root(kinds))];
    while let Some((id, cell)) = stack.pop() {
        let p = split_probability(branching, id.depth(), cell.splittable_count());
        if p > 0.0 && rng.random::<f64>() < p {
            let rule = sample_decision_rule(id, &cell, rng).expect("splittable cell");
            let left_cell = cell.child(&rule, true);
            let right_cell = cell.child(&rule, false);
            tree.grow(id, rule, LeafParams::placeholder(), LeafParams::placeholder())
                .expect("growing a fresh leaf");
            stack.push((id.right(), right_cell));
            stack.push((id.left(), left_cell));
        }
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;

    fn cont(p: usize) -> Vec<ColumnKind> {
        vec![ColumnKind::Continuous; p]
    }

    fn leaf() -> LeafParams {
        LeafParams::placeholder()
    }

    fn split(var: usize, cut: f64) -> DecisionRule {
        DecisionRule::Continuous { var, cut }
    }

    #[test]
    fn heap_ids() {
        assert_eq!(NodeId::ROOT.depth(), 0);
        assert_eq!(NodeId(2).depth(), 1);
        assert_eq!(NodeId(7).depth(), 2);
        assert_eq!(NodeId(5).parent(), Some(NodeId(2)));
        assert!(NodeId(4).is_left_child());
        assert!(!NodeId(5).is_left_child());
        assert_eq!(NodeId::ROOT.parent(), None);
    }

    #[test]
    fn single_leaf_routes_to_root() {
        let t = RidgeTree::single_leaf(leaf());
        assert_eq!(t.assign_leaf(&[0.3, 0.9]), NodeId::ROOT);
    }

    #[test]
    fn strict_inequality_routes_left() {
        let mut t = RidgeTree::single_leaf(leaf());
        t.grow(NodeId::ROOT, split(0, 0.5), leaf(), leaf()).unwrap();
        assert_eq!(t.assign_leaf(&[0.49]), NodeId(2));
        assert_eq!(t.assign_leaf(&[0.5]), NodeId(3));
    }

    #[test]
    fn nested_rules_trace() {
        let mut t = RidgeTree::single_leaf(leaf());
        t.grow(NodeId::ROOT, split(0, 0.5), leaf(), leaf()).unwrap();
        t.grow(NodeId(2), split(0, 0.25), leaf(), leaf()).unwrap();
        // 0.3 < 0.5 goes left to node 2, then 0.3 >= 0.25 goes right to node 5: [0.25, 0.5)
        assert_eq!(t.assign_leaf(&[0.3]), NodeId(5));
        assert_eq!(t.assign_leaf(&[0.1]), NodeId(4));
        assert_eq!(t.assign_leaf(&[0.7]), NodeId(3));
        let cell = t.cell(NodeId(5), &cont(1));
        assert_eq!(cell.interval(0), Some((0.25, 0.5)));
    }

    #[test]
    fn categorical_routing() {
        let kinds = vec![ColumnKind::Categorical { levels: 3 }];
        let mut t = RidgeTree::single_leaf(leaf());
        let rule = DecisionRule::Categorical {
            var: 0,
            left: LevelSet(0b101),
        };
        assert!(Cell::root(&kinds).admits(&rule));
        t.grow(NodeId::ROOT, rule, leaf(), leaf()).unwrap();
        assert_eq!(t.assign_leaf(&[0.0]), NodeId(2));
        assert_eq!(t.assign_leaf(&[1.0]), NodeId(3));
        assert_eq!(t.assign_leaf(&[2.0]), NodeId(2));
        // the right child only reaches level 1, so it cannot split further
        assert!(t.cell(NodeId(3), &kinds).splittable_vars().is_empty());
        assert_eq!(t.cell(NodeId(2), &kinds).splittable_vars(), vec![0]);
    }

    #[test]
    fn split_probabilities() {
        let b = Branching::default();
        assert_eq!(b.split_probability(0), 0.95);
        assert!((b.split_probability(2) - 0.105_555_555_555_555_56).abs() < 1e-15);
        let g = Branching::Geometric { gamma: 0.25 };
        // depth d splits with probability gamma^(d + 1)
        assert_eq!(g.split_probability(2), 0.015625);
        assert_eq!(split_probability(&b, MAX_DEPTH, 3), 0.0);
        assert_eq!(split_probability(&b, 0, 0), 0.0);
    }

    #[test]
    fn rule_within_ancestor_interval() {
        let mut t = RidgeTree::single_leaf(leaf());
        t.grow(NodeId::ROOT, split(0, 0.5), leaf(), leaf()).unwrap();
        let cell = t.cell(NodeId(3), &cont(1));
        let mut rng = chain_rng(1, 0);
        for _ in 0..1000 {
            match sample_decision_rule(NodeId(3), &cell, &mut rng).unwrap() {
                DecisionRule::Continuous { var, cut } => {
                    assert_eq!(var, 0);
                    assert!(cut > 0.5 && cut < 1.0);
                }
                _ => panic!("expected continuous rule"),
            }
        }
    }

    #[test]
    fn categorical_subsets_are_uniform() {
        let kinds = vec![ColumnKind::Categorical { levels: 3 }];
        let cell = Cell::root(&kinds);
        let mut rng = chain_rng(2, 0);
        let mut counts = std::collections::BTreeMap::new();
        let draws = 60_000;
        for _ in 0..draws {
            if let DecisionRule::Categorical { left, .. } = sample_decision_rule(NodeId::ROOT, &cell, &mut rng).unwrap() {
                *counts.entry(left.0).or_insert(0usize) += 1;
            }
        }
        // 2^3 - 2 nonempty proper subsets, each with probability 1/6
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for (_, c) in counts {
            assert!((c as f64 / draws as f64 - p).abs() < 4.0 * se);
        }
        let rule = DecisionRule::Categorical { var: 0, left: LevelSet(1) };
        assert!((rule_log_density(&cell, &rule) - (-(6f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn exhausted_cell_reports_error() {
        let kinds = vec![ColumnKind::Categorical { levels: 2 }];
        let mut t = RidgeTree::single_leaf(leaf());
        t.grow(NodeId::ROOT, DecisionRule::Categorical { var: 0, left: LevelSet(1) }, leaf(), leaf())
            .unwrap();
        let cell = t.cell(NodeId(2), &kinds);
        let mut rng = chain_rng(3, 0);
        assert_eq!(
            sample_decision_rule(NodeId(2), &cell, &mut rng),
            Err(TreeError::NoSplittableVariable(2))
        );
    }

    #[test]
    fn grow_then_prune_restores() {
        let original = RidgeTree::single_leaf(leaf());
        let mut t = original.clone();
        let old = t.grow(NodeId::ROOT, split(0, 0.4), leaf(), leaf()).unwrap();
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.leaf_count(), 2);
        t.prune(NodeId::ROOT, old).unwrap();
        assert_eq!(t, original);
    }

    #[test]
    fn wrong_targets_are_errors() {
        let mut t = RidgeTree::single_leaf(leaf());
        assert_eq!(t.prune(NodeId::ROOT, leaf()).unwrap_err(), TreeError::NotPrunable(1));
        t.grow(NodeId::ROOT, split(0, 0.4), leaf(), leaf()).unwrap();
        assert_eq!(
            t.grow(NodeId::ROOT, split(0, 0.3), leaf(), leaf()).unwrap_err(),
            TreeError::NotALeaf(1)
        );
        assert_eq!(t.prune(NodeId(9), leaf()).unwrap_err(), TreeError::MissingNode(9));
        t.grow(NodeId(2), split(0, 0.2), leaf(), leaf()).unwrap();
        // root now has a grandchild
        assert_eq!(t.prune(NodeId::ROOT, leaf()).unwrap_err(), TreeError::NotPrunable(1));
    }

    #[test]
    fn complete_depth_two_tree_has_two_prune_candidates() {
        let mut t = RidgeTree::single_leaf(leaf());
        t.grow(NodeId::ROOT, split(0, 0.5), leaf(), leaf()).unwrap();
        t.grow(NodeId(2), split(1, 0.5), leaf(), leaf()).unwrap();
        t.grow(NodeId(3), split(1, 0.5), leaf(), leaf()).unwrap();
        assert_eq!(t.leaves(), vec![NodeId(4), NodeId(5), NodeId(6), NodeId(7)]);
        assert_eq!(t.prunable_nodes(), vec![NodeId(2), NodeId(3)]);
    }

    #[test]
    fn log_prior_examples() {
        let b = Branching::default();
        let kinds = cont(1);
        let t = RidgeTree::single_leaf(leaf());
        assert!((t.log_prior(&b, &kinds) - 0.05f64.ln()).abs() < 1e-14);

        let mut t2 = t.clone();
        t2.grow(NodeId::ROOT, split(0, 0.3), leaf(), leaf()).unwrap();
        // rule terms: log(1/1 variable) + log(1/(1 - 0)) = 0
        let expected = 0.95f64.ln() + 2.0 * (1.0f64 - 0.2375).ln();
        assert!((t2.log_prior(&b, &kinds) - expected).abs() < 1e-14);

        let g = Branching::Geometric { gamma: 0.2 };
        assert!((t.log_prior(&g, &kinds) - 0.8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_prior_includes_interval_density() {
        let b = Branching::default();
        let kinds = cont(2);
        let mut t = RidgeTree::single_leaf(leaf());
        t.grow(NodeId::ROOT, split(0, 0.4), leaf(), leaf()).unwrap();
        t.grow(NodeId(2), split(0, 0.1), leaf(), leaf()).unwrap();
        let p0 = 0.95f64;
        let p1: f64 = 0.95 / 4.0;
        let p2: f64 = 0.95 / 9.0;
        let structure = p0.ln() + p1.ln() + (1.0 - p1).ln() + 2.0 * (1.0 - p2).ln();
        // root rule: 1/2 variables, width 1; node 2 rule: 1/2 variables, width 0.4
        let rules = 2.0 * 0.5f64.ln() - 0.4f64.ln();
        assert!((t.log_structure_prior(&b, &kinds) - structure).abs() < 1e-13);
        assert!((t.log_prior(&b, &kinds) - structure - rules).abs() < 1e-13);
    }

    #[test]
    fn sampled_trees_are_valid_and_partition() {
        let b = Branching::default();
        let kinds = vec![
            ColumnKind::Continuous,
            ColumnKind::Categorical { levels: 4 },
            ColumnKind::Continuous,
        ];
        let mut rng = chain_rng(9, 0);
        for _ in 0..300 {
            let t = sample_tree_prior(&b, &kinds, &mut rng);
            t.validate(&kinds).unwrap();
            let leaves = t.leaves();
            for _ in 0..50 {
                let x = [rng.random::<f64>(), rng.random_range(0..4) as f64, rng.random::<f64>()];
                let hit = t.assign_leaf(&x);
                assert!(leaves.contains(&hit));
                // exactly one leaf cell contains x
                let within = |lo: f64, hi: f64, v: f64| lo <= v && (v < hi || hi >= 1.0);
                let containing = leaves
                    .iter()
                    .filter(|&&l| {
                        let cell = t.cell(l, &kinds);
                        let (lo0, hi0) = cell.interval(0).unwrap();
                        let (lo2, hi2) = cell.interval(2).unwrap();
                        within(lo0, hi0, x[0])
                            && within(lo2, hi2, x[2])
                            && cell.levels(1).unwrap().contains(x[1] as u32)
                    })
                    .count();
                assert_eq!(containing, 1);
            }
        }
    }
}
