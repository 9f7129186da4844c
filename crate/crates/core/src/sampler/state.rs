//! Transient chain state and the per-tree Metropolis-within-Gibbs update.

use std::collections::BTreeMap;

use rand::Rng;

use crate::config::PriorConfig;
use crate::data::{Dataset, Matrix, Outcome};
use crate::error::{Error, NumericalError, TreeError};
use crate::model::{Ensemble, LeafParams};
use crate::ridge::sample_inner_weights;
use crate::sampler::moves::{choose_move, grow_log_ratio, MoveKind};
use crate::sampler::stats::{
    gaussian_base_terms, leaf_suffstats, normal_above, normal_below, sample_sigma2, LeafPosterior,
};
use crate::stats::normal_cdf;
use crate::tree::{sample_decision_rule, split_probability, DecisionRule, NodeId, RidgeTree};

/// Rows of one leaf, their basis matrix, and the factored leaf posterior under
/// the current partial residual.
#[derive(Clone, Debug)]
pub struct LeafFit {
    pub rows: Vec<usize>,
    phi: Matrix,
    pub post: LeafPosterior,
}

impl LeafFit {
    pub fn log_marginal(&self) -> f64 {
        self.post.log_marginal
    }
}

/// An in-progress update of tree `m`: the residual excludes tree `m` and every
/// current leaf has been fitted.
#[derive(Debug)]
pub struct TreeUpdate {
    m: usize,
    leaves: BTreeMap<NodeId, LeafFit>,
}

impl TreeUpdate {
    pub fn tree_index(&self) -> usize {
        self.m
    }

    pub fn leaf_fits(&self) -> &BTreeMap<NodeId, LeafFit> {
        &self.leaves
    }
}

/// A candidate replacement for the tree being updated.
#[derive(Debug)]
pub struct Proposal {
    pub kind: MoveKind,
    pub tree: RidgeTree,
    pub log_ratio: f64,
    created: Vec<(NodeId, LeafFit)>,
    removed: Vec<NodeId>,
}

/// Per-sweep move counters, indexed by [`MoveKind::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MoveCounts {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
}

pub struct ChainState<'a> {
    data: &'a Dataset,
    config: &'a PriorConfig,
    ensemble: Ensemble,
    /// `fits[m][i]`: evaluation of tree `m` at row `i`.
    fits: Vec<Vec<f64>>,
    /// `leaf_of[m][i]`: leaf of tree `m` reached by row `i`.
    leaf_of: Vec<Vec<NodeId>>,
    /// Centered outcome, or latent utilities minus the probit offset.
    target: Vec<f64>,
    residual: Vec<f64>,
    pub counts: MoveCounts,
}

impl<'a> ChainState<'a> {
    /// Cold start: single-leaf trees with prior inner weights and zero outer
    /// weights; `sigma^2` starts at the variance of `y` (fixed at 1 for binary
    /// outcomes, whose latent utilities are drawn given a zero fit).
    pub fn new<R: Rng + ?Sized>(data: &'a Dataset, config: &'a PriorConfig, rng: &mut R) -> Self {
        let trees = (0..config.trees)
            .map(|_| RidgeTree::single_leaf(sample_inner_weights(config, data.q(), rng)))
            .collect();
        let (sigma2, target) = match data.outcome() {
            Outcome::Gaussian => {
                let var = data.y().iter().map(|v| v * v).sum::<f64>() / data.n() as f64;
                (if var > 0.0 { var } else { 1.0 }, data.y().to_vec())
            }
            Outcome::Binary => {
                let bound = -data.y_center();
                let target = data
                    .y()
                    .iter()
                    .map(|&y| if y > 0.5 { normal_above(0.0, bound, rng) } else { normal_below(0.0, bound, rng) })
                    .collect();
                (1.0, target)
            }
        };
        let ensemble = Ensemble {
            trees,
            sigma2,
            y_center: data.y_center(),
            activation: config.activation,
        };
        Self::from_ensemble(data, config, ensemble, target)
    }

    /// State for an arbitrary ensemble and regression target.
    pub fn from_ensemble(data: &'a Dataset, config: &'a PriorConfig, ensemble: Ensemble, target: Vec<f64>) -> Self {
        assert_eq!(target.len(), data.n());
        let n = data.n();
        let mut fits = Vec::with_capacity(ensemble.trees.len());
        let mut leaf_of = Vec::with_capacity(ensemble.trees.len());
        for tree in &ensemble.trees {
            let mut f = vec![0.0; n];
            let mut l = vec![NodeId::ROOT; n];
            for i in 0..n {
                let id = tree.assign_leaf(data.x().row(i));
                l[i] = id;
                f[i] = tree.leaf(id).expect("leaf").eval(data.z().row(i), ensemble.activation);
            }
            fits.push(f);
            leaf_of.push(l);
        }
        let mut state = ChainState {
            data,
            config,
            ensemble,
            fits,
            leaf_of,
            residual: vec![0.0; n],
            target,
            counts: MoveCounts::default(),
        };
        state.resync();
        state
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn into_ensemble(self) -> Ensemble {
        self.ensemble
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn tree_fits(&self, m: usize) -> &[f64] {
        &self.fits[m]
    }

    /// Current ensemble fit at every training row.
    pub fn fitted(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.target.len()];
        for tree in &self.fits {
            for (a, b) in f.iter_mut().zip(tree) {
                *a += b;
            }
        }
        f
    }

    /// Replaces the regression target and re-derives the residual.
    pub fn set_target(&mut self, target: Vec<f64>) {
        assert_eq!(target.len(), self.target.len());
        self.target = target;
        self.resync();
    }

    pub fn set_sigma2(&mut self, sigma2: f64) {
        self.ensemble.sigma2 = sigma2;
    }

    /// Largest deviation of the cached residual from `target - sum of fits`.
    pub fn residual_drift(&self) -> f64 {
        let f = self.fitted();
        self.residual
            .iter()
            .zip(&self.target)
            .zip(&f)
            .map(|((r, t), f)| (r - (t - f)).abs())
            .fold(0.0, f64::max)
    }

    /// Recomputes the residual from scratch (trees summed in index order).
    pub fn resync(&mut self) {
        let f = self.fitted();
        for ((r, t), f) in self.residual.iter_mut().zip(&self.target).zip(&f) {
            *r = t - f;
        }
    }

    fn leaf_fit(&self, rows: Vec<usize>, params: &LeafParams) -> Result<LeafFit, NumericalError> {
        let d = self.config.ridge;
        let mut phi = Matrix::zeros(rows.len(), d);
        let mut r = Vec::with_capacity(rows.len());
        let z = self.data.z();
        for (k, &i) in rows.iter().enumerate() {
            params.features(z.row(i), self.config.activation, phi.row_mut(k));
            r.push(self.residual[i]);
        }
        let stats = leaf_suffstats(&phi, &r, self.ensemble.sigma2, self.config.tau);
        let post = LeafPosterior::new(&stats, self.config.tau)?;
        Ok(LeafFit { rows, phi, post })
    }

    /// Removes tree `m` from the residual and fits each of its leaves.
    /// On failure the state is left unchanged.
    pub fn begin_update(&mut self, m: usize) -> Result<TreeUpdate, NumericalError> {
        for (r, f) in self.residual.iter_mut().zip(&self.fits[m]) {
            *r += f;
        }
        let tree = &self.ensemble.trees[m];
        let mut groups: BTreeMap<NodeId, Vec<usize>> = tree.leaves().into_iter().map(|id| (id, Vec::new())).collect();
        for (i, id) in self.leaf_of[m].iter().enumerate() {
            groups.get_mut(id).expect("cached leaf exists").push(i);
        }
        let mut leaves = BTreeMap::new();
        for (id, rows) in groups {
            let params = self.ensemble.trees[m].leaf(id).expect("leaf");
            match self.leaf_fit(rows, params) {
                Ok(fit) => {
                    leaves.insert(id, fit);
                }
                Err(e) => {
                    for (r, f) in self.residual.iter_mut().zip(&self.fits[m]) {
                        *r -= f;
                    }
                    return Err(e);
                }
            }
        }
        Ok(TreeUpdate { m, leaves })
    }

    /// Swaps in a different tree for the one being updated and refits its
    /// leaves against the same partial residual.
    pub fn replace_tree(&mut self, upd: &mut TreeUpdate, tree: RidgeTree) -> Result<(), NumericalError> {
        let x = self.data.x();
        let mut groups: BTreeMap<NodeId, Vec<usize>> = tree.leaves().into_iter().map(|id| (id, Vec::new())).collect();
        for i in 0..self.data.n() {
            groups.get_mut(&tree.assign_leaf(x.row(i))).expect("leaf").push(i);
        }
        let mut leaves = BTreeMap::new();
        for (id, rows) in groups {
            leaves.insert(id, self.leaf_fit(rows, tree.leaf(id).expect("leaf"))?);
        }
        upd.leaves = leaves;
        self.ensemble.trees[upd.m] = tree;
        Ok(())
    }

    /// Grow proposal splitting `leaf` with `rule` into children with the given
    /// inner weights.
    pub fn grow_proposal(
        &self,
        upd: &TreeUpdate,
        leaf: NodeId,
        rule: DecisionRule,
        left: LeafParams,
        right: LeafParams,
    ) -> Result<Proposal, Error> {
        let tree = &self.ensemble.trees[upd.m];
        let parent = upd.leaves.get(&leaf).ok_or(TreeError::NotALeaf(leaf.0))?;
        let x = self.data.x();
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = parent.rows.iter().partition(|&&i| rule.goes_left(x.row(i)));
        let lfit = self.leaf_fit(lrows, &left)?;
        let rfit = self.leaf_fit(rrows, &right)?;
        let log_ratio = grow_log_ratio(
            tree,
            leaf,
            &rule,
            parent.log_marginal(),
            lfit.log_marginal(),
            rfit.log_marginal(),
            self.data.x_kinds(),
            &self.config.branching,
        );
        let mut grown = tree.clone();
        grown.grow(leaf, rule, left, right)?;
        Ok(Proposal {
            kind: MoveKind::Grow,
            tree: grown,
            log_ratio,
            created: vec![(leaf.left(), lfit), (leaf.right(), rfit)],
            removed: vec![leaf],
        })
    }

    /// Prune proposal collapsing `node` into a leaf with inner weights `merged`.
    pub fn prune_proposal(&self, upd: &TreeUpdate, node: NodeId, merged: LeafParams) -> Result<Proposal, Error> {
        let tree = &self.ensemble.trees[upd.m];
        let (Some(lfit), Some(rfit)) = (upd.leaves.get(&node.left()), upd.leaves.get(&node.right())) else {
            return Err(TreeError::NotPrunable(node.0).into());
        };
        let mut rows = Vec::with_capacity(lfit.rows.len() + rfit.rows.len());
        rows.extend_from_slice(&lfit.rows);
        rows.extend_from_slice(&rfit.rows);
        rows.sort_unstable();
        let mfit = self.leaf_fit(rows, &merged)?;
        let mut pruned = tree.clone();
        let (rule, _, _) = pruned.prune(node, merged)?;
        let log_ratio = -grow_log_ratio(
            &pruned,
            node,
            &rule,
            mfit.log_marginal(),
            lfit.log_marginal(),
            rfit.log_marginal(),
            self.data.x_kinds(),
            &self.config.branching,
        );
        Ok(Proposal {
            kind: MoveKind::Prune,
            tree: pruned,
            log_ratio,
            created: vec![(node, mfit)],
            removed: vec![node.left(), node.right()],
        })
    }

    /// Change proposal replacing the inner weights of every leaf (ascending
    /// leaf order).
    pub fn change_proposal(&self, upd: &TreeUpdate, params: Vec<LeafParams>) -> Result<Proposal, Error> {
        if params.len() != upd.leaves.len() {
            return Err(TreeError::Malformed("one parameter set per leaf is required".into()).into());
        }
        let mut tree = self.ensemble.trees[upd.m].clone();
        let mut created = Vec::with_capacity(params.len());
        let mut old = 0.0;
        let mut new = 0.0;
        for ((&id, fit), p) in upd.leaves.iter().zip(params) {
            let nfit = self.leaf_fit(fit.rows.clone(), &p)?;
            old += fit.log_marginal();
            new += nfit.log_marginal();
            *tree.leaf_mut(id).expect("leaf") = p;
            created.push((id, nfit));
        }
        Ok(Proposal {
            kind: MoveKind::Change,
            tree,
            log_ratio: new - old,
            created,
            removed: upd.leaves.keys().copied().collect(),
        })
    }

    /// Draws a proposal of the given kind. `None` means the move is not
    /// available here (a forced leaf was picked for growing, or numerical
    /// trouble), which the caller treats as a rejection.
    pub fn propose<R: Rng + ?Sized>(&self, upd: &TreeUpdate, kind: MoveKind, rng: &mut R) -> Option<Proposal> {
        let tree = &self.ensemble.trees[upd.m];
        let q = self.data.q();
        let result = match kind {
            MoveKind::Grow => {
                let leaves = tree.leaves();
                let leaf = leaves[rng.random_range(0..leaves.len())];
                let cell = tree.cell(leaf, self.data.x_kinds());
                if split_probability(&self.config.branching, leaf.depth(), cell.splittable_count()) == 0.0 {
                    return None;
                }
                let rule = sample_decision_rule(leaf, &cell, rng).ok()?;
                let left = sample_inner_weights(self.config, q, rng);
                let right = sample_inner_weights(self.config, q, rng);
                self.grow_proposal(upd, leaf, rule, left, right)
            }
            MoveKind::Prune => {
                let candidates = tree.prunable_nodes();
                if candidates.is_empty() {
                    return None;
                }
                let node = candidates[rng.random_range(0..candidates.len())];
                let merged = sample_inner_weights(self.config, q, rng);
                self.prune_proposal(upd, node, merged)
            }
            MoveKind::Change => {
                let params = (0..upd.leaves.len())
                    .map(|_| sample_inner_weights(self.config, q, rng))
                    .collect();
                self.change_proposal(upd, params)
            }
        };
        match result {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("{kind:?} proposal rejected: {e}");
                None
            }
        }
    }

    /// Installs the proposal if accepted, draws outer weights for every leaf of
    /// the resulting tree, and restores the full residual.
    pub fn commit<R: Rng + ?Sized>(&mut self, upd: TreeUpdate, proposal: Option<Proposal>, accept: bool, rng: &mut R) {
        let m = upd.m;
        let mut leaves = upd.leaves;
        if let (Some(p), true) = (proposal, accept) {
            for id in &p.removed {
                leaves.remove(id);
            }
            leaves.extend(p.created);
            self.ensemble.trees[m] = p.tree;
            self.counts.accepted[p.kind.index()] += 1;
        }
        let tree = &mut self.ensemble.trees[m];
        let fits = &mut self.fits[m];
        let leaf_of = &mut self.leaf_of[m];
        for (id, fit) in leaves {
            let beta = fit.post.draw_beta(rng);
            for (k, &i) in fit.rows.iter().enumerate() {
                let v: f64 = fit.phi.row(k).iter().zip(&beta).map(|(a, b)| a * b).sum();
                fits[i] = v;
                leaf_of[i] = id;
                self.residual[i] -= v;
            }
            tree.leaf_mut(id).expect("leaf of committed tree").beta = beta;
        }
    }

    /// One Metropolis-Hastings step for tree `m` followed by the conditional
    /// draw of its outer weights.
    pub fn update_tree<R: Rng + ?Sized>(&mut self, m: usize, rng: &mut R) {
        let upd = match self.begin_update(m) {
            Ok(u) => u,
            Err(e) => {
                log::warn!("tree {m} skipped: {e}");
                return;
            }
        };
        let kind = choose_move(self.ensemble.trees[m].leaf_count(), rng);
        self.counts.proposed[kind.index()] += 1;
        let proposal = self.propose(&upd, kind, rng);
        let accept = match &proposal {
            Some(p) => rng.random::<f64>().ln() < p.log_ratio,
            None => false,
        };
        self.commit(upd, proposal, accept, rng);
    }

    pub fn update_sigma2<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let sse: f64 = self.residual.iter().map(|r| r * r).sum();
        self.ensemble.sigma2 = sample_sigma2(self.config.nu_sigma, self.config.lambda_sigma, self.residual.len(), sse, rng);
    }

    /// Redraws the latent utilities given the current fit.
    pub fn update_latent<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let bound = -self.data.y_center();
        for (i, &y) in self.data.y().iter().enumerate() {
            let f = self.target[i] - self.residual[i];
            let t = if y > 0.5 { normal_above(f, bound, rng) } else { normal_below(f, bound, rng) };
            self.target[i] = t;
            self.residual[i] = t - f;
        }
    }

    /// Full Gibbs sweep: every tree in index order, then `sigma^2` (Gaussian)
    /// or the latent utilities (binary).
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.counts = MoveCounts::default();
        for m in 0..self.ensemble.trees.len() {
            self.update_tree(m, rng);
            debug_assert!(self.residual_drift() < 1e-9);
        }
        self.resync();
        match self.data.outcome() {
            Outcome::Gaussian => self.update_sigma2(rng),
            Outcome::Binary => self.update_latent(rng),
        }
    }

    /// Log-likelihood of the observed outcomes under the current state.
    pub fn log_likelihood(&self) -> f64 {
        match self.data.outcome() {
            Outcome::Gaussian => gaussian_base_terms(&self.residual, self.ensemble.sigma2),
            Outcome::Binary => {
                let c = self.data.y_center();
                self.fitted()
                    .iter()
                    .zip(self.data.y())
                    .map(|(f, &y)| {
                        let p = normal_cdf(c + f);
                        let p = if y > 0.5 { p } else { 1.0 - p };
                        p.max(1e-300).ln()
                    })
                    .sum()
            }
        }
    }

    pub fn mean_leaf_count(&self) -> f64 {
        self.ensemble.leaf_count() as f64 / self.ensemble.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PriorSettings;
    use crate::ridge::Activation;
    use crate::rng::chain_rng;

    fn dataset(n: usize, outcome: Outcome, seed: u64) -> Dataset {
        let mut rng = chain_rng(seed, 99);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = rows
            .iter()
            .map(|r| {
                let f = (6.0 * r[0]).sin() + r[1];
                match outcome {
                    Outcome::Gaussian => f + 0.1 * rng.random::<f64>(),
                    Outcome::Binary => f64::from(u8::from(f > 0.5)),
                }
            })
            .collect();
        Dataset::continuous(x.clone(), x, y, outcome).unwrap()
    }

    fn config(data: &Dataset, activation: Activation, trees: usize, ridge: usize) -> PriorConfig {
        let s = PriorSettings {
            trees,
            ridge,
            activation,
            ..PriorSettings::default()
        };
        PriorConfig::calibrate(&s, data).unwrap()
    }

    #[test]
    fn residual_matches_fits_after_updates() {
        let data = dataset(60, Outcome::Gaussian, 1);
        let cfg = config(&data, Activation::Cosine, 5, 2);
        let mut rng = chain_rng(1, 0);
        let mut s = ChainState::new(&data, &cfg, &mut rng);
        for _ in 0..30 {
            for m in 0..5 {
                s.update_tree(m, &mut rng);
                assert!(s.residual_drift() < 1e-9);
            }
            s.update_sigma2(&mut rng);
        }
        assert!(s.ensemble().leaf_count() >= 5);
    }

    #[test]
    fn single_constant_tree_bookkeeping() {
        let data = dataset(5, Outcome::Gaussian, 2);
        let cfg = config(&data, Activation::Constant, 1, 1);
        let mut rng = chain_rng(2, 0);
        let mut s = ChainState::new(&data, &cfg, &mut rng);
        s.update_tree(0, &mut rng);
        for i in 0..5 {
            assert_eq!(s.residual()[i], data.y()[i] - s.tree_fits(0)[i]);
        }
    }

    #[test]
    fn rejected_updates_keep_structure_but_refresh_beta() {
        let data = dataset(40, Outcome::Gaussian, 3);
        let cfg = config(&data, Activation::Tanh, 1, 1);
        let mut rng = chain_rng(3, 0);
        let mut s = ChainState::new(&data, &cfg, &mut rng);
        let before = s.ensemble().trees[0].clone();
        let mut betas = Vec::new();
        for _ in 0..2 {
            let upd = s.begin_update(0).unwrap();
            let p = s.propose(&upd, MoveKind::Grow, &mut rng);
            assert!(p.is_some());
            s.commit(upd, p, false, &mut rng);
            let t = &s.ensemble().trees[0];
            assert_eq!(t.leaves(), before.leaves());
            let leaf = t.leaf(NodeId::ROOT).unwrap();
            let old = before.leaf(NodeId::ROOT).unwrap();
            assert_eq!((leaf.rho, &leaf.omega, &leaf.offsets), (old.rho, &old.omega, &old.offsets));
            betas.push(leaf.beta.clone());
        }
        assert_ne!(betas[0], betas[1]);
        assert_ne!(betas[0], vec![0.0]);
    }

    #[test]
    fn identical_change_has_zero_log_ratio() {
        let data = dataset(30, Outcome::Gaussian, 4);
        let cfg = config(&data, Activation::Cosine, 2, 3);
        let mut rng = chain_rng(4, 0);
        let mut s = ChainState::new(&data, &cfg, &mut rng);
        for _ in 0..10 {
            s.sweep(&mut rng);
        }
        let upd = s.begin_update(1).unwrap();
        let same: Vec<LeafParams> = s.ensemble().trees[1]
            .leaves()
            .into_iter()
            .map(|id| s.ensemble().trees[1].leaf(id).unwrap().clone())
            .collect();
        let p = s.change_proposal(&upd, same).unwrap();
        assert_eq!(p.log_ratio, 0.0);
    }

    #[test]
    fn grow_then_prune_ratios_are_negatives() {
        let data = dataset(50, Outcome::Gaussian, 5);
        let cfg = config(&data, Activation::Relu, 2, 2);
        let mut rng = chain_rng(5, 0);
        let mut s = ChainState::new(&data, &cfg, &mut rng);
        for _ in 0..20 {
            s.sweep(&mut rng);
        }
        let mut checked = 0;
        for _ in 0..50 {
            let mut upd = s.begin_update(0).unwrap();
            let original = s.ensemble().trees[0].clone();
            if let Some(g) = s.propose(&upd, MoveKind::Grow, &mut rng) {
                let leaf = g.removed[0];
                let parent = original.leaf(leaf).unwrap().clone();
                let forward = g.log_ratio;
                s.replace_tree(&mut upd, g.tree).unwrap();
                let p = s.prune_proposal(&upd, leaf, parent).unwrap();
                assert_eq!(p.log_ratio, -forward);
                assert_eq!(p.tree, original);
                s.replace_tree(&mut upd, original).unwrap();
                checked += 1;
            }
            s.commit(upd, None, false, &mut rng);
            s.sweep(&mut rng);
        }
        assert!(checked > 40);
    }

    #[test]
    fn binary_latents_respect_labels() {
        let data = dataset(80, Outcome::Binary, 6);
        let cfg = config(&data, Activation::Cosine, 5, 1);
        let mut rng = chain_rng(6, 0);
        let mut s = ChainState::new(&data, &cfg, &mut rng);
        for _ in 0..20 {
            s.sweep(&mut rng);
            assert_eq!(s.ensemble().sigma2, 1.0);
            for (t, &y) in s.target().iter().zip(data.y()) {
                let latent = t + data.y_center();
                assert!(if y > 0.5 { latent > 0.0 } else { latent <= 0.0 });
            }
            assert!(s.residual_drift() < 1e-9);
        }
        assert!(s.log_likelihood().is_finite());
    }
}
