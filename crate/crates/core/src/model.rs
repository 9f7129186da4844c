//! Leaf parameters, ensembles and posterior sample containers.

use serde::{Deserialize, Serialize};

use crate::config::PriorConfig;
use crate::data::{ColumnKind, Outcome, TransformRecord};
use crate::ridge::Activation;
use crate::tree::{Node, RidgeTree};

/// Parameters of one leaf: `mu(z) = sum_d beta_d * phi(omega_d . z + b_d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafParams {
    /// Leaf scale; the inner directions have prior covariance `V / rho`.
    pub rho: f64,
    /// `q x D` inner directions, column-major: direction `d` is
    /// `omega[d * q..(d + 1) * q]`.
    pub omega: Vec<f64>,
    pub offsets: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LeafParams {
    /// Empty parameters for freshly sampled tree structures.
    pub fn placeholder() -> Self {
        LeafParams {
            rho: 1.0,
            omega: Vec::new(),
            offsets: Vec::new(),
            beta: Vec::new(),
        }
    }

    /// All-zero inner and outer weights with unit scale.
    pub fn zeroed(q: usize, ridge: usize) -> Self {
        LeafParams {
            rho: 1.0,
            omega: vec![0.0; q * ridge],
            offsets: vec![0.0; ridge],
            beta: vec![0.0; ridge],
        }
    }

    #[inline]
    pub fn ridge(&self) -> usize {
        self.offsets.len()
    }

    #[inline]
    pub fn direction(&self, d: usize) -> &[f64] {
        let q = self.omega.len() / self.ridge().max(1);
        &self.omega[d * q..(d + 1) * q]
    }

    /// Writes the `D` ridge features at `z` into `out`.
    #[inline]
    pub fn features(&self, z: &[f64], kind: Activation, out: &mut [f64]) {
        if kind == Activation::Constant {
            out.fill(1.0);
            return;
        }
        let q = z.len();
        for (d, o) in out.iter_mut().enumerate() {
            let w = &self.omega[d * q..(d + 1) * q];
            let t = w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.offsets[d];
            *o = kind.apply(t);
        }
    }

    /// Leaf output at `z`.
    #[inline]
    pub fn eval(&self, z: &[f64], kind: Activation) -> f64 {
        if kind == Activation::Constant {
            return self.beta.iter().sum();
        }
        let q = z.len();
        let mut total = 0.0;
        for (d, beta) in self.beta.iter().enumerate() {
            let w = &self.omega[d * q..(d + 1) * q];
            let t = w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.offsets[d];
            total += beta * kind.apply(t);
        }
        total
    }

    pub fn is_finite(&self) -> bool {
        self.rho.is_finite()
            && self.omega.iter().chain(&self.offsets).chain(&self.beta).all(|v| v.is_finite())
    }
}

impl RidgeTree {
    /// Evaluation function: routes `x` and evaluates that leaf at `z`.
    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64], kind: Activation) -> f64 {
        self.leaf(self.assign_leaf(x)).expect("routing ends at a leaf").eval(z, kind)
    }
}

/// A sum-of-trees state: `f(x, z) = sum_m g(x, z; T_m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub trees: Vec<RidgeTree>,
    pub sigma2: f64,
    pub y_center: f64,
    pub activation: Activation,
}

impl Ensemble {
    /// Sum of tree evaluations in tree-index order (without `y_center`).
    pub fn fit_row(&self, x: &[f64], z: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.eval(x, z, self.activation)).sum()
    }

    pub fn predict_row(&self, x: &[f64], z: &[f64]) -> f64 {
        self.y_center + self.fit_row(x, z)
    }

    pub fn leaf_count(&self) -> usize {
        self.trees.iter().map(RidgeTree::leaf_count).sum()
    }
}

/// Run metadata stored alongside the draws.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub config_hash: String,
}

impl ChainMeta {
    pub fn draws_per_chain(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    pub fn expected_draws(&self) -> usize {
        self.chains * self.draws_per_chain()
    }
}

/// Thinned post-burn-in draws of one or more chains, pooled in chain order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub meta: ChainMeta,
    pub config: PriorConfig,
    pub outcome: Outcome,
    pub x_kinds: Vec<ColumnKind>,
    pub transform: Option<TransformRecord>,
    pub draws: Vec<Ensemble>,
}

impl PosteriorSamples {
    /// Checks every invariant a loaded model must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        if self.meta.thin == 0 || self.meta.burn_in > self.meta.iterations {
            return Err("iteration counts are inconsistent".into());
        }
        if self.draws.len() != self.meta.expected_draws() {
            return Err(format!(
                "{} draws stored but {} chains x ({} - {}) / {} = {} expected",
                self.draws.len(),
                self.meta.chains,
                self.meta.iterations,
                self.meta.burn_in,
                self.meta.thin,
                self.meta.expected_draws()
            ));
        }
        if self.config.hash() != self.meta.config_hash {
            return Err("config hash does not match the stored configuration".into());
        }
        let q = self.config.omega_base_cov.len();
        self.config.validate(q, usize::MAX).map_err(|e| e.to_string())?;
        let d = self.config.ridge;
        for (k, e) in self.draws.iter().enumerate() {
            if !(e.sigma2 > 0.0 && e.sigma2.is_finite()) || !e.y_center.is_finite() {
                return Err(format!("draw {k}: sigma2 must be positive and finite"));
            }
            if e.trees.len() != self.config.trees {
                return Err(format!("draw {k}: {} trees, expected {}", e.trees.len(), self.config.trees));
            }
            if e.activation != self.config.activation {
                return Err(format!("draw {k}: activation differs from the configuration"));
            }
            for t in &e.trees {
                t.validate(&self.x_kinds).map_err(|err| format!("draw {k}: {err}"))?;
                for (id, node) in t.nodes() {
                    if let Node::Leaf(p) = node {
                        if p.beta.len() != d || p.offsets.len() != d || p.omega.len() != q * d {
                            return Err(format!("draw {k}: leaf {id} has wrong dimensions"));
                        }
                        if !p.is_finite() || !(p.rho > 0.0) {
                            return Err(format!("draw {k}: leaf {id} has invalid values"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
