//! Per-leaf conjugate computations with the outer weights integrated out.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::Matrix;
use crate::error::NumericalError;

/// Posterior precision `P = Phi'Phi / sigma^2 + I / tau^2` and shifted mean
/// `Theta = Phi'r / sigma^2` of one leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct SuffStats {
    pub p: DMatrix<f64>,
    pub theta: DVector<f64>,
    pub n_leaf: usize,
}

pub fn leaf_suffstats(phi: &Matrix, r: &[f64], sigma2: f64, tau: f64) -> SuffStats {
    debug_assert_eq!(phi.nrows(), r.len());
    let d = phi.ncols();
    let mut gram = vec![0.0; d * d];
    let mut cross = vec![0.0; d];
    for (i, &ri) in r.iter().enumerate() {
        let row = phi.row(i);
        for a in 0..d {
            let va = row[a];
            cross[a] += va * ri;
            for b in a..d {
                gram[a * d + b] += va * row[b];
            }
        }
    }
    let inv_s2 = 1.0 / sigma2;
    let prior = 1.0 / (tau * tau);
    let p = DMatrix::from_fn(d, d, |a, b| {
        let g = if a <= b { gram[a * d + b] } else { gram[b * d + a] };
        inv_s2 * g + if a == b { prior } else { 0.0 }
    });
    let theta = DVector::from_iterator(d, cross.into_iter().map(|c| inv_s2 * c));
    SuffStats { p, theta, n_leaf: r.len() }
}

/// Cholesky factor of `P` together with `v = L^{-1} Theta`.
#[derive(Clone, Debug)]
pub struct LeafPosterior {
    l: DMatrix<f64>,
    v: DVector<f64>,
    /// `-D log tau - log|P| / 2 + |v|^2 / 2`.
    pub log_marginal: f64,
}

impl LeafPosterior {
    pub fn new(stats: &SuffStats, tau: f64) -> Result<Self, NumericalError> {
        let d = stats.p.nrows();
        let chol = match stats.p.clone().cholesky() {
            Some(c) => c,
            None => {
                log::warn!("leaf precision not positive definite; retrying with diagonal jitter");
                let mut jittered = stats.p.clone();
                for i in 0..d {
                    jittered[(i, i)] += 1e-12;
                }
                jittered.cholesky().ok_or(NumericalError::NotPositiveDefinite(d))?
            }
        };
        let l = chol.unpack();
        let v = l
            .solve_lower_triangular(&stats.theta)
            .ok_or(NumericalError::NotPositiveDefinite(d))?;
        let half_log_det: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
        let log_marginal = -(d as f64) * tau.ln() - half_log_det + 0.5 * v.norm_squared();
        if !log_marginal.is_finite() {
            return Err(NumericalError::NonFinite("leaf log marginal likelihood"));
        }
        Ok(LeafPosterior { l, v, log_marginal })
    }

    /// Posterior mean `P^{-1} Theta`.
    pub fn mean(&self) -> Vec<f64> {
        self.l
            .tr_solve_lower_triangular(&self.v)
            .expect("nonsingular factor")
            .iter()
            .copied()
            .collect()
    }

    /// One draw of `beta ~ N(P^{-1} Theta, P^{-1})`, computed as
    /// `L^{-T} (v + eps)`.
    pub fn draw_beta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.v.len();
        let shifted = DVector::from_fn(d, |i, _| self.v[i] + rng.sample::<f64, _>(StandardNormal));
        self.l
            .tr_solve_lower_triangular(&shifted)
            .expect("nonsingular factor")
            .iter()
            .copied()
            .collect()
    }
}

pub fn log_marginal_leaf(stats: &SuffStats, tau: f64) -> Result<f64, NumericalError> {
    Ok(LeafPosterior::new(stats, tau)?.log_marginal)
}

pub fn draw_beta<R: Rng + ?Sized>(stats: &SuffStats, tau: f64, rng: &mut R) -> Result<Vec<f64>, NumericalError> {
    Ok(LeafPosterior::new(stats, tau)?.draw_beta(rng))
}

/// Gaussian log-likelihood terms that do not involve the leaf parameters:
/// `-(n/2) log(2 pi sigma^2) - |r|^2 / (2 sigma^2)`.
pub fn gaussian_base_terms(r: &[f64], sigma2: f64) -> f64 {
    let n = r.len() as f64;
    let ss: f64 = r.iter().map(|v| v * v).sum();
    -0.5 * n * (std::f64::consts::TAU * sigma2).ln() - 0.5 * ss / sigma2
}

/// `sigma^2 ~ InverseGamma((nu + n)/2, (nu*lambda + sse)/2)`.
pub fn sample_sigma2<R: Rng + ?Sized>(nu: f64, lambda: f64, n: usize, sse: f64, rng: &mut R) -> f64 {
    let shape = 0.5 * (nu + n as f64);
    let rate = 0.5 * (nu * lambda + sse);
    let g = Gamma::new(shape, 1.0 / rate).expect("positive inverse-gamma parameters");
    1.0 / g.sample(rng)
}

/// Draws `X ~ N(mean, 1)` conditioned on `X > lower`.
pub fn normal_above<R: Rng + ?Sized>(mean: f64, lower: f64, rng: &mut R) -> f64 {
    let a = lower - mean;
    if a < 0.0 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a {
                return mean + z;
            }
        }
    }
    // exponential proposal with the optimal rate for a tail starting at `a`
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let u: f64 = rng.random();
        let z = a - (1.0 - u).ln() / alpha;
        let accept = (-0.5 * (z - alpha) * (z - alpha)).exp();
        if rng.random::<f64>() < accept && z > a {
            return mean + z;
        }
    }
}

/// Draws `X ~ N(mean, 1)` conditioned on `X <= upper`.
pub fn normal_below<R: Rng + ?Sized>(mean: f64, upper: f64, rng: &mut R) -> f64 {
    -normal_above(-mean, -upper, rng)
}
