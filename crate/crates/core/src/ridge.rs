//! Ridge-function leaves: activations, inner-weight priors, basis matrices and
//! hyperparameter defaults.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::PriorConfig;
use crate::data::Matrix;
use crate::error::ConfigError;
use crate::model::LeafParams;
use crate::stats::gamma_cdf;
use crate::tree::RidgeTree;

/// Nonlinearity applied to `omega . z + b`.
///
/// `Constant` ignores its argument and reduces the model to scalar-jump BART.
/// Adding a sigmoid is a one-line extension of [`Activation::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Cosine,
    Tanh,
    Relu,
    Constant,
}

impl Activation {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Activation::Cosine => t.cos(),
            Activation::Tanh => t.tanh(),
            Activation::Relu => t.max(0.0),
            Activation::Constant => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Cosine => "cosine",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Constant => "constant",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" | "cos" => Ok(Activation::Cosine),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "constant" => Ok(Activation::Constant),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Haar-distributed random orthogonal matrix: the `Q` factor of a standard
/// normal matrix, with columns sign-fixed so that `R` has a positive diagonal.
pub fn sample_rotation<R: Rng + ?Sized>(q: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let r = qr.r();
    let mut out = qr.q();
    for j in 0..q {
        if r[(j, j)] < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    out
}

/// Draws `(rho, omega, offsets)` from the prior; outer weights are zero.
///
/// `rho ~ Gamma(shape nu/2, rate nu*lambda/2)`, each direction
/// `omega_d ~ N(0, V/rho)` (or `N(0, Q V Q^T / rho)` with a fresh rotation per
/// leaf when `rotate_omega` is set), and offsets are `Uniform(0, 2*pi)` for the
/// cosine and `N(0, 1)` otherwise. Constant activation gets zeroed weights.
pub fn sample_inner_weights<R: Rng + ?Sized>(config: &PriorConfig, q: usize, rng: &mut R) -> LeafParams {
    let d = config.ridge;
    if config.activation == Activation::Constant {
        return LeafParams::zeroed(q, d);
    }
    let rho = Gamma::new(config.nu / 2.0, 2.0 / (config.nu * config.lambda))
        .expect("positive gamma parameters")
        .sample(rng);
    let inv_sd = 1.0 / rho.sqrt();
    let base_sd: Vec<f64> = config.omega_base_cov.iter().map(|v| v.sqrt()).collect();
    let rotation = config.rotate_omega.then(|| sample_rotation(q, rng));
    let mut omega = Vec::with_capacity(q * d);
    let mut eps = vec![0.0; q];
    for _ in 0..d {
        for (e, sd) in eps.iter_mut().zip(&base_sd) {
            *e = sd * rng.sample::<f64, _>(StandardNormal);
        }
        match &rotation {
            Some(rot) => {
                for i in 0..q {
                    let v: f64 = (0..q).map(|k| rot[(i, k)] * eps[k]).sum();
                    omega.push(inv_sd * v);
                }
            }
            None => omega.extend(eps.iter().map(|e| inv_sd * e)),
        }
    }
    let offsets = (0..d)
        .map(|_| match config.activation {
            Activation::Cosine => rng.random::<f64>() * std::f64::consts::TAU,
            _ => rng.sample::<f64, _>(StandardNormal),
        })
        .collect();
    LeafParams {
        rho,
        omega,
        offsets,
        beta: vec![0.0; d],
    }
}

/// Fills every leaf of `tree` with fresh prior inner weights and outer weights
/// `beta ~ N(0, tau^2 I)`.
pub fn fill_leaves_from_prior<R: Rng + ?Sized>(tree: &mut RidgeTree, config: &PriorConfig, q: usize, rng: &mut R) {
    for (_, leaf) in tree.leaves_mut() {
        let mut p = sample_inner_weights(config, q, rng);
        for b in &mut p.beta {
            *b = config.tau * rng.sample::<f64, _>(StandardNormal);
        }
        *leaf = p;
    }
}

/// `n x D` basis matrix `Phi[i, d] = phi(omega_d . z_i + b_d)`.
pub fn build_basis(z_rows: &Matrix, leaf: &LeafParams, kind: Activation) -> Matrix {
    let d = leaf.ridge();
    let mut phi = Matrix::zeros(z_rows.nrows(), d);
    for i in 0..z_rows.nrows() {
        leaf.features(z_rows.row(i), kind, phi.row_mut(i));
    }
    phi
}

/// Evaluation function of a single tree.
pub fn leaf_eval(x: &[f64], z: &[f64], tree: &RidgeTree, kind: Activation) -> f64 {
    tree.eval(x, z, kind)
}

/// `tau = (y_max - y_min) / (4 sqrt(M D))`.
pub fn default_tau(y_min: f64, y_max: f64, trees: usize, ridge: usize) -> Result<f64, ConfigError> {
    if !(y_max > y_min) || !y_min.is_finite() || !y_max.is_finite() {
        return Err(ConfigError::DegenerateRange { min: y_min, max: y_max });
    }
    Ok((y_max - y_min) / (4.0 * ((trees * ridge) as f64).sqrt()))
}

/// Solves for `lambda` such that `P(rho < threshold) = prob` when
/// `rho ~ Gamma(shape nu/2, rate nu*lambda/2)`.
///
/// The CDF at the threshold depends on `lambda` only through
/// `s = nu * lambda * threshold / 2`, so bisection runs on `s` (where the
/// problem is the Gamma(nu/2, 1) quantile) and the threshold scales out exactly.
pub fn solve_lambda(nu: f64, threshold: f64, prob: f64) -> f64 {
    let shape = nu / 2.0;
    let cdf = |s: f64| gamma_cdf(s, shape, 1.0);
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while cdf(hi) < prob {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    2.0 * s / (nu * threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;
    use crate::config::Branching;

    fn config(activation: Activation, ridge: usize, q: usize) -> PriorConfig {
        PriorConfig {
            trees: 1,
            ridge,
            activation,
            tau: 1.0,
            nu: 3.0,
            lambda: solve_lambda(3.0, 1.0, 0.5),
            nu_sigma: 3.0,
            lambda_sigma: 1.0,
            branching: Branching::default(),
            rotate_omega: false,
            omega_base_cov: vec![1.0; q],
        }
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert_eq!(Activation::Relu.apply(1.5), 1.5);
        assert_eq!(Activation::Cosine.apply(0.0), 1.0);
        assert!((Activation::Tanh.apply(1.0) - 0.761_594_155_955_764_9).abs() < 1e-12);
        assert_eq!(Activation::Constant.apply(123.0), 1.0);
    }

    #[test]
    fn basis_examples() {
        let z = Matrix::from_rows(&[vec![0.1, 0.2], vec![0.5, 0.5], vec![0.9, 0.0]]).unwrap();
        let leaf = LeafParams::zeroed(2, 1);
        let phi = build_basis(&z, &leaf, Activation::Constant);
        assert_eq!(phi.as_slice(), &[1.0, 1.0, 1.0]);
        let phi = build_basis(&z, &LeafParams::zeroed(2, 3), Activation::Cosine);
        assert!(phi.as_slice().iter().all(|&v| v == 1.0));

        let relu = LeafParams {
            rho: 1.0,
            omega: vec![1.0, -1.0],
            offsets: vec![0.1],
            beta: vec![1.0],
        };
        let z = Matrix::from_rows(&[vec![0.3, 0.6]]).unwrap();
        // max(0, 0.3 - 0.6 + 0.1) = 0
        assert_eq!(build_basis(&z, &relu, Activation::Relu).as_slice(), &[0.0]);
    }

    #[test]
    fn default_tau_examples() {
        assert!((default_tau(0.0, 1.0, 50, 1).unwrap() - 0.035_355_339_059_327_38).abs() < 1e-15);
        assert_eq!(default_tau(-1.0, 1.0, 1, 1).unwrap(), 0.5);
        let base = default_tau(0.0, 1.0, 10, 5).unwrap();
        assert!((default_tau(0.0, 3.0, 10, 5).unwrap() - 3.0 * base).abs() < 1e-15);
        assert!(default_tau(1.0, 1.0, 10, 1).is_err());
    }

    #[test]
    fn solve_lambda_examples() {
        let l = solve_lambda(3.0, 1.0, 0.5);
        assert!((l - 0.788).abs() < 0.001, "lambda = {l}");
        // rho < 2 at rate r  <=>  rho/2 < 1 at rate 2r
        assert_eq!(solve_lambda(3.0, 2.0, 0.5), l / 2.0);
        let l75 = solve_lambda(3.0, 1.0, 0.75);
        assert!((gamma_cdf(1.0, 1.5, 1.5 * l75) - 0.75).abs() < 1e-10);
        assert!(l75 > l && l > solve_lambda(3.0, 1.0, 0.25));
    }

    #[test]
    fn rho_prior_mean_is_inverse_lambda() {
        let c = config(Activation::Cosine, 1, 1);
        let mut rng = chain_rng(11, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_inner_weights(&c, 1, &mut rng).rho).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        // Gamma(1.5, rate 1.5 lambda): mean 1/lambda, variance 1/(1.5 lambda^2)
        let sd = (1.0 / (1.5 * c.lambda * c.lambda)).sqrt();
        assert!((mean - 1.0 / c.lambda).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn offsets_follow_activation() {
        let mut rng = chain_rng(12, 0);
        let cos = config(Activation::Cosine, 4, 2);
        for _ in 0..200 {
            let p = sample_inner_weights(&cos, 2, &mut rng);
            assert!(p.offsets.iter().all(|&b| (0.0..std::f64::consts::TAU).contains(&b)));
            assert_eq!(p.omega.len(), 8);
            assert_eq!(p.beta, vec![0.0; 4]);
        }
        let tanh = config(Activation::Tanh, 1, 2);
        let negative = (0..200)
            .filter(|_| sample_inner_weights(&tanh, 2, &mut rng).offsets[0] < 0.0)
            .count();
        assert!(negative > 50 && negative < 150);
        let constant = config(Activation::Constant, 1, 3);
        assert_eq!(sample_inner_weights(&constant, 3, &mut rng), LeafParams::zeroed(3, 1));
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = chain_rng(13, 0);
        for q in 1..6 {
            for _ in 0..50 {
                let r = sample_rotation(q, &mut rng);
                let err = (&r * r.transpose() - DMatrix::<f64>::identity(q, q)).abs().max();
                assert!(err < 1e-10);
            }
        }
        // O(1) = {+1, -1}; the sign convention makes Q = sign(a) for the 1x1 draw a
        let signs: Vec<f64> = (0..200).map(|_| sample_rotation(1, &mut rng)[(0, 0)]).collect();
        assert!(signs.iter().all(|s| s.abs() == 1.0));
        assert!(signs.contains(&1.0) && signs.contains(&-1.0));
    }

    #[test]
    fn rotation_entries_have_zero_mean() {
        let mut rng = chain_rng(14, 0);
        let n = 10_000;
        let mut sum = DMatrix::<f64>::zeros(3, 3);
        let mut sumsq = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let r = sample_rotation(3, &mut rng);
            sum += &r;
            sumsq += r.component_mul(&r);
        }
        for i in 0..9 {
            let mean = sum[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            assert!(mean.abs() < 3.0 * (var / n as f64).sqrt(), "entry {i} mean {mean}");
        }
    }

    #[test]
    fn isotropic_rotation_leaves_covariance_unchanged() {
        let mut c = config(Activation::Cosine, 1, 2);
        c.rotate_omega = true;
        let mut rng = chain_rng(15, 0);
        let n = 40_000;
        let (mut s00, mut s01, mut s11) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let p = sample_inner_weights(&c, 2, &mut rng);
            // rescale by sqrt(rho) to remove the leaf scale
            let (a, b) = (p.omega[0] * p.rho.sqrt(), p.omega[1] * p.rho.sqrt());
            s00 += a * a;
            s01 += a * b;
            s11 += b * b;
        }
        let n = n as f64;
        assert!((s00 / n - 1.0).abs() < 0.04);
        assert!((s11 / n - 1.0).abs() < 0.04);
        assert!((s01 / n).abs() < 0.03);
    }
}
