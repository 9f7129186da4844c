//! Prior configuration and its data-driven defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Outcome};
use crate::error::ConfigError;
use crate::ridge::{default_tau, solve_lambda, Activation};
use crate::stats::chi_squared_quantile;

/// Branching-process prior on tree shapes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum Branching {
    /// Depth `d` splits with probability `base * (1 + d)^(-exponent)`.
    Power { base: f64, exponent: f64 },
    /// Depth `d` splits with probability `gamma^(d + 1)`.
    Geometric { gamma: f64 },
}

impl Default for Branching {
    fn default() -> Self {
        Branching::Power {
            base: 0.95,
            exponent: 2.0,
        }
    }
}

impl Branching {
    pub fn split_probability(&self, depth: usize) -> f64 {
        match *self {
            Branching::Power { base, exponent } => base * (1.0 + depth as f64).powf(-exponent),
            Branching::Geometric { gamma } => gamma.powi(depth as i32 + 1),
        }
    }
}

/// Full prior specification used by the sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Number of trees `M`.
    pub trees: usize,
    /// Ridge functions per leaf `D`.
    pub ridge: usize,
    pub activation: Activation,
    /// Prior standard deviation of each outer weight.
    pub tau: f64,
    /// Leaf scale `rho ~ Gamma(shape nu/2, rate nu*lambda/2)`.
    pub nu: f64,
    pub lambda: f64,
    /// `sigma^2 ~ InverseGamma(nu_sigma/2, nu_sigma*lambda_sigma/2)`.
    pub nu_sigma: f64,
    pub lambda_sigma: f64,
    pub branching: Branching,
    /// Draw inner directions from a randomly rotated covariance `Q V Q^T`.
    pub rotate_omega: bool,
    /// Diagonal of the base covariance `V` of the inner directions (length q).
    pub omega_base_cov: Vec<f64>,
}

/// User-facing knobs from which a [`PriorConfig`] is calibrated.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSettings {
    pub trees: usize,
    pub ridge: usize,
    pub activation: Activation,
    pub nu: f64,
    /// `lambda` is chosen so that `P(rho < rho_threshold) = prob_rho_below`.
    pub rho_threshold: f64,
    pub prob_rho_below: f64,
    pub nu_sigma: f64,
    /// Prior probability that `sigma^2` lies below the sample variance of `y`.
    pub sigma_quantile: f64,
    pub branching: Branching,
    pub rotate_omega: bool,
    /// Overrides the default `tau` when set.
    pub tau: Option<f64>,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            trees: 50,
            ridge: 1,
            activation: Activation::Cosine,
            nu: 3.0,
            rho_threshold: 1.0,
            prob_rho_below: 0.5,
            nu_sigma: 3.0,
            sigma_quantile: 0.9,
            branching: Branching::default(),
            rotate_omega: false,
            tau: None,
        }
    }
}

/// Latent-scale range assumed for probit outcomes when setting `tau`.
const PROBIT_LATENT_RANGE: (f64, f64) = (-3.0, 3.0);

impl PriorConfig {
    /// Resolves defaults against a training dataset.
    pub fn calibrate(settings: &PriorSettings, data: &Dataset) -> Result<Self, ConfigError> {
        let ridge = if settings.activation == Activation::Constant { 1 } else { settings.ridge };
        if settings.trees == 0 || ridge == 0 {
            return Err(ConfigError::Invalid("tree count and ridge count must be positive".into()));
        }
        if !(settings.prob_rho_below > 0.0 && settings.prob_rho_below < 1.0) || settings.rho_threshold <= 0.0 {
            return Err(ConfigError::Invalid("rho calibration needs threshold > 0 and probability in (0, 1)".into()));
        }
        if settings.nu <= 0.0 || settings.nu_sigma <= 0.0 {
            return Err(ConfigError::Invalid("nu and nu_sigma must be positive".into()));
        }
        let (tau, lambda_sigma) = match data.outcome() {
            Outcome::Gaussian => {
                let (lo, hi) = data
                    .y()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                let tau = match settings.tau {
                    Some(t) => t,
                    None => default_tau(lo, hi, settings.trees, ridge)?,
                };
                // y is centered, so its variance is the mean square
                let var = data.y().iter().map(|v| v * v).sum::<f64>() / data.n() as f64;
                if var <= 0.0 {
                    return Err(ConfigError::DegenerateRange { min: lo, max: hi });
                }
                let lambda_sigma = var * chi_squared_quantile(1.0 - settings.sigma_quantile, settings.nu_sigma) / settings.nu_sigma;
                (tau, lambda_sigma)
            }
            Outcome::Binary => {
                let tau = match settings.tau {
                    Some(t) => t,
                    None => default_tau(PROBIT_LATENT_RANGE.0, PROBIT_LATENT_RANGE.1, settings.trees, ridge)?,
                };
                (tau, 1.0)
            }
        };
        let config = PriorConfig {
            trees: settings.trees,
            ridge,
            activation: settings.activation,
            tau,
            nu: settings.nu,
            lambda: solve_lambda(settings.nu, settings.rho_threshold, settings.prob_rho_below),
            nu_sigma: settings.nu_sigma,
            lambda_sigma,
            branching: settings.branching,
            rotate_omega: settings.rotate_omega,
            omega_base_cov: vec![1.0; data.q()],
        };
        config.validate(data.q(), data.n())?;
        Ok(config)
    }

    pub fn validate(&self, q: usize, n: usize) -> Result<(), ConfigError> {
        let positive = [
            ("tau", self.tau),
            ("nu", self.nu),
            ("lambda", self.lambda),
            ("nu_sigma", self.nu_sigma),
            ("lambda_sigma", self.lambda_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.trees == 0 || self.ridge == 0 {
            return Err(ConfigError::Invalid("tree count and ridge count must be positive".into()));
        }
        if self.activation == Activation::Constant && self.ridge != 1 {
            return Err(ConfigError::Invalid("constant activation requires exactly one ridge function".into()));
        }
        if self.omega_base_cov.len() != q || self.omega_base_cov.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(ConfigError::Invalid(format!(
                "omega base covariance needs {q} positive diagonal entries"
            )));
        }
        match self.branching {
            Branching::Power { base, exponent } => {
                if !(base > 0.0 && base < 1.0) || exponent < 0.0 {
                    return Err(ConfigError::Invalid("power branching needs base in (0,1), exponent >= 0".into()));
                }
            }
            Branching::Geometric { gamma } => {
                if !(gamma > 1.0 / n as f64 && gamma < 0.5) {
                    return Err(ConfigError::Invalid(format!("gamma must lie in (1/{n}, 1/2), got {gamma}")));
                }
            }
        }
        Ok(())
    }

    /// Short content hash of the configuration (hex SHA-256 prefix).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
