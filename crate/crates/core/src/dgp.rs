//! Synthetic data generators: recovery curves, the Friedman function and a
//! probit surface for binary outcomes.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::data::{Dataset, Matrix, Outcome};
use crate::rng::chain_rng;
use crate::stats::normal_cdf;

/// Follow-up times (months) around which recovery observations cluster.
pub const FOLLOW_UP_MONTHS: [f64; 9] = [1.0, 2.0, 4.0, 6.0, 8.0, 12.0, 16.0, 20.0, 24.0];
/// Observation window of the recovery study, in months.
pub const RECOVERY_HORIZON: f64 = 24.0;
pub const RECOVERY_NOISE_SD: f64 = 0.05;

/// A simulated dataset with its noiseless truth.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub data: Dataset,
    /// Smoothing variables on their natural scale (months for recovery data).
    pub z_raw: Matrix,
    /// `f(x_i, z_i)` for Gaussian outcomes; success probabilities for binary ones.
    pub truth: Vec<f64>,
    /// Patient index of each row (recovery data only).
    pub patient: Option<Vec<usize>>,
}

/// `(A(x), B(x), C(x))`: asymptote shift, initial drop and recovery rate.
pub fn recovery_components(x: &[f64]) -> (f64, f64, f64) {
    let a = 0.5 * (1.0 / (1.0 + (-2.0 * x[0]).exp()) - 0.5).abs() - 0.5;
    let b = 1.0 + (0.15 * (5.0 * x[1]).cos()).min(0.0);
    let c = 5.0 * x[2].exp();
    (a, b, c)
}

/// `f(x, z) = (1 - A(x)) (1 - B(x) exp(-z C(x)))` with `z` in months.
/// Only the first three coordinates of `x` matter.
pub fn recovery_curve(x: &[f64], months: f64) -> f64 {
    let (a, b, c) = recovery_components(x);
    (1.0 - a) * (1.0 - b * (-months * c).exp())
}

/// Recovery study with `n_patients` patients, each observed `1 + Poisson(3)`
/// times near the follow-up grid. Stored `z` is time divided by 24 months.
pub fn generate_recovery(n_patients: usize, seed: u64) -> Simulated {
    let mut rng = chain_rng(seed, 0);
    let visits = Poisson::new(3.0).expect("positive rate");
    let noise = Normal::new(0.0, RECOVERY_NOISE_SD).expect("positive sd");
    let mut x_rows = Vec::new();
    let mut months = Vec::new();
    let mut y = Vec::new();
    let mut truth = Vec::new();
    let mut patient = Vec::new();
    for i in 0..n_patients {
        let x: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let n_i = 1 + visits.sample(&mut rng) as usize;
        let mut times: Vec<f64> = if n_i <= FOLLOW_UP_MONTHS.len() {
            FOLLOW_UP_MONTHS.choose_multiple(&mut rng, n_i).copied().collect()
        } else {
            (0..n_i).map(|_| *FOLLOW_UP_MONTHS.choose(&mut rng).expect("nonempty grid")).collect()
        };
        for t in &mut times {
            *t = (*t + rng.random_range(-0.5..0.5)).clamp(0.0, RECOVERY_HORIZON);
        }
        times.sort_by(f64::total_cmp);
        for t in times {
            let f = recovery_curve(&x, t);
            x_rows.push(x.clone());
            months.push(t);
            truth.push(f);
            y.push(f + noise.sample(&mut rng));
            patient.push(i);
        }
    }
    let x = Matrix::from_rows(&x_rows).expect("rectangular rows");
    let z_raw = Matrix::new(months.len(), 1, months.clone()).expect("column");
    let z = Matrix::new(months.len(), 1, months.iter().map(|t| t / RECOVERY_HORIZON).collect()).expect("column");
    let data = Dataset::continuous(x, z, y, Outcome::Gaussian).expect("generated data is valid");
    Simulated {
        data,
        z_raw,
        truth,
        patient: Some(patient),
    }
}

/// `sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5`.
pub fn friedman(x: &[f64]) -> f64 {
    (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// `n` rows on `[0,1]^(5 + p_extra)` with noise sd `sigma`; `z = x`.
pub fn generate_friedman(n: usize, sigma: f64, p_extra: usize, seed: u64) -> Simulated {
    let mut rng = chain_rng(seed, 0);
    let p = 5 + p_extra;
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| rng.random()).collect();
        let f = friedman(&x);
        let e: f64 = rng.sample(rand_distr::StandardNormal);
        y.push(f + sigma * e);
        truth.push(f);
        rows.push(x);
    }
    let x = Matrix::from_rows(&rows).expect("rectangular rows");
    let data = Dataset::continuous(x.clone(), x.clone(), y, Outcome::Gaussian).expect("generated data is valid");
    Simulated {
        data,
        z_raw: x,
        truth,
        patient: None,
    }
}

/// Probit outcomes `y ~ Bernoulli(Phi(f(x, z) - 0.75))` where `f` is the
/// recovery surface over its first month (`z` in `[0, 1]` read as months),
/// which ranges over roughly `[0, 1.5]`.
pub fn generate_binary(n: usize, seed: u64) -> Simulated {
    let mut rng = chain_rng(seed, 0);
    let mut rows = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let z: f64 = rng.random();
        let prob = normal_cdf(recovery_curve(&x, z) - 0.75);
        y.push(f64::from(u8::from(rng.random::<f64>() < prob)));
        truth.push(prob);
        zs.push(z);
        rows.push(x);
    }
    let x = Matrix::from_rows(&rows).expect("rectangular rows");
    let z = Matrix::new(n, 1, zs).expect("column");
    let data = Dataset::continuous(x, z.clone(), y, Outcome::Binary).expect("generated data is valid");
    Simulated {
        data,
        z_raw: z,
        truth,
        patient: None,
    }
}
