//! Scoring metrics, the dense marginal-likelihood oracle, cross-validated
//! benchmarks, hyperparameter sweeps and the timing harness.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::config::{PriorConfig, PriorSettings};
use crate::data::{Dataset, Matrix, Outcome};
use crate::dgp::{generate_friedman, Simulated};
use crate::error::{DataError, Error};
use crate::ridge::{solve_lambda, Activation};
use crate::rng::chain_rng;
use crate::sampler::{predict, run_chains, ChainSettings, ChainState};
use crate::stats::median;

/// Clip bound keeping log-loss finite for degenerate probabilities.
pub const PROB_CLIP: f64 = 1e-12;

fn same_len(a: usize, b: usize) -> Result<(), DataError> {
    if a == b {
        Ok(())
    } else {
        Err(DataError::Dimension(format!("length mismatch: {a} vs {b}")))
    }
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, DataError> {
    same_len(pred.len(), truth.len())?;
    if pred.is_empty() {
        return Err(DataError::Empty);
    }
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Mean negative Bernoulli log-likelihood.
pub fn logloss(prob: &[f64], labels: &[f64]) -> Result<f64, DataError> {
    same_len(prob.len(), labels.len())?;
    if prob.is_empty() {
        return Err(DataError::Empty);
    }
    let total: f64 = prob
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / prob.len() as f64)
}

/// Fraction of `truth` values inside their `(lower, upper)` interval.
pub fn pointwise_coverage(intervals: &[(f64, f64)], truth: &[f64]) -> Result<f64, DataError> {
    same_len(intervals.len(), truth.len())?;
    if truth.is_empty() {
        return Err(DataError::Empty);
    }
    let hits = intervals
        .iter()
        .zip(truth)
        .filter(|((lo, hi), t)| lo <= *t && *t <= hi)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Log density of `r` under `N(0, sigma^2 I + tau^2 Phi Phi')`, evaluated
/// densely in the observation space. Intended for a handful of rows.
pub fn marginal_oracle(phi: &Matrix, r: &[f64], sigma2: f64, tau: f64) -> f64 {
    let n = r.len();
    let f = DMatrix::from_row_slice(phi.nrows(), phi.ncols(), phi.as_slice());
    let cov = DMatrix::<f64>::identity(n, n) * sigma2 + (&f * f.transpose()) * (tau * tau);
    let chol = cov.cholesky().expect("marginal covariance is positive definite");
    let l = chol.l();
    let half_log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let w = l
        .solve_lower_triangular(&DVector::from_column_slice(r))
        .expect("nonsingular factor");
    -0.5 * n as f64 * std::f64::consts::TAU.ln() - half_log_det - 0.5 * w.norm_squared()
}

/// Fold label in `0..k` for each of `n` rows: a seeded shuffle of balanced labels.
pub fn kfold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % k.max(1)).collect();
    labels.shuffle(&mut chain_rng(seed, u64::MAX));
    labels
}

/// Out-of-sample scores of one fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HoldoutScore {
    /// Against the noiseless truth (probabilities for binary outcomes).
    pub rmse: f64,
    /// Binary outcomes only: log-loss of the predicted probabilities.
    pub logloss: Option<f64>,
    pub coverage: f64,
    pub seconds: f64,
}

/// Fits on `train`, predicts `test` and scores against `truth`.
pub fn fit_and_score(
    train: &Dataset,
    test: &Dataset,
    truth: &[f64],
    prior: &PriorSettings,
    chains: &ChainSettings,
    level: f64,
) -> Result<HoldoutScore, Error> {
    let start = Instant::now();
    let config = PriorConfig::calibrate(prior, train)?;
    let (samples, _) = run_chains(train, &config, chains, None)?;
    let seconds = start.elapsed().as_secs_f64();
    let summary = predict(&samples, test.x(), test.z(), level)?;
    let mean: Vec<f64> = summary.iter().map(|s| s.mean).collect();
    let intervals: Vec<(f64, f64)> = summary.iter().map(|s| (s.lower, s.upper)).collect();
    let logloss = match test.outcome() {
        Outcome::Binary => Some(logloss(&mean, test.y())?),
        Outcome::Gaussian => None,
    };
    Ok(HoldoutScore {
        rmse: rmse(&mean, truth)?,
        logloss,
        coverage: pointwise_coverage(&intervals, truth)?,
        seconds,
    })
}

fn split(sim: &Simulated, folds: &[usize], fold: usize) -> Result<(Dataset, Dataset, Vec<f64>), Error> {
    let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
    let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
    let truth = test.iter().map(|&i| sim.truth[i]).collect();
    Ok((sim.data.select_rows(&train)?, sim.data.select_rows(&test)?, truth))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub model: Activation,
    pub fold: usize,
    pub rmse: f64,
    pub logloss: Option<f64>,
    pub coverage: f64,
    pub seconds: f64,
}

/// K-fold cross-validation of each activation on the same folds.
pub fn benchmark(
    sim: &Simulated,
    activations: &[Activation],
    prior: &PriorSettings,
    chains: &ChainSettings,
    folds: usize,
    seed: u64,
) -> Result<Vec<BenchmarkRow>, Error> {
    let labels = kfold_assignment(sim.data.n(), folds, seed);
    let mut rows = Vec::new();
    for fold in 0..folds {
        let (train, test, truth) = split(sim, &labels, fold)?;
        for &activation in activations {
            let settings = PriorSettings {
                activation,
                ..prior.clone()
            };
            let s = fit_and_score(&train, &test, &truth, &settings, chains, 0.95)?;
            log::info!("fold {fold} {activation}: rmse {:.4} ({:.1}s)", s.rmse, s.seconds);
            rows.push(BenchmarkRow {
                model: activation,
                fold,
                rmse: s.rmse,
                logloss: s.logloss,
                coverage: s.coverage,
                seconds: s.seconds,
            });
        }
    }
    Ok(rows)
}

/// `(M, D)` combinations of the ensemble-size sweep.
pub fn trees_ridge_grid() -> Vec<(usize, usize)> {
    let mut g = Vec::new();
    for m in [10, 50, 100] {
        for d in [1, 5, 10] {
            g.push((m, d));
        }
    }
    g
}

/// `(p, q)` pairs for calibrating `P(rho < q) = p`.
pub fn rho_prior_grid() -> Vec<(f64, f64)> {
    let mut g = Vec::new();
    for p in [0.25, 0.5, 0.75] {
        for q in [0.5, 1.0, 2.0] {
            g.push((p, q));
        }
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub grid: &'static str,
    pub trees: usize,
    pub ridge: usize,
    pub prob_rho_below: f64,
    pub rho_threshold: f64,
    pub lambda: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub seconds: f64,
}

/// Runs both sensitivity grids on a single train/test split (one fold of
/// `folds` held out).
pub fn sweep(
    sim: &Simulated,
    prior: &PriorSettings,
    chains: &ChainSettings,
    folds: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, Error> {
    let labels = kfold_assignment(sim.data.n(), folds, seed);
    let (train, test, truth) = split(sim, &labels, 0)?;
    let mut cells: Vec<(&'static str, PriorSettings)> = Vec::new();
    for (trees, ridge) in trees_ridge_grid() {
        cells.push((
            "trees_ridge",
            PriorSettings {
                trees,
                ridge,
                ..prior.clone()
            },
        ));
    }
    for (p, q) in rho_prior_grid() {
        cells.push((
            "rho_prior",
            PriorSettings {
                prob_rho_below: p,
                rho_threshold: q,
                ..prior.clone()
            },
        ));
    }
    let mut rows = Vec::with_capacity(cells.len());
    for (grid, s) in cells {
        let score = fit_and_score(&train, &test, &truth, &s, chains, 0.95)?;
        log::info!("{grid} M={} D={} p={} q={}: rmse {:.4}", s.trees, s.ridge, s.prob_rho_below, s.rho_threshold, score.rmse);
        rows.push(SweepRow {
            grid,
            trees: s.trees,
            ridge: s.ridge,
            prob_rho_below: s.prob_rho_below,
            rho_threshold: s.rho_threshold,
            lambda: solve_lambda(s.nu, s.rho_threshold, s.prob_rho_below),
            rmse: score.rmse,
            coverage: score.coverage,
            seconds: score.seconds,
        });
    }
    Ok(rows)
}

/// Per-tree-update and per-sweep wall times of one chain, after `warmup`
/// untimed sweeps.
pub fn time_updates(data: &Dataset, config: &PriorConfig, warmup: usize, sweeps: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = chain_rng(seed, 0);
    let mut state = ChainState::new(data, config, &mut rng);
    for _ in 0..warmup {
        state.sweep(&mut rng);
    }
    let mut updates = Vec::with_capacity(sweeps * config.trees);
    let mut iterations = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let sweep_start = Instant::now();
        for m in 0..config.trees {
            let t = Instant::now();
            state.update_tree(m, &mut rng);
            updates.push(t.elapsed().as_secs_f64());
        }
        state.resync();
        state.update_sigma2(&mut rng);
        iterations.push(sweep_start.elapsed().as_secs_f64());
    }
    (updates, iterations)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub activation: Activation,
    pub ridge: usize,
    pub n: usize,
    pub median_iteration_seconds: f64,
    pub median_update_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    /// Least-squares slope of log median update time against log n.
    pub fn scaling_exponent(&self, activation: Activation, ridge: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.activation == activation && r.ridge == ridge)
            .map(|r| ((r.n as f64).ln(), r.median_update_seconds.ln()))
            .collect();
        log_log_slope(&pts)
    }
}

pub fn log_log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Times short chains on Friedman data for every `(activation, D)` case and
/// sample size. `repetitions` is the number of timed sweeps per cell.
pub fn timing_harness(
    cases: &[(Activation, usize)],
    sizes: &[usize],
    repetitions: usize,
    trees: usize,
    warmup: usize,
    seed: u64,
) -> Result<TimingReport, Error> {
    let mut report = TimingReport::default();
    if repetitions == 0 {
        return Ok(report);
    }
    for &n in sizes {
        let sim = generate_friedman(n, 1.0, 0, seed);
        for &(activation, ridge) in cases {
            let settings = PriorSettings {
                trees,
                ridge,
                activation,
                ..PriorSettings::default()
            };
            let config = PriorConfig::calibrate(&settings, &sim.data)?;
            let (mut updates, mut iterations) = time_updates(&sim.data, &config, warmup, repetitions, seed);
            report.rows.push(TimingRow {
                activation,
                ridge: config.ridge,
                n,
                median_iteration_seconds: median(&mut iterations),
                median_update_seconds: median(&mut updates),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((logloss(&[0.5; 4], &[0.0, 1.0, 1.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(pointwise_coverage(&[(f64::NEG_INFINITY, f64::INFINITY); 3], &[1.0, -4.0, 9.0]).unwrap(), 1.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(logloss(&[0.0], &[1.0]).unwrap().is_finite());
    }

    #[test]
    fn logloss_improves_as_probabilities_sharpen() {
        let labels = [1.0, 0.0, 1.0, 1.0, 0.0];
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let s = 0.5 + 0.049 * k as f64;
            let prob: Vec<f64> = labels.iter().map(|&y| if y == 1.0 { s } else { 1.0 - s }).collect();
            let l = logloss(&prob, &labels).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn oracle_examples() {
        let phi = Matrix::new(1, 1, vec![1.0]).unwrap();
        assert!((marginal_oracle(&phi, &[1.0], 1.0, 1.0) - 0.219_695_644_733_861_4f64.ln()).abs() < 1e-12);
        let phi = Matrix::from_rows(&[vec![1.0, 0.5], vec![-0.3, 0.2]]).unwrap();
        // |2 pi Sigma| for Sigma = 0.5 I + 4 Phi Phi'
        let s = [[0.5 + 4.0 * 1.25, 4.0 * (-0.3 + 0.1)], [4.0 * (-0.3 + 0.1), 0.5 + 4.0 * 0.13]];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let expected = -0.5 * ((std::f64::consts::TAU).powi(2) * det).ln();
        assert!((marginal_oracle(&phi, &[0.0, 0.0], 0.5, 2.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = kfold_assignment(103, 5, 1);
        assert_eq!(a, kfold_assignment(103, 5, 1));
        assert_ne!(a, kfold_assignment(103, 5, 2));
        for f in 0..5 {
            let c = a.iter().filter(|&&l| l == f).count();
            assert!(c == 20 || c == 21);
        }
    }

    #[test]
    fn grids_have_nine_cells() {
        assert_eq!(trees_ridge_grid().len(), 9);
        assert_eq!(rho_prior_grid().len(), 9);
    }

    #[test]
    fn zero_repetitions_give_empty_report() {
        let r = timing_harness(&[(Activation::Constant, 1)], &[100], 0, 5, 1, 0).unwrap();
        assert!(r.rows.is_empty());
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0].iter().map(|&n| (n.ln(), (3.0 * n).ln())).collect();
        assert!((log_log_slope(&pts).unwrap() - 1.0).abs() < 1e-12);
    }
}
