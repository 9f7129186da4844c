//! Posterior predictive summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Matrix, Outcome};
use crate::error::DataError;
use crate::model::PosteriorSamples;
use crate::stats::{normal_cdf, quantile_sorted};

/// Posterior mean and equal-tailed credible interval at one input row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

fn check_inputs(samples: &PosteriorSamples, x: &Matrix, z: &Matrix) -> Result<(), DataError> {
    let q = samples.config.omega_base_cov.len();
    if x.ncols() != samples.x_kinds.len() || z.ncols() != q || x.nrows() != z.nrows() {
        return Err(DataError::Dimension(format!(
            "model expects {} x columns and {q} z columns, got {}x{} and {}x{}",
            samples.x_kinds.len(),
            x.nrows(),
            x.ncols(),
            z.nrows(),
            z.ncols()
        )));
    }
    for i in 0..x.nrows() {
        for (j, kind) in samples.x_kinds.iter().enumerate() {
            let v = x.get(i, j);
            let ok = match *kind {
                ColumnKind::Continuous => v.is_finite(),
                ColumnKind::Categorical { levels } => v.fract() == 0.0 && v >= 0.0 && v < f64::from(levels),
            };
            if !ok {
                return Err(DataError::OutOfRange {
                    matrix: "x",
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        if let Some(j) = z.row(i).iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                column: format!("z{j}"),
                row: i,
            });
        }
    }
    Ok(())
}

/// Per-draw predictions, indexed `[draw][row]`: `y_center + f(x, z)` for
/// Gaussian outcomes and `Phi(y_center + f(x, z))` for binary ones.
pub fn predict_draws(samples: &PosteriorSamples, x: &Matrix, z: &Matrix) -> Result<Vec<Vec<f64>>, DataError> {
    check_inputs(samples, x, z)?;
    let binary = samples.outcome == Outcome::Binary;
    Ok(samples
        .draws
        .par_iter()
        .map(|e| {
            (0..x.nrows())
                .map(|i| {
                    let v = e.predict_row(x.row(i), z.row(i));
                    if binary {
                        normal_cdf(v)
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect())
}

/// Row-wise posterior mean and central `level` interval (empirical quantiles).
pub fn summarize(draws: &[Vec<f64>], level: f64) -> Result<Vec<RowSummary>, DataError> {
    if draws.is_empty() {
        return Err(DataError::Empty);
    }
    let rows = draws[0].len();
    let lo = 0.5 * (1.0 - level);
    let hi = 0.5 * (1.0 + level);
    Ok((0..rows)
        .into_par_iter()
        .map(|i| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.sort_by(f64::total_cmp);
            RowSummary {
                mean,
                lower: quantile_sorted(&col, lo),
                upper: quantile_sorted(&col, hi),
            }
        })
        .collect())
}

pub fn predict(samples: &PosteriorSamples, x: &Matrix, z: &Matrix, level: f64) -> Result<Vec<RowSummary>, DataError> {
    summarize(&predict_draws(samples, x, z)?, level)
}
