//! Datasets, column schemas and the preprocessing transform.
//!
//! Every continuous covariate and smoothing variable is min-max scaled into
//! `[0, 1]`; categorical covariates are stored as integer level codes. The
//! [`TransformRecord`] produced at fit time maps prediction inputs through the
//! same scaling, clamping anything outside the training range.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if rows * cols != data.len() {
            return Err(DataError::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DataError::Dimension("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.get(i, j))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Gaussian,
    Binary,
}

impl std::str::FromStr for Outcome {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Outcome::Gaussian),
            "binary" => Ok(Outcome::Binary),
            other => Err(format!("unknown outcome `{other}`")),
        }
    }
}

/// Kind of a covariate column of `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ColumnKind {
    Continuous,
    Categorical { levels: u32 },
}

/// Training data: covariates `x` (routing), smoothing variables `z` (ridge
/// arguments) and an outcome `y`.
///
/// Gaussian outcomes are stored centered at their mean, with the mean kept in
/// `y_center`. Binary outcomes stay in `{0, 1}` and `y_center` holds the probit
/// offset `Φ⁻¹(ȳ)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: Matrix,
    z: Matrix,
    y: Vec<f64>,
    outcome: Outcome,
    y_center: f64,
    x_kinds: Vec<ColumnKind>,
}

/// Bound used to keep the probit offset finite for (nearly) pure outcomes.
const PROBIT_RATE_CLAMP: f64 = 1e-3;

impl Dataset {
    /// Builds a dataset whose `x` columns are all continuous.
    pub fn continuous(x: Matrix, z: Matrix, y: Vec<f64>, outcome: Outcome) -> Result<Self, DataError> {
        let kinds = vec![ColumnKind::Continuous; x.ncols()];
        Self::new(x, z, y, outcome, kinds)
    }

    /// `y` is the raw outcome; Gaussian outcomes are centered here.
    pub fn new(
        x: Matrix,
        z: Matrix,
        y: Vec<f64>,
        outcome: Outcome,
        x_kinds: Vec<ColumnKind>,
    ) -> Result<Self, DataError> {
        let n = y.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if x.nrows() != n || z.nrows() != n {
            return Err(DataError::Dimension(format!(
                "x has {} rows, z has {} rows, y has {n} entries",
                x.nrows(),
                z.nrows()
            )));
        }
        if x.ncols() == 0 || z.ncols() == 0 {
            return Err(DataError::Dimension("x and z need at least one column".into()));
        }
        if x_kinds.len() != x.ncols() {
            return Err(DataError::Dimension(format!(
                "{} column kinds for {} x columns",
                x_kinds.len(),
                x.ncols()
            )));
        }
        for (j, kind) in x_kinds.iter().enumerate() {
            if let ColumnKind::Categorical { levels } = *kind {
                if levels < 2 {
                    return Err(DataError::TooFewLevels {
                        column: format!("x{j}"),
                        levels: levels as usize,
                    });
                }
                if levels > 64 {
                    return Err(DataError::TooManyLevels {
                        column: format!("x{j}"),
                        levels: levels as usize,
                    });
                }
            }
        }
        for i in 0..n {
            for (j, kind) in x_kinds.iter().enumerate() {
                let v = x.get(i, j);
                let ok = match *kind {
                    ColumnKind::Continuous => (0.0..=1.0).contains(&v),
                    ColumnKind::Categorical { levels } => {
                        v.fract() == 0.0 && v >= 0.0 && v < f64::from(levels)
                    }
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
            for (j, &v) in z.row(i).iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DataError::OutOfRange {
                        matrix: "z",
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    column: "y".into(),
                    row: i,
                });
            }
            if outcome == Outcome::Binary && v != 0.0 && v != 1.0 {
                return Err(DataError::NotBinary { row: i, value: v });
            }
        }
        let mut y = y;
        let y_center = match outcome {
            Outcome::Gaussian => {
                let mean = y.iter().sum::<f64>() / n as f64;
                for v in &mut y {
                    *v -= mean;
                }
                mean
            }
            Outcome::Binary => {
                let rate = y.iter().sum::<f64>() / n as f64;
                crate::stats::normal_quantile(rate.clamp(PROBIT_RATE_CLAMP, 1.0 - PROBIT_RATE_CLAMP))
            }
        };
        Ok(Dataset {
            x,
            z,
            y,
            outcome,
            y_center,
            x_kinds,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn q(&self) -> usize {
        self.z.ncols()
    }
    pub fn x(&self) -> &Matrix {
        &self.x
    }
    pub fn z(&self) -> &Matrix {
        &self.z
    }
    /// Centered outcome (Gaussian) or the 0/1 labels (binary).
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn outcome(&self) -> Outcome {
        self.outcome
    }
    pub fn y_center(&self) -> f64 {
        self.y_center
    }
    pub fn x_kinds(&self) -> &[ColumnKind] {
        &self.x_kinds
    }

    /// Outcome on its original scale.
    pub fn raw_y(&self) -> Vec<f64> {
        match self.outcome {
            Outcome::Gaussian => self.y.iter().map(|v| v + self.y_center).collect(),
            Outcome::Binary => self.y.clone(),
        }
    }

    /// Sub-dataset on the given rows; the outcome is re-centered on the subset.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Dataset, DataError> {
        let raw = self.raw_y();
        Dataset::new(
            self.x.select_rows(idx),
            self.z.select_rows(idx),
            idx.iter().map(|&i| raw[i]).collect(),
            self.outcome,
            self.x_kinds.clone(),
        )
    }
}

/// Min-max scaler for one continuous column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(name: &str, values: &[f64]) -> Result<Self, DataError> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for (row, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    column: name.to_string(),
                    row,
                });
            }
            min = min.min(v);
            max = max.max(v);
        }
        if values.is_empty() {
            return Err(DataError::Empty);
        }
        if min >= max {
            return Err(DataError::ConstantColumn(name.to_string()));
        }
        Ok(MinMax { min, max })
    }

    /// Scales into `[0, 1]`, clamping values outside the fitted range.
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Covariate used only for routing.
    X,
    /// Smoothing variable used only inside ridge functions.
    Z,
    /// Continuous column used as both covariate and smoothing variable.
    Both,
    /// Categorical covariate.
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
}

/// Maps CSV columns to roles. Columns not listed are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DataError::Csv(format!("schema: {e}")).into())
    }
}

/// String-valued table with a header row, as read from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl Table {
    pub fn read_csv(path: &Path) -> Result<Self, DataError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::Csv(e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| DataError::Csv(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
            records.push(rec.iter().map(|v| v.trim().to_string()).collect());
        }
        Ok(Table { headers, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn index_of(&self, name: &str) -> Result<usize, DataError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn strings(&self, name: &str) -> Result<Vec<&str>, DataError> {
        let j = self.index_of(name)?;
        Ok(self.records.iter().map(|r| r[j].as_str()).collect())
    }

    pub fn numbers(&self, name: &str) -> Result<Vec<f64>, DataError> {
        let j = self.index_of(name)?;
        self.records
            .iter()
            .enumerate()
            .map(|(row, r)| {
                let v: f64 = r[j].parse().map_err(|_| DataError::Parse {
                    column: name.to_string(),
                    row,
                    value: r[j].clone(),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(DataError::NonFinite {
                        column: name.to_string(),
                        row,
                    })
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnTransform {
    Continuous { name: String, scale: MinMax },
    Categorical { name: String, levels: Vec<String> },
}

impl ColumnTransform {
    pub fn name(&self) -> &str {
        match self {
            ColumnTransform::Continuous { name, .. } | ColumnTransform::Categorical { name, .. } => name,
        }
    }

    fn apply(&self, table: &Table) -> Result<Vec<f64>, DataError> {
        match self {
            ColumnTransform::Continuous { name, scale } => {
                Ok(table.numbers(name)?.into_iter().map(|v| scale.apply(v)).collect())
            }
            ColumnTransform::Categorical { name, levels } => table
                .strings(name)?
                .into_iter()
                .map(|s| {
                    levels
                        .iter()
                        .position(|l| l == s)
                        .map(|k| k as f64)
                        .ok_or_else(|| DataError::UnknownLevel {
                            column: name.clone(),
                            level: s.to_string(),
                        })
                })
                .collect(),
        }
    }
}

/// Everything needed to map new inputs the same way the training data was mapped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub outcome: String,
    pub outcome_kind: Outcome,
    pub y_center: f64,
    pub x_columns: Vec<ColumnTransform>,
    pub z_columns: Vec<ColumnTransform>,
}

impl TransformRecord {
    pub fn x_kinds(&self) -> Vec<ColumnKind> {
        self.x_columns
            .iter()
            .map(|c| match c {
                ColumnTransform::Continuous { .. } => ColumnKind::Continuous,
                ColumnTransform::Categorical { levels, .. } => ColumnKind::Categorical {
                    levels: levels.len() as u32,
                },
            })
            .collect()
    }

    /// Maps a table of new inputs to scaled `(x, z)` matrices.
    pub fn apply(&self, table: &Table) -> Result<(Matrix, Matrix), DataError> {
        Ok((
            columns_to_matrix(table.len(), &self.x_columns, table)?,
            columns_to_matrix(table.len(), &self.z_columns, table)?,
        ))
    }
}

fn columns_to_matrix(n: usize, cols: &[ColumnTransform], table: &Table) -> Result<Matrix, DataError> {
    let mut m = Matrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.apply(table)?.into_iter().enumerate() {
            m.row_mut(i)[j] = v;
        }
    }
    Ok(m)
}

/// Scales, encodes and validates a raw table according to `schema`.
pub fn preprocess(table: &Table, schema: &Schema, outcome: Outcome) -> Result<(Dataset, TransformRecord), DataError> {
    if table.is_empty() {
        return Err(DataError::Empty);
    }
    let mut x_columns = Vec::new();
    let mut z_columns = Vec::new();
    for spec in &schema.columns {
        match spec.role {
            Role::Categorical => {
                let labels: BTreeSet<&str> = table.strings(&spec.name)?.into_iter().collect();
                if labels.len() < 2 {
                    return Err(DataError::TooFewLevels {
                        column: spec.name.clone(),
                        levels: labels.len(),
                    });
                }
                if labels.len() > 64 {
                    return Err(DataError::TooManyLevels {
                        column: spec.name.clone(),
                        levels: labels.len(),
                    });
                }
                x_columns.push(ColumnTransform::Categorical {
                    name: spec.name.clone(),
                    levels: labels.into_iter().map(str::to_string).collect(),
                });
            }
            role => {
                let scale = MinMax::fit(&spec.name, &table.numbers(&spec.name)?)?;
                let t = ColumnTransform::Continuous {
                    name: spec.name.clone(),
                    scale,
                };
                if matches!(role, Role::X | Role::Both) {
                    x_columns.push(t.clone());
                }
                if matches!(role, Role::Z | Role::Both) {
                    z_columns.push(t);
                }
            }
        }
    }
    let y = table.numbers(&schema.outcome)?;
    let mut record = TransformRecord {
        outcome: schema.outcome.clone(),
        outcome_kind: outcome,
        y_center: 0.0,
        x_columns,
        z_columns,
    };
    let (x, z) = record.apply(table)?;
    let dataset = Dataset::new(x, z, y, outcome, record.x_kinds())?;
    record.y_center = dataset.y_center();
    Ok((dataset, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(headers: &[&str], rows: &[&[&str]]) -> Table {
        Table {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            records: rows
                .iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    fn schema(cols: &[(&str, Role)]) -> Schema {
        Schema {
            outcome: "y".into(),
            columns: cols
                .iter()
                .map(|(n, r)| ColumnSpec {
                    name: n.to_string(),
                    role: *r,
                })
                .collect(),
        }
    }

    #[test]
    fn min_max_maps_endpoints() {
        let s = MinMax::fit("a", &[2.0, 4.0, 6.0]).unwrap();
        let scaled: Vec<f64> = [2.0, 4.0, 6.0].iter().map(|&v| s.apply(v)).collect();
        assert_eq!(scaled, vec![0.0, 0.5, 1.0]);
        // prediction input beyond the training range is clamped
        assert_eq!(s.apply(8.0), 1.0);
        assert_eq!(s.apply(-1.0), 0.0);
    }

    #[test]
    fn gaussian_outcome_is_centered() {
        let t = table(&["a", "y"], &[&["2", "1"], &["4", "2"], &["6", "3"]]);
        let (d, rec) = preprocess(&t, &schema(&[("a", Role::Both)]), Outcome::Gaussian).unwrap();
        assert_eq!(d.y(), &[-1.0, 0.0, 1.0]);
        assert_eq!(d.y_center(), 2.0);
        assert_eq!(rec.y_center, 2.0);
        assert_eq!(d.x().row(1), &[0.5]);
        assert_eq!(d.z().row(2), &[1.0]);
        assert_eq!(d.raw_y(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_column_rejected() {
        let t = table(&["a", "y"], &[&["3", "1"], &["3", "2"]]);
        let err = preprocess(&t, &schema(&[("a", Role::X), ("a", Role::Z)]), Outcome::Gaussian).unwrap_err();
        assert_eq!(err, DataError::ConstantColumn("a".into()));
    }

    #[test]
    fn non_finite_rejected() {
        let t = table(&["a", "y"], &[&["1", "1"], &["NaN", "2"]]);
        let err = preprocess(&t, &schema(&[("a", Role::Both)]), Outcome::Gaussian).unwrap_err();
        assert!(matches!(err, DataError::NonFinite { row: 1, .. }));
        let t = table(&["a", "y"], &[&["1", "1"], &["2", "inf"]]);
        let err = preprocess(&t, &schema(&[("a", Role::Both)]), Outcome::Gaussian).unwrap_err();
        assert!(matches!(err, DataError::NonFinite { .. }));
    }

    #[test]
    fn categorical_levels_are_coded_and_checked() {
        let t = table(
            &["team", "t", "y"],
            &[&["b", "0", "1"], &["a", "1", "0"], &["c", "2", "1"], &["a", "3", "1"]],
        );
        let sch = schema(&[("team", Role::Categorical), ("t", Role::Z)]);
        let (d, rec) = preprocess(&t, &sch, Outcome::Binary).unwrap();
        assert_eq!(d.x().column(0).collect::<Vec<_>>(), vec![1.0, 0.0, 2.0, 0.0]);
        assert_eq!(d.x_kinds(), &[ColumnKind::Categorical { levels: 3 }]);
        assert_eq!(d.y(), &[1.0, 0.0, 1.0, 1.0]);

        let new = table(&["team", "t"], &[&["d", "1"]]);
        assert!(matches!(rec.apply(&new), Err(DataError::UnknownLevel { .. })));

        let single = table(&["team", "t", "y"], &[&["a", "0", "1"], &["a", "1", "0"]]);
        assert!(matches!(
            preprocess(&single, &sch, Outcome::Binary),
            Err(DataError::TooFewLevels { .. })
        ));
    }

    #[test]
    fn binary_outcome_must_be_zero_one() {
        let t = table(&["a", "y"], &[&["1", "1"], &["2", "2"]]);
        let err = preprocess(&t, &schema(&[("a", Role::Both)]), Outcome::Binary).unwrap_err();
        assert!(matches!(err, DataError::NotBinary { row: 1, .. }));
    }

    #[test]
    fn dataset_rejects_out_of_range_entries() {
        let x = Matrix::from_rows(&[vec![0.2], vec![1.2]]).unwrap();
        let z = Matrix::from_rows(&[vec![0.2], vec![0.3]]).unwrap();
        let err = Dataset::continuous(x, z, vec![1.0, 2.0], Outcome::Gaussian).unwrap_err();
        assert!(matches!(err, DataError::OutOfRange { matrix: "x", row: 1, .. }));
    }

    #[test]
    fn transform_reproduces_training_matrix() {
        let t = table(&["a", "b", "y"], &[&["2", "10", "1"], &["4", "30", "2"], &["6", "20", "3"]]);
        let sch = schema(&[("a", Role::X), ("b", Role::Z)]);
        let (d, rec) = preprocess(&t, &sch, Outcome::Gaussian).unwrap();
        let (x, z) = rec.apply(&t).unwrap();
        assert_eq!(&x, d.x());
        assert_eq!(&z, d.z());
        assert_eq!(z.column(0).collect::<Vec<_>>(), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn select_rows_recenters() {
        let x = Matrix::from_rows(&[vec![0.0], vec![0.5], vec![1.0]]).unwrap();
        let d = Dataset::continuous(x.clone(), x, vec![1.0, 2.0, 6.0], Outcome::Gaussian).unwrap();
        let s = d.select_rows(&[0, 1]).unwrap();
        assert_eq!(s.y_center(), 1.5);
        assert_eq!(s.y(), &[-0.5, 0.5]);
    }
}
