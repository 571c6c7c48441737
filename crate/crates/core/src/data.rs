//! Datasets: CSV ingestion with one-hot encoding, deterministic splits, the
//! Friedman #1 generator, and feature standardization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScateError};
use crate::rng::{self, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    BinaryClassification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Numeric design matrix plus target.
///
/// `column_kinds` describes the source columns before one-hot encoding, so its
/// length can differ from `features.ncols()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub target: Array1<f64>,
    pub task: Task,
    pub feature_names: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        target: Array1<f64>,
        task: Task,
        feature_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n < 2 {
            return Err(ScateError::TooFewRows { needed: 2, got: n });
        }
        if d == 0 {
            return Err(ScateError::InvalidParameter("dataset has no feature columns".into()));
        }
        if target.len() != n {
            return Err(ScateError::DimensionMismatch { expected: n, got: target.len() });
        }
        if feature_names.len() != d {
            return Err(ScateError::ColumnMismatch { expected: d, got: feature_names.len() });
        }
        if features.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(ScateError::InvalidParameter("non-finite value in dataset".into()));
        }
        if task == Task::BinaryClassification && target.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(ScateError::InvalidParameter(
                "binary classification targets must be 0 or 1".into(),
            ));
        }
        Ok(Dataset { features, target, task, feature_names, column_kinds })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in the given order. May hold fewer than two rows.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            target: self.target.select(Axis(0), indices),
            task: self.task,
            feature_names: self.feature_names.clone(),
            column_kinds: self.column_kinds.clone(),
        }
    }

    /// Writes the dataset as CSV with a trailing `target` column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push("target".to_string());
        w.write_record(&header)?;
        for (row, y) in self.features.rows().into_iter().zip(self.target.iter()) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{y:?}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "?" || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn parse_finite(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a headed CSV, drops incomplete rows, and one-hot encodes every
/// non-numeric feature column (categories in lexicographic order).
///
/// For classification the two observed label strings map to 0 and 1 in
/// lexicographic order.
pub fn load_csv(path: &Path, target_column: &str, task: Task) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| ScateError::MissingColumn(target_column.to_string()))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(ScateError::ColumnMismatch { expected: header.len(), got: rec.len() });
        }
        if rec.iter().any(is_missing) {
            continue;
        }
        rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(ScateError::EmptyAfterCleaning);
    }
    if rows.len() < 2 {
        return Err(ScateError::TooFewRows { needed: 2, got: rows.len() });
    }

    let target: Vec<f64> = match task {
        Task::Regression => rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                parse_finite(&row[target_idx]).ok_or_else(|| ScateError::ParseError {
                    row: r,
                    col: target_idx,
                    msg: format!("`{}` is not a finite number", row[target_idx]),
                })
            })
            .collect::<Result<_>>()?,
        Task::BinaryClassification => {
            let labels: BTreeSet<&str> = rows.iter().map(|r| r[target_idx].as_str()).collect();
            if labels.len() != 2 {
                return Err(ScateError::NonBinaryLabels(labels.len()));
            }
            let positive = *labels.iter().next_back().expect("two labels");
            rows.iter().map(|r| if r[target_idx] == positive { 1.0 } else { 0.0 }).collect()
        }
    };

    // Encoded columns, built column by column in source order.
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if c == target_idx {
            continue;
        }
        let parsed: Option<Vec<f64>> = rows.iter().map(|r| parse_finite(&r[c])).collect();
        match parsed {
            Some(values) => {
                kinds.push(ColumnKind::Numeric);
                names.push(name.clone());
                columns.push(values);
            }
            None => {
                kinds.push(ColumnKind::Categorical);
                let levels: BTreeMap<&str, usize> = rows
                    .iter()
                    .map(|r| r[c].as_str())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .enumerate()
                    .map(|(i, l)| (l, i))
                    .collect();
                let base = columns.len();
                for level in levels.keys() {
                    names.push(format!("{name}={level}"));
                    columns.push(vec![0.0; rows.len()]);
                }
                for (r, row) in rows.iter().enumerate() {
                    columns[base + levels[row[c].as_str()]][r] = 1.0;
                }
            }
        }
    }

    let n = rows.len();
    let d = columns.len();
    let features = Array2::from_shape_fn((n, d), |(i, j)| columns[j][i]);
    Dataset::new(features, Array1::from(target), task, names, kinds)
}

/// Train/validation/test row indices. Each list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.7, 0.15, 0.15];

/// Shuffles `0..n` and cuts it into train/validation/test blocks.
///
/// Validation and test sizes are `floor(n * ratio)`; the remainder goes to train.
pub fn split(n: usize, ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(ScateError::InvalidRatios(ratios));
    }
    if n < 3 {
        return Err(ScateError::TooFewRows { needed: 3, got: n });
    }
    let n_val = (n as f64 * ratios[1] + 1e-9).floor() as usize;
    let n_test = (n as f64 * ratios[2] + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut rng = rng_from_seed(seed);
    let perm = rng::permutation(&mut rng, n);
    let mut train = perm[..n_train].to_vec();
    let mut validation = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, validation, test, seed })
}

/// Noise-free Friedman #1 response; only the first five coordinates matter.
pub fn friedman1_response(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5).powi(2)
        + 10.0 * x[3]
        + 5.0 * x[4]
}

/// Friedman #1: `x ~ U[0,1]^d`, `y = friedman1_response(x) + N(0, noise_sd^2)`.
pub fn gen_friedman1(n: usize, d: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if d < 5 {
        return Err(ScateError::DimensionTooSmall(d));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(ScateError::InvalidParameter(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut features = Array2::zeros((n, d));
    let mut target = Array1::zeros(n);
    for i in 0..n {
        for j in 0..d {
            features[[i, j]] = rng::uniform01(&mut rng);
        }
        let row = features.row(i);
        let x = row.as_slice().expect("row-major");
        target[i] = friedman1_response(x) + noise_sd * rng::standard_normal(&mut rng);
    }
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    let kinds = vec![ColumnKind::Numeric; d];
    Ok(Dataset { features, target, task: Task::Regression, feature_names: names, column_kinds: kinds })
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ScalingStats {
    pub fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let mut means = Vec::with_capacity(features.ncols());
        let mut stds = Vec::with_capacity(features.ncols());
        for col in features.columns() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means.push(mean);
            stds.push(var.sqrt());
        }
        ScalingStats { means, stds }
    }

    /// Identity scaling (mean 0, std 1) for `d` columns.
    pub fn identity(d: usize) -> Self {
        ScalingStats { means: vec![0.0; d], stds: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        for (j, (o, &v)) in out.iter_mut().zip(x).enumerate() {
            *o = if self.stds[j] == 0.0 { v } else { (v - self.means[j]) / self.stds[j] };
        }
    }

    pub fn apply(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dim() {
            return Err(ScateError::ColumnMismatch { expected: self.dim(), got: features.ncols() });
        }
        let mut out = features.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            if s != 0.0 {
                col.mapv_inplace(|v| (v - m) / s);
            }
        }
        Ok(out)
    }
}

/// Standardizes columns with the supplied statistics, or with statistics fit
/// on `features` itself when none are given. Zero-variance columns pass through.
pub fn standardize(
    features: &Array2<f64>,
    stats: Option<&ScalingStats>,
) -> Result<(Array2<f64>, ScalingStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => ScalingStats::fit(features),
    };
    let out = stats.apply(features)?;
    Ok((out, stats))
}
