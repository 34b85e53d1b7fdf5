//! Feature matrices, CSV ingestion, and PCA dimensionality reduction.
//!
//! A [`FeatureMatrix`] is the data currency of the crate: `n` samples by `d`
//! finite real features, optionally tagged per row with a binary correctness
//! label. PCA is fit on the training reference only and reused for
//! calibration and operational data; components are ordered and sign-fixed
//! deterministically so identical input always yields identical model bytes.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n x d` row-major matrix of finite reals with an optional per-row
/// correctness label (1 = prediction correct / in scope).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    correctness: Option<Vec<u8>>,
}

impl FeatureMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        correctness: Option<Vec<u8>>,
    ) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidConfig(
                "feature matrix needs at least one column".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidConfig(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index, value });
        }
        if let Some(c) = &correctness {
            if c.len() != rows {
                return Err(Error::InvalidConfig(format!(
                    "correctness length {} does not match row count {rows}",
                    c.len()
                )));
            }
            if c.iter().any(|v| *v > 1) {
                return Err(Error::InvalidConfig(
                    "correctness labels must be 0 or 1".into(),
                ));
            }
        }
        Ok(Self {
            rows,
            cols,
            data,
            correctness,
        })
    }

    /// Build from equally long columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidConfig(
                "feature matrix needs at least one column".into(),
            ));
        }
        let rows = columns[0].len();
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::InvalidConfig("columns have unequal lengths".into()));
        }
        let mut data = Vec::with_capacity(rows * columns.len());
        for r in 0..rows {
            for c in columns {
                data.push(c[r]);
            }
        }
        Self::new(rows, columns.len(), data, None)
    }

    /// Build from rows, all of width `cols`.
    pub fn from_rows(
        cols: usize,
        rows: Vec<Vec<f64>>,
        correctness: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for row in &rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n, cols, data, correctness)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols + j])
            .collect()
    }

    pub fn correctness(&self) -> Option<&[u8]> {
        self.correctness.as_deref()
    }

    pub fn with_correctness(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.rows {
            return Err(Error::InvalidConfig(format!(
                "correctness length {} does not match row count {}",
                labels.len(),
                self.rows
            )));
        }
        if labels.iter().any(|v| *v > 1) {
            return Err(Error::InvalidConfig(
                "correctness labels must be 0 or 1".into(),
            ));
        }
        self.correctness = Some(labels);
        Ok(self)
    }

    /// New matrix with the given rows (indices may repeat); labels carried.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let correctness = self
            .correctness
            .as_ref()
            .map(|c| indices.iter().map(|&i| c[i]).collect());
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
            correctness,
        }
    }

    /// Indices of rows carrying the given correctness label.
    pub fn rows_with_label(&self, label: u8) -> Vec<usize> {
        match &self.correctness {
            Some(c) => c
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == label)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Fraction of rows labelled correct; `None` without labels or rows.
    pub fn accuracy(&self) -> Option<f64> {
        let c = self.correctness.as_ref()?;
        if c.is_empty() {
            return None;
        }
        Some(c.iter().map(|v| *v as f64).sum::<f64>() / c.len() as f64)
    }
}

/// Options for [`fit_pca_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PcaOptions {
    /// Z-score each feature before decomposing (correlation PCA) instead of
    /// centering only.
    pub standardize: bool,
}

/// A fitted PCA projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Per-feature divisor when fitted with standardization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
    /// `k x d`, rows mutually orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Explained variance ratio of each retained component, non-increasing.
    pub explained_ratio: Vec<f64>,
    pub target: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn cumulative_explained(&self) -> f64 {
        self.explained_ratio.iter().sum()
    }
}

/// Fit PCA on `x`, retaining the smallest number of leading components whose
/// cumulative explained variance ratio reaches `target`.
pub fn fit_pca(x: &FeatureMatrix, target: f64) -> Result<PcaModel> {
    fit_pca_with(x, target, PcaOptions::default())
}

pub fn fit_pca_with(x: &FeatureMatrix, target: f64, options: PcaOptions) -> Result<PcaModel> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "explained-variance target must lie in (0, 1], got {target}"
        )));
    }
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }

    let mean: Vec<f64> = (0..d)
        .map(|j| x.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let mut centered = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            centered[(i, j)] = x.row(i)[j] - mean[j];
        }
    }
    let scale = if options.standardize {
        let stds: Vec<f64> = (0..d)
            .map(|j| {
                let var = (0..n).map(|i| centered[(i, j)].powi(2)).sum::<f64>() / (n - 1) as f64;
                let s = var.sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        for j in 0..d {
            for i in 0..n {
                centered[(i, j)] /= stds[j];
            }
        }
        Some(stds)
    } else {
        None
    };

    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eigen = SymmetricEigen::new(cov);

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|i| {
            let lambda = eigen.eigenvalues[i].max(0.0);
            let mut v: Vec<f64> = eigen.eigenvectors.column(i).iter().copied().collect();
            // Sign convention: the largest-magnitude coordinate is positive.
            let lead = v
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.abs().total_cmp(&b.abs()))
                .map(|(idx, _)| idx)
                .unwrap_or(0);
            if v[lead] < 0.0 {
                for c in v.iter_mut() {
                    *c = -*c;
                }
            }
            (lambda, v)
        })
        .collect();
    pairs.sort_by(|(la, va), (lb, vb)| {
        lb.total_cmp(la).then_with(|| {
            va.iter()
                .zip(vb)
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| *o != std::cmp::Ordering::Equal)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let total: f64 = pairs.iter().map(|(l, _)| l).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateData);
    }
    let rank_eps = total * 1e-12;
    let rank = pairs.iter().filter(|(l, _)| *l > rank_eps).count().max(1);

    let mut k = rank;
    let mut cumulative = 0.0;
    for (i, (lambda, _)) in pairs.iter().enumerate() {
        cumulative += lambda / total;
        if cumulative >= target - 1e-9 {
            k = i + 1;
            break;
        }
    }
    let k = k.min(rank);

    let components: Vec<Vec<f64>> = pairs.iter().take(k).map(|(_, v)| v.clone()).collect();
    let explained_ratio: Vec<f64> = pairs.iter().take(k).map(|(l, _)| l / total).collect();
    Ok(PcaModel {
        mean,
        scale,
        components,
        explained_ratio,
        target,
    })
}

/// Project `x` through the fitted model: row i maps to
/// `components * (x_i - mean)`. Correctness labels are carried through.
pub fn pca_transform(model: &PcaModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    let d = model.input_dim();
    if x.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.cols(),
        });
    }
    let k = model.output_dim();
    let mut data = Vec::with_capacity(x.rows() * k);
    let mut centered = vec![0.0; d];
    for i in 0..x.rows() {
        let row = x.row(i);
        for j in 0..d {
            centered[j] = row[j] - model.mean[j];
            if let Some(scale) = &model.scale {
                centered[j] /= scale[j];
            }
        }
        for comp in &model.components {
            data.push(comp.iter().zip(&centered).map(|(c, v)| c * v).sum());
        }
    }
    FeatureMatrix::new(x.rows(), k, data, x.correctness().map(|c| c.to_vec()))
}

/// Map projected rows back to the original space: `mean + z * components`.
pub fn pca_inverse_transform(model: &PcaModel, z: &FeatureMatrix) -> Result<FeatureMatrix> {
    let k = model.output_dim();
    if z.cols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: z.cols(),
        });
    }
    let d = model.input_dim();
    let mut data = Vec::with_capacity(z.rows() * d);
    for i in 0..z.rows() {
        let row = z.row(i);
        for j in 0..d {
            let mut v: f64 = (0..k).map(|c| row[c] * model.components[c][j]).sum();
            if let Some(scale) = &model.scale {
                v *= scale[j];
            }
            data.push(v + model.mean[j]);
        }
    }
    FeatureMatrix::new(z.rows(), d, data, z.correctness().map(|c| c.to_vec()))
}

/// Read a feature CSV: header row with columns `f0..f{d-1}` plus an optional
/// `correct` column of 0/1 labels. Missing cells, non-finite values, and
/// unknown columns are rejected with file/line diagnostics.
pub fn read_features_csv(path: &std::path::Path) -> Result<FeatureMatrix> {
    let display = path.display().to_string();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: display.clone(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| parse_err(1, e.to_string()))?;

    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let mut feature_slots: Vec<Option<usize>> = Vec::new();
    let mut correct_col: Option<usize> = None;
    let mut feature_cols: Vec<(usize, usize)> = Vec::new(); // (feature index, column)
    for (col, name) in headers.iter().enumerate() {
        if name == "correct" {
            if correct_col.is_some() {
                return Err(parse_err(1, "duplicate `correct` column".into()));
            }
            correct_col = Some(col);
        } else if let Some(idx) = name
            .strip_prefix('f')
            .and_then(|rest| rest.parse::<usize>().ok())
        {
            feature_cols.push((idx, col));
        } else {
            return Err(parse_err(
                1,
                format!("unexpected column {name:?}; expected f0..fN or `correct`"),
            ));
        }
    }
    let d = feature_cols.len();
    if d == 0 {
        return Err(parse_err(1, "no feature columns (f0..fN) found".into()));
    }
    feature_slots.resize(d, None);
    for (idx, col) in &feature_cols {
        if *idx >= d || feature_slots[*idx].is_some() {
            return Err(parse_err(
                1,
                format!("feature columns must be exactly f0..f{}", d - 1),
            ));
        }
        feature_slots[*idx] = Some(*col);
    }
    let slots: Vec<usize> = feature_slots.into_iter().map(|s| s.unwrap()).collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for (feature, &col) in slots.iter().enumerate() {
            let cell = record.get(col).unwrap_or("");
            if cell.is_empty() {
                return Err(parse_err(line, format!("missing value for f{feature}")));
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("f{feature}: not a number: {cell:?}")))?;
            if !value.is_finite() {
                return Err(parse_err(
                    line,
                    format!("f{feature}: non-finite value {cell:?}"),
                ));
            }
            data.push(value);
        }
        if let Some(col) = correct_col {
            let cell = record.get(col).unwrap_or("");
            match cell {
                "0" => labels.push(0),
                "1" => labels.push(1),
                other => {
                    return Err(parse_err(
                        line,
                        format!("`correct` must be 0 or 1, got {other:?}"),
                    ))
                }
            }
        }
        rows += 1;
    }
    let correctness = correct_col.map(|_| labels);
    FeatureMatrix::new(rows, d, data, correctness)
}

/// Write a feature matrix in the same CSV dialect `read_features_csv` accepts.
pub fn write_features_csv(path: &std::path::Path, matrix: &FeatureMatrix) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..matrix.cols()).map(|j| format!("f{j}")).collect();
    if matrix.correctness().is_some() {
        header.push("correct".into());
    }
    writer
        .write_record(&header)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for i in 0..matrix.rows() {
        let mut record: Vec<String> = matrix.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(c) = matrix.correctness() {
            record.push(c[i].to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    writer.flush()?;
    Ok(())
}
