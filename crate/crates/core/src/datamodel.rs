//! Grouped observation matrices, group statistics, CSV ingestion and the
//! equicorrelated Gaussian simulation.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// `n x p` observations, each tagged with one of `K >= 2` groups.
///
/// Group indices are zero-based internally; `group_names` keeps the
/// external labels in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    values: DMatrix<f64>,
    labels: Vec<usize>,
    group_counts: Vec<usize>,
    group_names: Vec<String>,
    feature_names: Vec<String>,
}

impl GroupedDataset {
    pub fn new(values: DMatrix<f64>, labels: Vec<usize>, group_names: Vec<String>) -> Result<Self> {
        let n = values.nrows();
        let p = values.ncols();
        check_dim(n, labels.len())?;
        if p == 0 {
            return Err(Error::InvalidData("no variables".into()));
        }
        let k = group_names.len();
        if k < 2 {
            return Err(Error::TooFewGroups);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidData(format!("label {bad} refers to a missing group")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite value".into()));
        }
        let mut group_counts = vec![0; k];
        for &l in &labels {
            group_counts[l] += 1;
        }
        if let Some(empty) = group_counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyGroup(empty));
        }
        let feature_names = (1..=p).map(|j| format!("x{j}")).collect();
        Ok(Self { values, labels, group_counts, group_names, feature_names })
    }

    /// Builds a dataset whose groups are named `1..=K`, with `K = max(label) + 1`.
    pub fn from_labels(values: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let names = (1..=k).map(|g| g.to_string()).collect();
        Self::new(values, labels, names)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        check_dim(self.p(), names.len())?;
        self.feature_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn k(&self) -> usize {
        self.group_counts.len()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn group_counts(&self) -> &[usize] {
        &self.group_counts
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Row indices belonging to group `k`, in dataset order.
    pub fn group_rows(&self, k: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == k).map(|(i, _)| i).collect()
    }

    /// Dataset restricted to `rows`, keeping the full group list. Fails if a
    /// group ends up empty.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let values = self.values.select_rows(rows);
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        let mut out = Self::new(values, labels, self.group_names.clone())?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }
}

/// Pooled mean and per-group means (rows of `per_group`).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMeans {
    pub pooled: DVector<f64>,
    pub per_group: DMatrix<f64>,
}

impl GroupMeans {
    pub fn group(&self, k: usize) -> DVector<f64> {
        self.per_group.row(k).transpose()
    }
}

impl Serialize for GroupMeans {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            pooled: &'a [f64],
            per_group: Vec<Vec<f64>>,
        }
        let per_group = (0..self.per_group.nrows())
            .map(|k| self.per_group.row(k).iter().copied().collect())
            .collect();
        Repr { pooled: self.pooled.as_slice(), per_group }.serialize(serializer)
    }
}

pub fn group_means(data: &GroupedDataset) -> GroupMeans {
    let (n, p, k) = (data.n(), data.p(), data.k());
    let mut sums = DMatrix::zeros(k, p);
    for (i, &g) in data.labels().iter().enumerate() {
        let mut row = sums.row_mut(g);
        row += data.values().row(i);
    }
    let pooled = sums.row_sum().transpose() / n as f64;
    for (g, &count) in data.group_counts().iter().enumerate() {
        let mut row = sums.row_mut(g);
        row /= count as f64;
    }
    GroupMeans { pooled, per_group: sums }
}

/// Reads a header-first, comma-separated file; `label_column` names the group column.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<GroupedDataset> {
    read_csv(open(path.as_ref())?, label_column)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Group labels are assigned in order of first appearance. Cell errors carry
/// the 1-based data row (header excluded) and the column name.
pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<GroupedDataset> {
    let table = read_features(reader, Some(label_column))?;
    let raw = table.labels.expect("label column requested");
    let mut group_names: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let labels = raw
        .iter()
        .map(|l| {
            let next = group_names.len();
            *index.entry(l.as_str()).or_insert_with(|| {
                group_names.push(l.clone());
                next
            })
        })
        .collect();
    if group_names.len() < 2 {
        return Err(Error::TooFewGroups);
    }
    GroupedDataset::new(table.values, labels, group_names)?.with_feature_names(table.feature_names)
}

/// Numeric columns of a CSV file, plus the raw label column when one is named.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub values: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub labels: Option<Vec<String>>,
}

pub fn load_features(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<FeatureTable> {
    read_features(open(path.as_ref())?, label_column)
}

pub fn read_features<R: Read>(reader: R, label_column: Option<&str>) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = label_column
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidData(format!("label column '{name}' not found")))
        })
        .transpose()?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|(j, _)| Some(*j) != label_idx).map(|(_, h)| h.clone()).collect();
    if feature_names.is_empty() {
        return Err(Error::InvalidData("no feature columns".into()));
    }

    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let column = headers[j].clone();
            if cell.is_empty() {
                return Err(Error::Cell { row, column, message: "missing value".into() });
            }
            if Some(j) == label_idx {
                labels.push(cell.to_string());
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Cell {
                    row,
                    column: column.clone(),
                    message: format!("'{cell}' is not numeric"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Cell { row, column, message: "non-finite value".into() });
                }
                flat.push(v);
            }
        }
    }
    let n = flat.len() / feature_names.len();
    if n == 0 {
        return Err(Error::InvalidData("no observations".into()));
    }
    Ok(FeatureTable {
        values: DMatrix::from_row_slice(n, feature_names.len(), &flat),
        feature_names,
        labels: label_idx.map(|_| labels),
    })
}

/// A headerless numeric matrix, one row per line.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(open(path.as_ref())?);
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = record?
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.trim().parse::<f64>().map_err(|_| Error::Cell {
                    row: r + 1,
                    column: (j + 1).to_string(),
                    message: format!("'{}' is not numeric", c.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    crate::persist::matrix_from_rows(&rows)
}

pub fn write_csv<W: Write>(data: &GroupedDataset, writer: W, label_column: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names().iter().map(String::as_str).collect();
    header.push(label_column);
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.values().row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.group_names()[data.labels()[i]].clone());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| Error::Io { path: "<csv output>".into(), source })?;
    Ok(())
}

/// Two-sample equicorrelated Gaussian design:
/// `N_p(0, Sigma)` for `n` rows and `N_p(shift, Sigma)` for `m` rows, with
/// `Sigma = sigma^2 [(1 - c) I + c 11^T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub sigma: f64,
    pub c: f64,
    pub shift: Vec<f64>,
    pub seed: u64,
}

impl SimulationConfig {
    /// 50 + 50 observations, 1000 variables, `sigma = 1`, `c = 0.4`, and the
    /// second group shifted by 3 in its first five coordinates.
    pub fn reference(seed: u64) -> Self {
        Self::with_sparse_shift(50, 50, 1000, 1.0, 0.4, 5, 3.0, seed)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_sparse_shift(
        n: usize,
        m: usize,
        p: usize,
        sigma: f64,
        c: f64,
        shifted: usize,
        amount: f64,
        seed: u64,
    ) -> Self {
        let shift = (0..p).map(|j| if j < shifted { amount } else { 0.0 }).collect();
        Self { n, m, p, sigma, c, shift, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.c) {
            return Err(Error::InvalidParameter(format!("c = {} outside [0, 1)", self.c)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma = {} must be positive", self.sigma)));
        }
        if self.n == 0 || self.m == 0 || self.p == 0 {
            return Err(Error::InvalidParameter("sample sizes and dimension must be positive".into()));
        }
        check_dim(self.p, self.shift.len())
    }
}

/// Draws the two-sample design.
///
/// Each group uses its own ChaCha8 stream (stream index = group index) seeded
/// from `config.seed`; normals come from `rand_distr::StandardNormal`
/// (ziggurat). Every row is `mean + sigma * (sqrt(1 - c) z + sqrt(c) z0 1)`
/// with `z ~ N_p(0, I)` and a scalar `z0 ~ N(0, 1)`, drawn `z0` first.
pub fn simulate(config: &SimulationConfig) -> Result<GroupedDataset> {
    config.validate()?;
    let p = config.p;
    let total = config.n + config.m;
    let mut values = DMatrix::zeros(total, p);
    let a = config.c.sqrt();
    let b = (1.0 - config.c).sqrt();
    let zero = vec![0.0; p];
    let groups = [(0..config.n, &zero), (config.n..total, &config.shift)];
    for (g, (rows, mean)) in groups.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(g as u64);
        for i in rows {
            let z0: f64 = StandardNormal.sample(&mut rng);
            for j in 0..p {
                let z: f64 = StandardNormal.sample(&mut rng);
                values[(i, j)] = mean[j] + config.sigma * (b * z + a * z0);
            }
        }
    }
    let labels = (0..total).map(|i| usize::from(i >= config.n)).collect();
    GroupedDataset::new(values, labels, vec!["1".into(), "2".into()])
}
