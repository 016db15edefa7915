//! Regularized linear discriminant analysis.
//!
//! Scores are `l_k(z) = m_k^T S~^{-1} z - m_k^T S~^{-1} m_k / 2 + log pi_k`
//! for (possibly regularized) group means `m_k`. Expanding the quadratic,
//! `l_k(z) - z^T S~^{-1} z / 2 = -|L^{-1}(m_k - z)|^2 / 2 + log pi_k`, so the
//! maximum score and the minimum of `|B_k|^2 / 2 - log pi_k` pick the same
//! group. Both classifiers below minimize the latter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{
    pooled_covariance, shrink_covariance, CovarianceConvention, RegularizedCovariance, ShrinkageTarget,
};
use crate::datamodel::{group_means, GroupMeans, GroupedDataset};
use crate::error::{check_dim, Error, Result};
use crate::regmeans::{regularize_means, regularize_means_standardized, MeanRegularizer, RegularizedMeans};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "kebab-case")]
pub enum PriorSpec {
    /// `n_k / n`.
    Empirical,
    Uniform,
    /// Must be positive; renormalized when the sum is within `1e-6` of one.
    Custom(Vec<f64>),
}

impl PriorSpec {
    pub fn resolve(&self, group_counts: &[usize]) -> Result<Vec<f64>> {
        let k = group_counts.len();
        let priors = match self {
            Self::Empirical => {
                let n: usize = group_counts.iter().sum();
                group_counts.iter().map(|&c| c as f64 / n as f64).collect()
            }
            Self::Uniform => vec![1.0 / k as f64; k],
            Self::Custom(v) => {
                check_dim(k, v.len())?;
                let sum: f64 = v.iter().sum();
                if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) || (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidParameter(format!("priors {v:?} must be positive and sum to 1")));
                }
                v.iter().map(|x| x / sum).collect()
            }
        };
        Ok(priors)
    }
}

pub(crate) fn check_priors(priors: &[f64], k: usize) -> Result<()> {
    check_dim(k, priors.len())?;
    let sum: f64 = priors.iter().sum();
    if priors.iter().any(|&x| x.is_nan() || x <= 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("priors {priors:?} must be positive and sum to 1")));
    }
    Ok(())
}

/// Index of the first maximum.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Group minimizing `distance_k / 2 - log pi_k`; ties go to the lowest index.
pub fn assign_by_distance(squared_distances: &DVector<f64>, priors: &[f64]) -> usize {
    argmax(squared_distances.iter().zip(priors).map(|(d, p)| p.ln() - 0.5 * d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RldaConfig {
    pub target: ShrinkageTarget,
    pub lambda: f64,
    pub mean_reg: MeanRegularizer,
    pub priors: PriorSpec,
    /// Threshold means in units of the pooled within-group standard deviation.
    #[serde(default)]
    pub standardize: bool,
}

impl RldaConfig {
    pub fn new(target: ShrinkageTarget, lambda: f64, mean_reg: MeanRegularizer) -> Self {
        Self { target, lambda, mean_reg, priors: PriorSpec::Empirical, standardize: false }
    }
}

/// Fitted classifier with the shrinkage covariance and its factor.
#[derive(Debug, Clone, PartialEq)]
pub struct RldaModel {
    reg_means: RegularizedMeans,
    pooled_mean: DVector<f64>,
    cov: RegularizedCovariance,
    priors: Vec<f64>,
    config: RldaConfig,
    group_names: Vec<String>,
    /// `L^{-1} m_k` as columns.
    whitened_means: DMatrix<f64>,
}

pub fn fit(data: &GroupedDataset, config: &RldaConfig) -> Result<RldaModel> {
    let means = group_means(data);
    let s = pooled_covariance(data, &means, CovarianceConvention::WithinGroup)?;
    let cov = shrink_covariance(&s, &config.target, config.lambda)?;
    let reg_means = if config.standardize {
        let scale = s.matrix.diagonal().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        regularize_means_standardized(&means, &config.mean_reg, &scale)?
    } else {
        regularize_means(&means, &config.mean_reg)?
    };
    let priors = config.priors.resolve(data.group_counts())?;
    RldaModel::from_parts(reg_means, means.pooled, cov, priors, config.clone(), data.group_names().to_vec())
}

impl RldaModel {
    pub fn from_parts(
        reg_means: RegularizedMeans,
        pooled_mean: DVector<f64>,
        cov: RegularizedCovariance,
        priors: Vec<f64>,
        config: RldaConfig,
        group_names: Vec<String>,
    ) -> Result<Self> {
        let k = reg_means.per_group.nrows();
        check_dim(cov.p(), reg_means.per_group.ncols())?;
        check_dim(cov.p(), pooled_mean.len())?;
        check_dim(k, group_names.len())?;
        check_priors(&priors, k)?;
        let whitened_means = cov.whiten_columns(&reg_means.per_group.transpose());
        Ok(Self { reg_means, pooled_mean, cov, priors, config, group_names, whitened_means })
    }

    pub fn regularized_means(&self) -> &RegularizedMeans {
        &self.reg_means
    }

    pub fn pooled_mean(&self) -> &DVector<f64> {
        &self.pooled_mean
    }

    pub fn covariance(&self) -> &RegularizedCovariance {
        &self.cov
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn config(&self) -> &RldaConfig {
        &self.config
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn k(&self) -> usize {
        self.priors.len()
    }

    pub fn p(&self) -> usize {
        self.cov.p()
    }

    pub fn active_variables(&self) -> usize {
        self.reg_means.active_count()
    }

    fn scores_from_whitened(&self, u: impl Iterator<Item = f64> + Clone) -> DVector<f64> {
        DVector::from_fn(self.k(), |k, _| {
            let w = self.whitened_means.column(k);
            let cross: f64 = w.iter().zip(u.clone()).map(|(a, b)| a * b).sum();
            cross - 0.5 * w.norm_squared() + self.priors[k].ln()
        })
    }

    pub fn discriminant_scores(&self, z: &DVector<f64>) -> DVector<f64> {
        let u = self.cov.whiten(z);
        self.scores_from_whitened(u.iter().copied())
    }

    pub fn classify(&self, z: &DVector<f64>) -> usize {
        argmax(self.discriminant_scores(z).iter().copied())
    }

    /// Scores for every row of `rows`, one factor solve for the whole batch.
    pub fn score_rows(&self, rows: &DMatrix<f64>) -> Vec<DVector<f64>> {
        let u = self.cov.whiten_columns(&rows.transpose());
        u.column_iter().map(|c| self.scores_from_whitened(c.iter().copied())).collect()
    }

    pub fn classify_rows(&self, rows: &DMatrix<f64>) -> Vec<usize> {
        self.score_rows(rows).iter().map(|s| argmax(s.iter().copied())).collect()
    }
}

/// Cholesky-based classification: whiten `m_k - z` by `L^{-1}` and pick the
/// group with the smallest `|B_k|^2 / 2 - log pi_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyClassifier {
    cov: RegularizedCovariance,
    centers: DMatrix<f64>,
    priors: Vec<f64>,
    whitened_centers: DMatrix<f64>,
}

impl CholeskyClassifier {
    /// Within-group `S`, `S~ = (1 - lambda) S + lambda T`, centres from `mean_reg`.
    pub fn fit(
        data: &GroupedDataset,
        target: &ShrinkageTarget,
        lambda: f64,
        mean_reg: &MeanRegularizer,
        priors: &[f64],
    ) -> Result<Self> {
        let means = group_means(data);
        let s = pooled_covariance(data, &means, CovarianceConvention::WithinGroup)?;
        let cov = shrink_covariance(&s, target, lambda)?;
        Self::with_covariance(cov, &means, mean_reg, priors)
    }

    pub fn with_covariance(
        cov: RegularizedCovariance,
        means: &GroupMeans,
        mean_reg: &MeanRegularizer,
        priors: &[f64],
    ) -> Result<Self> {
        let centers = regularize_means(means, mean_reg)?.per_group;
        check_dim(cov.p(), centers.ncols())?;
        check_priors(priors, centers.nrows())?;
        let whitened_centers = cov.whiten_columns(&centers.transpose());
        Ok(Self { cov, centers, priors: priors.to_vec(), whitened_centers })
    }

    pub fn covariance(&self) -> &RegularizedCovariance {
        &self.cov
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    /// Squared column norms of `B = L^{-1} [m_1 - z, ..., m_K - z]`.
    pub fn squared_distances(&self, z: &DVector<f64>) -> DVector<f64> {
        let u = self.cov.whiten(z);
        DVector::from_fn(self.centers.nrows(), |k, _| (self.whitened_centers.column(k) - &u).norm_squared())
    }

    pub fn classify(&self, z: &DVector<f64>) -> usize {
        assign_by_distance(&self.squared_distances(z), &self.priors)
    }
}

/// One-shot Cholesky classification with `L2` mean shrinkage of weight `delta`.
pub fn classify_alg1(
    data: &GroupedDataset,
    target: &ShrinkageTarget,
    lambda: f64,
    delta: f64,
    priors: &[f64],
    z: &DVector<f64>,
) -> Result<usize> {
    check_dim(data.p(), z.len())?;
    Ok(CholeskyClassifier::fit(data, target, lambda, &MeanRegularizer::L2(delta), priors)?.classify(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvdMode {
    /// Inverts `lambda X~^T X~ + (1 - lambda) I` exactly through the singular values.
    Exact,
    /// Scales by `lambda sigma_j^2 + (1 - lambda)` with column variances `sigma_j^2`.
    /// Not an inverse of the ridge matrix; kept for comparison.
    ColumnVariance,
}

/// Ridge classifier built on the thin SVD `X~ = P Omega Q^T` of the
/// pooled-mean centred data.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdRidgeModel {
    right_vectors: DMatrix<f64>,
    singular_values: DVector<f64>,
    column_variances: DVector<f64>,
    lambda: f64,
    mode: SvdMode,
    means: GroupMeans,
    /// Orthonormal completion of `right_vectors` (column-variance mode only).
    complement: Option<DMatrix<f64>>,
}

pub fn fit_svd_ridge(data: &GroupedDataset, lambda: f64, mode: SvdMode) -> Result<SvdRidgeModel> {
    let means = group_means(data);
    let centered = crate::covariance::centered(data, &means, CovarianceConvention::GramPooledMean);
    let (n, p) = (data.n(), data.p());
    if mode == SvdMode::ColumnVariance && n >= p {
        return Err(Error::InvalidParameter(format!("column-variance SVD mode needs n < p (n = {n}, p = {p})")));
    }
    let column_variances = DVector::from_fn(p, |j, _| centered.column(j).norm_squared() / (n.max(2) - 1) as f64);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values = DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));
    let right_vectors = DMatrix::from_columns(&order.iter().map(|&i| v_t.row(i).transpose()).collect::<Vec<_>>());
    SvdRidgeModel::from_parts(right_vectors, singular_values, column_variances, lambda, mode, means)
}

/// Extends orthonormal columns to a full basis by Gram-Schmidt over the
/// standard basis vectors, in index order.
fn orthonormal_completion(q: &DMatrix<f64>) -> DMatrix<f64> {
    let p = q.nrows();
    let mut basis: Vec<DVector<f64>> = q.column_iter().map(|c| c.into_owned()).collect();
    let start = basis.len();
    for i in 0..p {
        if basis.len() == p {
            break;
        }
        let mut v = DVector::zeros(p);
        v[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 0.1 {
            basis.push(v / norm);
        }
    }
    DMatrix::from_columns(&basis[start..])
}

impl SvdRidgeModel {
    pub fn from_parts(
        right_vectors: DMatrix<f64>,
        singular_values: DVector<f64>,
        column_variances: DVector<f64>,
        lambda: f64,
        mode: SvdMode,
        means: GroupMeans,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!("ridge lambda = {lambda} outside [0, 1)")));
        }
        let p = right_vectors.nrows();
        check_dim(singular_values.len(), right_vectors.ncols())?;
        check_dim(p, column_variances.len())?;
        check_dim(p, means.pooled.len())?;
        if singular_values.iter().any(|&w| w < 0.0) || singular_values.as_slice().windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter("singular values must be non-negative and non-increasing".into()));
        }
        let complement = match mode {
            SvdMode::ColumnVariance => Some(orthonormal_completion(&right_vectors)),
            SvdMode::Exact => None,
        };
        Ok(Self { right_vectors, singular_values, column_variances, lambda, mode, means, complement })
    }

    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right_vectors
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn column_variances(&self) -> &DVector<f64> {
        &self.column_variances
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mode(&self) -> SvdMode {
        self.mode
    }

    pub fn means(&self) -> &GroupMeans {
        &self.means
    }

    pub fn p(&self) -> usize {
        self.right_vectors.nrows()
    }

    /// Squared distance of one difference vector.
    pub fn distance(&self, d: &DVector<f64>) -> f64 {
        let lambda = self.lambda;
        let proj = self.right_vectors.tr_mul(d);
        match self.mode {
            SvdMode::Exact => {
                let mut inside = 0.0;
                let mut total = 0.0;
                for (c, w) in proj.iter().zip(self.singular_values.iter()) {
                    inside += c * c;
                    total += c * c / (lambda * w * w + 1.0 - lambda);
                }
                let outside = (d.norm_squared() - inside).max(0.0);
                total + outside / (1.0 - lambda)
            }
            SvdMode::ColumnVariance => {
                let rest = self.complement.as_ref().expect("column-variance mode keeps a completion").tr_mul(d);
                proj.iter()
                    .chain(rest.iter())
                    .zip(self.column_variances.iter())
                    .map(|(c, v)| c * c / (lambda * v + 1.0 - lambda))
                    .sum()
            }
        }
    }

    /// Distances from `z` to `(1 - delta) xbar_k + delta xbar` for every group.
    pub fn squared_distances(&self, delta: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidParameter(format!("delta = {delta} outside [0, 1]")));
        }
        check_dim(self.p(), z.len())?;
        let centers = regularize_means(&self.means, &MeanRegularizer::L2(delta))?.per_group;
        Ok(DVector::from_fn(centers.nrows(), |k, _| self.distance(&(centers.row(k).transpose() - z))))
    }
}

pub fn classify_alg2(model: &SvdRidgeModel, delta: f64, priors: &[f64], z: &DVector<f64>) -> Result<usize> {
    check_priors(priors, model.means.per_group.nrows())?;
    Ok(assign_by_distance(&model.squared_distances(delta, z)?, priors))
}
