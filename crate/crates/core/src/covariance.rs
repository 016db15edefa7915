//! Pooled covariance, shrinkage toward a target, the ridge form, and the
//! analytic shrinkage intensity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datamodel::{GroupMeans, GroupedDataset};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_lower, compound_symmetric, is_symmetric, solve_lower, solve_lower_columns};

/// How a pooled covariance was formed. `lambda` means different things for
/// differently scaled `S`, so the convention travels with the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceConvention {
    /// Group-mean centred, divided by `n - K`.
    WithinGroup,
    /// Pooled-mean centred Gram matrix `X~^T X~`, unnormalised.
    GramPooledMean,
    /// Provided by the caller.
    Supplied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledCovariance {
    pub matrix: DMatrix<f64>,
    pub convention: CovarianceConvention,
}

impl PooledCovariance {
    pub fn supplied(matrix: DMatrix<f64>) -> Self {
        Self { matrix, convention: CovarianceConvention::Supplied }
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Rows of `data` minus their group mean (`WithinGroup`) or the pooled mean.
pub(crate) fn centered(data: &GroupedDataset, means: &GroupMeans, convention: CovarianceConvention) -> DMatrix<f64> {
    let mut x = data.values().clone();
    for (i, &g) in data.labels().iter().enumerate() {
        let mut row = x.row_mut(i);
        match convention {
            CovarianceConvention::GramPooledMean => row -= means.pooled.transpose(),
            _ => row -= means.per_group.row(g),
        }
    }
    x
}

pub fn pooled_covariance(
    data: &GroupedDataset,
    means: &GroupMeans,
    convention: CovarianceConvention,
) -> Result<PooledCovariance> {
    check_dim(data.p(), means.pooled.len())?;
    check_dim(data.k(), means.per_group.nrows())?;
    let matrix = match convention {
        CovarianceConvention::WithinGroup => {
            let (n, k) = (data.n(), data.k());
            if n < k + 1 {
                return Err(Error::InsufficientObservations(format!(
                    "within-group covariance needs n >= K + 1 (n = {n}, K = {k})"
                )));
            }
            let r = centered(data, means, convention);
            r.tr_mul(&r) / (n - k) as f64
        }
        CovarianceConvention::GramPooledMean => {
            let r = centered(data, means, convention);
            r.tr_mul(&r)
        }
        CovarianceConvention::Supplied => {
            return Err(Error::InvalidParameter("a supplied covariance cannot be estimated".into()))
        }
    };
    Ok(PooledCovariance { matrix, convention })
}

/// Shrinkage target `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TargetRepr", try_from = "TargetRepr")]
pub enum ShrinkageTarget {
    Identity,
    /// `variance` on the diagonal, `covariance` off it. A missing variance
    /// is taken as the mean diagonal of the matrix being shrunk.
    EqualCorrelation { variance: Option<f64>, covariance: f64 },
    Custom(DMatrix<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum TargetRepr {
    Identity,
    EqualCorrelation { variance: Option<f64>, covariance: f64 },
    Custom { rows: Vec<Vec<f64>> },
}

impl From<ShrinkageTarget> for TargetRepr {
    fn from(t: ShrinkageTarget) -> Self {
        match t {
            ShrinkageTarget::Identity => Self::Identity,
            ShrinkageTarget::EqualCorrelation { variance, covariance } => Self::EqualCorrelation { variance, covariance },
            ShrinkageTarget::Custom(m) => Self::Custom { rows: crate::persist::rows_of(&m) },
        }
    }
}

impl TryFrom<TargetRepr> for ShrinkageTarget {
    type Error = Error;

    fn try_from(r: TargetRepr) -> Result<Self> {
        Ok(match r {
            TargetRepr::Identity => Self::Identity,
            TargetRepr::EqualCorrelation { variance, covariance } => Self::EqualCorrelation { variance, covariance },
            TargetRepr::Custom { rows } => Self::Custom(crate::persist::matrix_from_rows(&rows)?),
        })
    }
}

impl ShrinkageTarget {
    pub fn equal_correlation(covariance: f64) -> Self {
        Self::EqualCorrelation { variance: None, covariance }
    }

    /// Short tag used in reports: `t1`, `t2` or `custom`.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Identity => "t1",
            Self::EqualCorrelation { .. } => "t2",
            Self::Custom(_) => "custom",
        }
    }

    /// Concrete `p x p` target for shrinking `s`.
    pub fn materialize(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = s.nrows();
        match self {
            Self::Identity => Ok(DMatrix::identity(p, p)),
            Self::EqualCorrelation { variance, covariance } => {
                let v = variance.unwrap_or_else(|| s.trace() / p as f64);
                let t = *covariance;
                if !(v - t > 0.0 && v + (p as f64 - 1.0) * t > 0.0) {
                    return Err(Error::NotPositiveDefinite("equal-correlation target"));
                }
                Ok(compound_symmetric(p, v, t))
            }
            Self::Custom(m) => {
                check_dim(p, m.nrows())?;
                if !is_symmetric(m, 1e-12) {
                    return Err(Error::InvalidParameter("custom target is not symmetric".into()));
                }
                cholesky_lower(m, false, "custom target")?;
                Ok(m.clone())
            }
        }
    }
}

/// Which formula produced a [`RegularizedCovariance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizationForm {
    /// `(1 - lambda) S + lambda T`.
    Shrinkage,
    /// `lambda S + (1 - lambda) I`.
    Ridge,
}

/// A regularized covariance together with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedCovariance {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
    lambda: f64,
    form: RegularizationForm,
    convention: CovarianceConvention,
    jitter: f64,
}

impl RegularizedCovariance {
    fn build(
        matrix: DMatrix<f64>,
        lambda: f64,
        form: RegularizationForm,
        convention: CovarianceConvention,
        allow_jitter: bool,
    ) -> Result<Self> {
        let (factor, jitter) = cholesky_lower(&matrix, allow_jitter, "regularized covariance")?;
        Ok(Self { matrix, factor, lambda, form, convention, jitter })
    }

    /// Rebuilds from a stored factor (model files).
    pub fn from_factor(
        factor: DMatrix<f64>,
        lambda: f64,
        form: RegularizationForm,
        convention: CovarianceConvention,
    ) -> Result<Self> {
        let p = factor.nrows();
        check_dim(p, factor.ncols())?;
        if (0..p).any(|i| factor[(i, i)].is_nan() || factor[(i, i)] <= 0.0) || (0..p).any(|i| (i + 1..p).any(|j| factor[(i, j)] != 0.0)) {
            return Err(Error::InvalidParameter("factor is not lower triangular with a positive diagonal".into()));
        }
        let matrix = &factor * factor.transpose();
        Ok(Self { matrix, factor, lambda, form, convention, jitter: 0.0 })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn form(&self) -> RegularizationForm {
        self.form
    }

    pub fn convention(&self) -> CovarianceConvention {
        self.convention
    }

    /// Diagonal shift added by the fallback factorization, zero if none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    /// `L^{-1} d`.
    pub fn whiten(&self, d: &DVector<f64>) -> DVector<f64> {
        solve_lower(&self.factor, d)
    }

    /// `L^{-1} B`, column by column.
    pub fn whiten_columns(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        solve_lower_columns(&self.factor, b)
    }
}

fn check_unit_interval(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("lambda = {lambda} outside [0, 1]")))
    }
}

/// `(1 - lambda) S + lambda T`, factorized.
///
/// Fails with [`Error::NotPositiveDefinite`] when the result cannot be
/// factorized, e.g. `lambda = 0` with a singular `S`. The jittered retry is
/// only attempted when `lambda > 0`, i.e. when the blend is positive definite
/// in exact arithmetic.
pub fn shrink_covariance(s: &PooledCovariance, target: &ShrinkageTarget, lambda: f64) -> Result<RegularizedCovariance> {
    check_unit_interval(lambda)?;
    let t = target.materialize(&s.matrix)?;
    shrink_toward(s, &t, lambda)
}

pub(crate) fn shrink_toward(s: &PooledCovariance, t: &DMatrix<f64>, lambda: f64) -> Result<RegularizedCovariance> {
    check_dim(s.p(), t.nrows())?;
    let matrix = &s.matrix * (1.0 - lambda) + t * lambda;
    RegularizedCovariance::build(matrix, lambda, RegularizationForm::Shrinkage, s.convention, lambda > 0.0)
}

/// `lambda S + (1 - lambda) I`, factorized. Note `lambda` weights `S` here.
pub fn ridge_covariance(s: &PooledCovariance, lambda: f64) -> Result<RegularizedCovariance> {
    check_unit_interval(lambda)?;
    let p = s.p();
    let matrix = &s.matrix * lambda + DMatrix::<f64>::identity(p, p) * (1.0 - lambda);
    RegularizedCovariance::build(matrix, lambda, RegularizationForm::Ridge, s.convention, lambda < 1.0)
}

/// `d^T S~^{-1} d` as `|L^{-1} d|^2`.
pub fn mahalanobis_sq(cov: &RegularizedCovariance, d: &DVector<f64>) -> f64 {
    cov.whiten(d).norm_squared()
}

/// Analytic shrinkage intensity toward a fixed target.
///
/// `lambda = sum_ij Var(s_ij) / sum_ij (s_ij - t_ij)^2`, clipped to `[0, 1]`,
/// with `S` the within-group covariance and `Var(s_ij)` estimated from the
/// spread of the per-observation products `x~_ia x~_ib` of group-centred rows.
/// Returns 1 when `S` already equals the target.
pub fn lw_lambda(data: &GroupedDataset, target: &ShrinkageTarget) -> Result<f64> {
    let (n, k) = (data.n(), data.k());
    if n < 2 {
        return Err(Error::InsufficientObservations("need at least 2 observations".into()));
    }
    if n <= k {
        return Err(Error::InsufficientObservations(format!("need more observations than groups (n = {n}, K = {k})")));
    }
    let means = crate::datamodel::group_means(data);
    let r = centered(data, &means, CovarianceConvention::WithinGroup);
    let gram = r.tr_mul(&r);
    let dof = (n - k) as f64;
    let s = &gram / dof;
    let t = target.materialize(&s)?;

    // sum_ij sum_i (w_iab - wbar_ab)^2 = sum_i |x~_i|^4 - n sum_ab wbar_ab^2, wbar = gram / n.
    let fourth: f64 = r.row_iter().map(|row| row.norm_squared().powi(2)).sum();
    let spread = (fourth - gram.norm_squared() / n as f64).max(0.0);
    let var_sum = n as f64 / (dof * dof * (n as f64 - 1.0)) * spread;
    let distance = (&s - &t).norm_squared();
    if distance <= f64::MIN_POSITIVE {
        return Ok(1.0);
    }
    Ok((var_sum / distance).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{group_means, simulate, SimulationConfig};

    fn data(rows: &[&[f64]], labels: &[usize]) -> GroupedDataset {
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        GroupedDataset::new(
            DMatrix::from_row_slice(rows.len(), p, &flat),
            labels.to_vec(),
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn pseudo(i: usize, j: usize) -> f64 {
        (((i * 31 + j * 17) % 23) as f64 * 0.37).sin() * 2.0 + ((i + 2 * j) % 5) as f64 * 0.1
    }

    #[test]
    fn single_group_two_points() {
        // A dummy second group with two identical rows contributes nothing but a degree of freedom.
        let d = data(&[&[0.0, 0.0], &[2.0, 0.0], &[5.0, 5.0], &[5.0, 5.0]], &[0, 0, 1, 1]);
        let s = pooled_covariance(&d, &group_means(&d), CovarianceConvention::WithinGroup).unwrap();
        // Sum of squares is diag(2, 0); n - K = 2.
        assert_eq!(s.matrix, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn one_group_worked_example() {
        // Only group 0 has spread; with n - K = 1 the sum of squares is returned as is.
        let d = data(&[&[0.0, 0.0], &[2.0, 0.0], &[7.0, 7.0]], &[0, 0, 1]);
        let s = pooled_covariance(&d, &group_means(&d), CovarianceConvention::WithinGroup).unwrap();
        assert_eq!(s.matrix, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn identical_rows_give_zero() {
        let v = [1.0, 2.0, 3.0];
        let d = data(&[&v, &v, &v, &v], &[0, 1, 0, 1]);
        let m = group_means(&d);
        for c in [CovarianceConvention::WithinGroup, CovarianceConvention::GramPooledMean] {
            assert_eq!(pooled_covariance(&d, &m, c).unwrap().matrix, DMatrix::zeros(3, 3));
        }
    }

    #[test]
    fn insufficient_observations() {
        let d = data(&[&[0.0], &[1.0]], &[0, 1]);
        assert!(matches!(
            pooled_covariance(&d, &group_means(&d), CovarianceConvention::WithinGroup),
            Err(Error::InsufficientObservations(_))
        ));
    }

    #[test]
    fn matches_double_loop_oracle() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| (0..3).map(|j| pseudo(i, j)).collect()).collect();
        let labels = [0, 1, 1, 0, 0, 1, 0, 1];
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let d = data(&refs, &labels);
        let m = group_means(&d);
        let within = pooled_covariance(&d, &m, CovarianceConvention::WithinGroup).unwrap().matrix;
        let gram = pooled_covariance(&d, &m, CovarianceConvention::GramPooledMean).unwrap().matrix;
        for a in 0..3 {
            for b in 0..3 {
                let mut w = 0.0;
                let mut g = 0.0;
                for i in 0..8 {
                    let k = labels[i];
                    let gm = |j: usize| {
                        let idx: Vec<usize> = (0..8).filter(|&r| labels[r] == k).collect();
                        idx.iter().map(|&r| rows[r][j]).sum::<f64>() / idx.len() as f64
                    };
                    let pm = |j: usize| rows.iter().map(|r| r[j]).sum::<f64>() / 8.0;
                    w += (rows[i][a] - gm(a)) * (rows[i][b] - gm(b));
                    g += (rows[i][a] - pm(a)) * (rows[i][b] - pm(b));
                }
                assert!((within[(a, b)] - w / 6.0).abs() < 1e-12);
                assert!((gram[(a, b)] - g).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shrinkage_endpoints_and_midpoint() {
        let s = PooledCovariance::supplied(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let lo = shrink_covariance(&s, &ShrinkageTarget::Identity, 0.0).unwrap();
        assert_eq!(lo.matrix(), &s.matrix);
        let hi = shrink_covariance(&s, &ShrinkageTarget::Identity, 1.0).unwrap();
        assert_eq!(hi.matrix(), &DMatrix::identity(2, 2));
        let s2 = PooledCovariance::supplied(DMatrix::identity(2, 2) * 2.0);
        let mid = shrink_covariance(&s2, &ShrinkageTarget::Identity, 0.5).unwrap();
        assert_eq!(mid.matrix(), &(DMatrix::identity(2, 2) * 1.5));
        assert!(shrink_covariance(&s, &ShrinkageTarget::Identity, 1.5).is_err());
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let d = simulate(&SimulationConfig::with_sparse_shift(6, 6, 15, 1.0, 0.3, 2, 1.0, 3)).unwrap();
        let s = pooled_covariance(&d, &group_means(&d), CovarianceConvention::WithinGroup).unwrap();
        let cov = shrink_covariance(&s, &ShrinkageTarget::equal_correlation(0.15), 0.3).unwrap();
        let rebuilt = cov.factor() * cov.factor().transpose();
        assert!((rebuilt - cov.matrix()).norm() <= 1e-8 * cov.matrix().norm());
    }

    #[test]
    fn singular_unshrunk_matrix_is_a_distinct_error() {
        let s = PooledCovariance::supplied(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        let err = shrink_covariance(&s, &ShrinkageTarget::Identity, 0.0).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)));
        assert!(shrink_covariance(&s, &ShrinkageTarget::Identity, 0.01).is_ok());
    }

    #[test]
    fn ridge_examples() {
        let s = PooledCovariance::supplied(DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]));
        assert_eq!(ridge_covariance(&s, 0.0).unwrap().matrix(), &DMatrix::identity(2, 2));
        assert_eq!(ridge_covariance(&s, 1.0).unwrap().matrix(), &s.matrix);
        let singular = PooledCovariance::supplied(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        assert!(ridge_covariance(&singular, 1.0).is_err());
        for lambda in [0.0, 0.2, 0.75, 0.999] {
            let ridge = ridge_covariance(&s, lambda).unwrap();
            let shrunk = shrink_covariance(&s, &ShrinkageTarget::Identity, 1.0 - lambda).unwrap();
            assert!((ridge.matrix() - shrunk.matrix()).amax() < 1e-15);
            assert_eq!(ridge.form(), RegularizationForm::Ridge);
        }
    }

    #[test]
    fn equal_correlation_validity() {
        let s = DMatrix::identity(4, 4);
        assert!(ShrinkageTarget::EqualCorrelation { variance: Some(1.0), covariance: 1.0 }.materialize(&s).is_err());
        assert!(ShrinkageTarget::EqualCorrelation { variance: Some(1.0), covariance: -0.5 }.materialize(&s).is_err());
        let t = ShrinkageTarget::EqualCorrelation { variance: Some(1.0), covariance: -0.2 }.materialize(&s).unwrap();
        assert_eq!(t[(0, 1)], -0.2);
        let t = ShrinkageTarget::equal_correlation(0.15).materialize(&(DMatrix::identity(4, 4) * 2.0)).unwrap();
        assert_eq!((t[(0, 0)], t[(2, 1)]), (2.0, 0.15));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(ShrinkageTarget::Custom(asym).materialize(&DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn mahalanobis_examples() {
        let s = PooledCovariance::supplied(DMatrix::identity(2, 2));
        let cov = shrink_covariance(&s, &ShrinkageTarget::Identity, 0.3).unwrap();
        assert!((mahalanobis_sq(&cov, &DVector::from_column_slice(&[3.0, 4.0])) - 25.0).abs() < 1e-12);
        assert_eq!(mahalanobis_sq(&cov, &DVector::zeros(2)), 0.0);

        let b = DMatrix::from_fn(6, 6, pseudo);
        let m = &b * b.transpose() + DMatrix::identity(6, 6) * 0.1;
        let cov = shrink_covariance(&PooledCovariance::supplied(m.clone()), &ShrinkageTarget::Identity, 0.0).unwrap();
        let d = DVector::from_fn(6, |i, _| pseudo(i, 9) - 0.5);
        let oracle = (d.transpose() * m.try_inverse().unwrap() * &d)[(0, 0)];
        assert!((mahalanobis_sq(&cov, &d) - oracle).abs() < 1e-10 * oracle.max(1.0));
    }

    #[test]
    fn lw_lambda_one_dimensional() {
        let d = data(&[&[0.3], &[1.2], &[-0.4], &[2.0], &[2.5], &[1.1]], &[0, 0, 0, 1, 1, 1]);
        let l = lw_lambda(&d, &ShrinkageTarget::Identity).unwrap();
        assert!(l.is_finite() && (0.0..=1.0).contains(&l));
    }

    #[test]
    fn lw_lambda_needs_observations() {
        let d = data(&[&[0.3], &[1.2]], &[0, 1]);
        assert!(lw_lambda(&d, &ShrinkageTarget::Identity).is_err());
    }
}
