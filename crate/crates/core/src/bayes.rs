//! Conjugate-normal posterior means, the James-Stein estimator, and the
//! two-sample shrunken means.
//!
//! Every posterior mean here is written as `(I - D) xbar + D theta`, where
//! `D = (n Sigma^{-1} + eta^{-1})^{-1} eta^{-1}` is the weight on the prior
//! mean. With `A = Sigma / n` this equals `A (A + eta)^{-1}`, so a single
//! Cholesky solve against `A + eta` replaces every inverse.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_lower, spd_solve};

/// Spread of a Gaussian prior on the mean.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpread {
    /// Prior covariance `eta` (or `Upsilon`), symmetric positive definite.
    Covariance(DMatrix<f64>),
    /// Prior precision `c * Sigma^{-1}` tied to the likelihood covariance.
    ScaledPrecision(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub theta: DVector<f64>,
    pub spread: PriorSpread,
}

impl GaussianPrior {
    pub fn with_covariance(theta: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self { theta, spread: PriorSpread::Covariance(covariance) }
    }

    pub fn scaled_precision(theta: DVector<f64>, c: f64) -> Self {
        Self { theta, spread: PriorSpread::ScaledPrecision(c) }
    }

    fn covariance(&self, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.spread {
            PriorSpread::Covariance(eta) => {
                check_dim(self.theta.len(), eta.nrows())?;
                check_dim(self.theta.len(), eta.ncols())?;
                cholesky_lower(eta, false, "prior covariance")?;
                Ok(eta.clone())
            }
            PriorSpread::ScaledPrecision(c) => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidParameter(format!("prior scale c = {c} must be positive")));
                }
                Ok(sigma / *c)
            }
        }
    }
}

/// Weight applied to the prior mean.
#[derive(Debug, Clone, PartialEq)]
pub enum ShrinkageWeight {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl ShrinkageWeight {
    pub fn as_matrix(&self, p: usize) -> DMatrix<f64> {
        match self {
            Self::Scalar(d) => DMatrix::identity(p, p) * *d,
            Self::Matrix(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: DVector<f64>,
    pub shrinkage: ShrinkageWeight,
}

impl Serialize for PosteriorSummary {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        #[serde(rename_all = "snake_case")]
        enum Weight {
            Scalar(f64),
            Matrix(Vec<Vec<f64>>),
        }
        #[derive(Serialize)]
        struct Repr<'a> {
            mean: &'a [f64],
            shrinkage: Weight,
        }
        let shrinkage = match &self.shrinkage {
            ShrinkageWeight::Scalar(d) => Weight::Scalar(*d),
            ShrinkageWeight::Matrix(m) => {
                Weight::Matrix((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
            }
        };
        Repr { mean: self.mean.as_slice(), shrinkage }.serialize(serializer)
    }
}

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidParameter("sample count must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Posterior mean of `mu` for `xbar` averaged over `n` draws from
/// `N_p(mu, sigma)` under the prior `mu ~ N_p(theta, eta)`.
pub fn posterior_mean_general(
    xbar: &DVector<f64>,
    n: usize,
    sigma: &DMatrix<f64>,
    prior: &GaussianPrior,
) -> Result<PosteriorSummary> {
    check_count(n)?;
    let p = xbar.len();
    check_dim(p, sigma.nrows())?;
    check_dim(p, sigma.ncols())?;
    check_dim(p, prior.theta.len())?;
    cholesky_lower(sigma, false, "covariance")?;
    let eta = prior.covariance(sigma)?;

    let a = sigma / n as f64;
    let (l, _) = cholesky_lower(&(&a + &eta), false, "posterior precision")?;
    // (A + eta)^{-1} A, transposed.
    let weight = spd_solve(&l, &a).transpose();
    let mean = xbar - &weight * (xbar - &prior.theta);
    Ok(PosteriorSummary { mean, shrinkage: ShrinkageWeight::Matrix(weight) })
}

/// Closed form when the prior precision is `c * Sigma^{-1}`: the shrinkage
/// weight is the scalar `c / (n + c)` and `Sigma` drops out.
pub fn posterior_mean_conjugate_scalar(
    xbar: &DVector<f64>,
    n: usize,
    c: f64,
    theta: &DVector<f64>,
) -> Result<PosteriorSummary> {
    check_count(n)?;
    check_dim(xbar.len(), theta.len())?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("c = {c} must be positive")));
    }
    let delta = c / (n as f64 + c);
    let mean = xbar * (1.0 - delta) + theta * delta;
    Ok(PosteriorSummary { mean, shrinkage: ShrinkageWeight::Scalar(delta) })
}

/// Plain James-Stein estimate `(1 - (p - 2) sigma^2 / |x|^2) x` of a single
/// observation `x ~ N_p(mu, sigma^2 I)`. The multiplier is not truncated at zero.
pub fn james_stein(x: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let p = x.len();
    if p < 3 {
        return Err(Error::InvalidParameter(format!("James-Stein needs p >= 3, got {p}")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma^2 = {sigma2} must be positive")));
    }
    let norm2 = x.norm_squared();
    if norm2 == 0.0 {
        return Err(Error::InvalidParameter("James-Stein is undefined at x = 0".into()));
    }
    Ok(x * (1.0 - (p - 2) as f64 * sigma2 / norm2))
}

/// Posterior means of two independent samples sharing `sigma` and the prior
/// `N_p(theta, Upsilon)`. Each summary carries its own weight matrix.
pub fn two_sample_posterior_means(
    xbar: &DVector<f64>,
    ybar: &DVector<f64>,
    n: usize,
    m: usize,
    sigma: &DMatrix<f64>,
    prior: &GaussianPrior,
) -> Result<(PosteriorSummary, PosteriorSummary)> {
    Ok((posterior_mean_general(xbar, n, sigma, prior)?, posterior_mean_general(ybar, m, sigma, prior)?))
}

/// Count-weighted mean of both samples; the usual choice of `theta`.
pub fn pooled_theta(xbar: &DVector<f64>, ybar: &DVector<f64>, n: usize, m: usize) -> DVector<f64> {
    (xbar * n as f64 + ybar * m as f64) / (n + m) as f64
}

/// Univariate posterior mean, precision-weighted form:
/// `(n xbar / sigma^2 + theta / gamma^2) / (n / sigma^2 + 1 / gamma^2)`.
pub fn univariate_posterior_mean(xbar: f64, n: usize, sigma2: f64, theta: f64, gamma2: f64) -> f64 {
    let n = n as f64;
    (n * xbar / sigma2 + theta / gamma2) / (n / sigma2 + 1.0 / gamma2)
}

/// Same estimate from the raw sum: `(gamma^2 sum + theta sigma^2) / (n gamma^2 + sigma^2)`.
pub fn univariate_posterior_mean_from_sum(sum: f64, n: usize, sigma2: f64, theta: f64, gamma2: f64) -> f64 {
    (gamma2 * sum + theta * sigma2) / (n as f64 * gamma2 + sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn spd3(seed: f64) -> DMatrix<f64> {
        let b = DMatrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64 * 0.7 + seed).sin());
        &b * b.transpose() + DMatrix::identity(3, 3) * 0.5
    }

    /// Information form with explicit inverses.
    fn inverse_oracle(xbar: &DVector<f64>, n: usize, sigma: &DMatrix<f64>, theta: &DVector<f64>, eta: &DMatrix<f64>) -> DVector<f64> {
        let si = sigma.clone().try_inverse().unwrap();
        let ei = eta.clone().try_inverse().unwrap();
        let prec = &si * n as f64 + &ei;
        prec.try_inverse().unwrap() * (&si * xbar * n as f64 + &ei * theta)
    }

    #[test]
    fn fixed_point_at_prior_mean() {
        let theta = dv(&[1.0, -2.0, 0.5]);
        let prior = GaussianPrior::with_covariance(theta.clone(), spd3(0.3));
        let post = posterior_mean_general(&theta, 7, &spd3(1.1), &prior).unwrap();
        assert!((post.mean - theta).amax() < 1e-12);
    }

    #[test]
    fn equal_precision_average() {
        let x = dv(&[2.0, -4.0]);
        let prior = GaussianPrior::with_covariance(DVector::zeros(2), DMatrix::identity(2, 2));
        let post = posterior_mean_general(&x, 1, &DMatrix::identity(2, 2), &prior).unwrap();
        assert!((post.mean - dv(&[1.0, -2.0])).amax() < 1e-15);
    }

    #[test]
    fn general_matches_explicit_inverse() {
        let xbar = dv(&[0.4, -1.3, 2.2]);
        let theta = dv(&[-0.5, 0.1, 0.9]);
        let (sigma, eta) = (spd3(0.2), spd3(2.4));
        let prior = GaussianPrior::with_covariance(theta.clone(), eta.clone());
        let post = posterior_mean_general(&xbar, 5, &sigma, &prior).unwrap();
        assert!((post.mean - inverse_oracle(&xbar, 5, &sigma, &theta, &eta)).amax() < 1e-10);
    }

    #[test]
    fn conjugate_scalar_examples() {
        let theta = dv(&[1.0, 2.0]);
        let post = posterior_mean_conjugate_scalar(&dv(&[0.0, 0.0]), 4, 1.0, &theta).unwrap();
        assert_eq!(post.shrinkage, ShrinkageWeight::Scalar(0.2));
        let post = posterior_mean_conjugate_scalar(&(&theta * 2.0), 1, 1.0, &theta).unwrap();
        assert!((post.mean - &theta * 1.5).amax() < 1e-15);
        assert!(posterior_mean_conjugate_scalar(&theta, 1, 0.0, &theta).is_err());
        assert!(posterior_mean_conjugate_scalar(&theta, 0, 1.0, &theta).is_err());
    }

    #[test]
    fn scaled_precision_drops_sigma() {
        let xbar = dv(&[0.4, -1.3, 2.2]);
        let theta = dv(&[-0.5, 0.1, 0.9]);
        for (seed, c, n) in [(0.1, 0.5, 3), (1.7, 2.0, 10), (3.3, 9.0, 1)] {
            let general = posterior_mean_general(&xbar, n, &spd3(seed), &GaussianPrior::scaled_precision(theta.clone(), c)).unwrap();
            let scalar = posterior_mean_conjugate_scalar(&xbar, n, c, &theta).unwrap();
            assert!((general.mean - scalar.mean).amax() < 1e-10);
        }
    }

    #[test]
    fn james_stein_examples() {
        let out = james_stein(&dv(&[1.0, 0.0, 0.0]), 1.0).unwrap();
        assert!(out.amax() < 1e-15);
        let out = james_stein(&dv(&[2.0, 0.0, 0.0, 0.0]), 1.0).unwrap();
        assert!((out - dv(&[1.0, 0.0, 0.0, 0.0])).amax() < 1e-15);
        assert!(james_stein(&dv(&[1.0, 2.0]), 1.0).is_err());
        assert!(james_stein(&DVector::zeros(5), 1.0).is_err());
    }

    #[test]
    fn james_stein_norm_identity() {
        for (x, s2) in [(dv(&[0.3, -0.1, 0.2, 0.05]), 1.0), (dv(&[4.0, 1.0, -2.0]), 0.7), (dv(&[0.1; 10]), 2.0)] {
            let js = james_stein(&x, s2).unwrap();
            let factor = (1.0 - (x.len() - 2) as f64 * s2 / x.norm_squared()).abs();
            assert!((js.norm() - factor * x.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn univariate_two_sample_reduces_to_scalar_form() {
        // n = 1 and sigma = gamma: simple average of xbar and theta.
        let sigma = DMatrix::from_element(1, 1, 2.0);
        let prior = GaussianPrior::with_covariance(dv(&[3.0]), DMatrix::from_element(1, 1, 2.0));
        let (px, py) = two_sample_posterior_means(&dv(&[5.0]), &dv(&[-1.0]), 1, 1, &sigma, &prior).unwrap();
        assert!((px.mean[0] - 4.0).abs() < 1e-14);
        assert!((py.mean[0] - 1.0).abs() < 1e-14);

        let (s2, g2) = (1.7, 0.4);
        let prior = GaussianPrior::with_covariance(dv(&[0.3]), DMatrix::from_element(1, 1, g2));
        let (px, _) = two_sample_posterior_means(&dv(&[1.2]), &dv(&[0.0]), 6, 2, &DMatrix::from_element(1, 1, s2), &prior).unwrap();
        assert!((px.mean[0] - univariate_posterior_mean(1.2, 6, s2, 0.3, g2)).abs() < 1e-14);
    }

    #[test]
    fn univariate_forms_agree() {
        for (xbar, n, s2, theta, g2) in [(1.0, 3, 2.0, 0.0, 1.0), (-2.5, 11, 0.3, 1.5, 4.0), (0.7, 1, 9.0, -3.0, 0.01)] {
            let a = univariate_posterior_mean(xbar, n, s2, theta, g2);
            let b = univariate_posterior_mean_from_sum(xbar * n as f64, n, s2, theta, g2);
            assert!((a - b).abs() < 1e-13 * a.abs().max(1.0));
        }
    }

    #[test]
    fn common_weight_for_scaled_prior_and_equal_sizes() {
        let c = 3.0;
        let n = 6;
        let prior = GaussianPrior::scaled_precision(DVector::zeros(3), c);
        let (px, py) = two_sample_posterior_means(&dv(&[1.0, 2.0, 3.0]), &dv(&[0.0, 1.0, -1.0]), n, n, &spd3(0.9), &prior).unwrap();
        let expected = DMatrix::identity(3, 3) * (c / (n as f64 + c));
        assert!((px.shrinkage.as_matrix(3) - &expected).amax() < 1e-12);
        assert!((py.shrinkage.as_matrix(3) - &expected).amax() < 1e-12);
    }

    #[test]
    fn elegant_form_equals_direct_formula() {
        let (xbar, ybar) = (dv(&[0.4, -1.3, 2.2]), dv(&[1.1, 0.0, -0.7]));
        let (n, m) = (5, 7);
        let sigma = spd3(0.6);
        let upsilon = spd3(1.9);
        let theta = pooled_theta(&xbar, &ybar, n, m);
        let prior = GaussianPrior::with_covariance(theta.clone(), upsilon.clone());
        let (px, py) = two_sample_posterior_means(&xbar, &ybar, n, m, &sigma, &prior).unwrap();
        for (post, bar, cnt) in [(&px, &xbar, n), (&py, &ybar, m)] {
            let direct = inverse_oracle(bar, cnt, &sigma, &theta, &upsilon);
            // weight matrix from its definition (n Sigma^-1 + U^-1)^-1 U^-1
            let si = sigma.clone().try_inverse().unwrap();
            let ui = upsilon.clone().try_inverse().unwrap();
            let delta = (&si * cnt as f64 + &ui).try_inverse().unwrap() * &ui;
            assert!((post.shrinkage.as_matrix(3) - &delta).amax() < 1e-10);
            let elegant = (DMatrix::identity(3, 3) - &delta) * bar + &delta * &theta;
            assert!((&elegant - &direct).amax() < 1e-10);
            assert!((&post.mean - &direct).amax() < 1e-10);
            // Delta is not symmetric, but its spectrum is real and inside (0, 1).
            let spectrum = delta.complex_eigenvalues();
            assert!(spectrum.iter().all(|z| z.im.abs() < 1e-10 && z.re > 0.0 && z.re < 1.0));
        }
    }

    #[test]
    fn posterior_converges_to_sample_mean() {
        let xbar = dv(&[0.4, -1.3, 2.2]);
        let prior = GaussianPrior::with_covariance(dv(&[5.0, 5.0, 5.0]), spd3(0.2));
        let sigma = spd3(1.0);
        let gaps: Vec<f64> = [1, 10, 100, 10_000]
            .iter()
            .map(|&n| (posterior_mean_general(&xbar, n, &sigma, &prior).unwrap().mean - &xbar).norm())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[3] < 1e-2);
    }

    #[test]
    fn rejects_non_pd_inputs() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let prior = GaussianPrior::with_covariance(DVector::zeros(2), DMatrix::identity(2, 2));
        let err = posterior_mean_general(&DVector::zeros(2), 3, &bad, &prior).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)));
        let prior = GaussianPrior::with_covariance(DVector::zeros(2), bad);
        assert!(posterior_mean_general(&DVector::zeros(2), 3, &DMatrix::identity(2, 2), &prior).is_err());
        let prior = GaussianPrior::with_covariance(DVector::zeros(2), DMatrix::identity(2, 2));
        assert!(posterior_mean_general(&DVector::zeros(2), 0, &DMatrix::identity(2, 2), &prior).is_err());
    }

    #[test]
    fn summary_json_shape() {
        let post = posterior_mean_conjugate_scalar(&dv(&[1.0]), 4, 1.0, &dv(&[0.0])).unwrap();
        let v = serde_json::to_value(&post).unwrap();
        assert_eq!(v["shrinkage"]["scalar"], 0.2);
        assert_eq!(v["mean"][0], 0.8);
    }
}
