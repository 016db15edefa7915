//! Estimation under post-training rounding noise.
//!
//! Rounding is modelled as additive Gaussian noise on the parameter,
//! `xi = mu + tau` with `tau ~ N_p(0, delta^2 I)`, and data `X_i = xi + e_i`,
//! `e_i ~ N_p(0, sigma^2 I)`. Estimating `xi` is then ordinary conjugate
//! Bayesian estimation with the prior covariance inflated by `delta^2 I`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{posterior_mean_general, GaussianPrior, PosteriorSummary, ShrinkageWeight};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_lower, spd_solve};

#[derive(Debug, Clone, PartialEq)]
pub enum MeanSpec {
    /// Known parameter `mu`.
    Fixed(DVector<f64>),
    /// `mu ~ N_p(theta, psi)`.
    Random { theta: DVector<f64>, psi: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationScenario {
    pub mean: MeanSpec,
    pub sigma2: f64,
    pub delta2: f64,
    pub n: usize,
    pub p: usize,
}

impl QuantizationScenario {
    pub fn fixed(mu: DVector<f64>, sigma2: f64, delta2: f64, n: usize) -> Self {
        let p = mu.len();
        Self { mean: MeanSpec::Fixed(mu), sigma2, delta2, n, p }
    }

    pub fn random(theta: DVector<f64>, psi: DMatrix<f64>, sigma2: f64, delta2: f64, n: usize) -> Self {
        let p = theta.len();
        Self { mean: MeanSpec::Random { theta, psi }, sigma2, delta2, n, p }
    }

    /// `sigma^2 > 0`, `n >= 1`; `delta^2 > 0` for a fixed `mu`, `delta^2 >= 0`
    /// when `psi` already makes the prior proper.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma^2 = {} must be positive", self.sigma2)));
        }
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidParameter("n and p must be positive".into()));
        }
        if !(self.delta2 >= 0.0 && self.delta2.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta^2 = {} must be non-negative", self.delta2)));
        }
        match &self.mean {
            MeanSpec::Fixed(mu) => {
                check_dim(self.p, mu.len())?;
                if self.delta2 == 0.0 {
                    return Err(Error::InvalidParameter("delta^2 must be positive for a fixed mu".into()));
                }
            }
            MeanSpec::Random { theta, psi } => {
                check_dim(self.p, theta.len())?;
                check_dim(self.p, psi.nrows())?;
                cholesky_lower(psi, false, "psi")?;
            }
        }
        Ok(())
    }

    fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::identity(self.p, self.p) * self.sigma2
    }
}

/// Mean and covariance of `xi = mu + tau`, assembled component by component
/// from the independent parts `mu` and `tau`.
pub fn implied_xi_prior(scenario: &QuantizationScenario) -> (DVector<f64>, DMatrix<f64>) {
    let p = scenario.p;
    let tau_cov = DMatrix::identity(p, p) * scenario.delta2;
    match &scenario.mean {
        MeanSpec::Fixed(mu) => (mu.clone(), DMatrix::zeros(p, p) + tau_cov),
        MeanSpec::Random { theta, psi } => (theta.clone(), psi + tau_cov),
    }
}

/// Posterior mean of `xi` for a known `mu`: prior `N(mu, delta^2 I)`,
/// likelihood `N(xi, sigma^2 I)`. Closed form with scalar weight
/// `(sigma^2 / n) / (sigma^2 / n + delta^2)` on `mu`.
pub fn posterior_xi_fixed_mu(xbar: &DVector<f64>, scenario: &QuantizationScenario) -> Result<PosteriorSummary> {
    scenario.validate()?;
    let MeanSpec::Fixed(mu) = &scenario.mean else {
        return Err(Error::InvalidParameter("scenario has a random mu".into()));
    };
    check_dim(scenario.p, xbar.len())?;
    let a = scenario.sigma2 / scenario.n as f64;
    let weight = a / (a + scenario.delta2);
    let mean = xbar * (1.0 - weight) + mu * weight;
    Ok(PosteriorSummary { mean, shrinkage: ShrinkageWeight::Scalar(weight) })
}

/// Posterior mean of `xi` when `mu ~ N(theta, psi)`: conjugate update with the
/// prior `N(theta, psi + delta^2 I)`.
pub fn posterior_xi_random_mu(xbar: &DVector<f64>, scenario: &QuantizationScenario) -> Result<PosteriorSummary> {
    scenario.validate()?;
    let MeanSpec::Random { theta, psi } = &scenario.mean else {
        return Err(Error::InvalidParameter("scenario has a fixed mu".into()));
    };
    check_dim(scenario.p, xbar.len())?;
    let inflated = psi + DMatrix::identity(scenario.p, scenario.p) * scenario.delta2;
    let prior = GaussianPrior::with_covariance(theta.clone(), inflated);
    posterior_mean_general(xbar, scenario.n, &scenario.noise_covariance(), &prior)
}

/// `E[xi | xbar]` computed as `E[mu | xbar] + E[tau | xbar]` by conditioning
/// the joint Gaussian of `(mu, tau, xbar)`; no closed form is assumed.
pub fn posterior_xi_by_components(xbar: &DVector<f64>, scenario: &QuantizationScenario) -> Result<DVector<f64>> {
    scenario.validate()?;
    check_dim(scenario.p, xbar.len())?;
    let p = scenario.p;
    let (mu_mean, mu_cov) = match &scenario.mean {
        MeanSpec::Fixed(mu) => (mu.clone(), DMatrix::zeros(p, p)),
        MeanSpec::Random { theta, psi } => (theta.clone(), psi.clone()),
    };
    let tau_cov = DMatrix::identity(p, p) * scenario.delta2;
    // xbar = mu + tau + ebar; Cov(xbar) = Cov(mu) + Cov(tau) + sigma^2 / n I.
    let xbar_cov = &mu_cov + &tau_cov + scenario.noise_covariance() / scenario.n as f64;
    let (l, _) = cholesky_lower(&xbar_cov, false, "marginal covariance")?;
    let resid = DMatrix::from_column_slice(p, 1, (xbar - &mu_mean).as_slice());
    let z = spd_solve(&l, &resid).column(0).into_owned();
    let mu_post = &mu_mean + &mu_cov * &z;
    let tau_post = &tau_cov * &z;
    Ok(mu_post + tau_post)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationReport {
    pub mse_naive: f64,
    pub mse_posterior: f64,
    pub replications: usize,
    pub seed: u64,
    pub sigma2: f64,
    pub delta2: f64,
    pub n: usize,
    pub p: usize,
    /// One `tau` draw per replication.
    pub tau_draws: Vec<Vec<f64>>,
}

/// Monte Carlo comparison of the sample mean and the posterior mean as
/// estimators of `xi`. Replication `r` draws from ChaCha8 stream `r` of `seed`,
/// so results do not depend on scheduling. Errors are squared Euclidean norms
/// averaged over replications.
pub fn demo_quantization(scenario: &QuantizationScenario, replications: usize, seed: u64) -> Result<QuantizationReport> {
    scenario.validate()?;
    if replications == 0 {
        return Err(Error::InvalidParameter("replications must be positive".into()));
    }
    let p = scenario.p;
    let psi_factor = match &scenario.mean {
        MeanSpec::Random { psi, .. } => Some(cholesky_lower(psi, false, "psi")?.0),
        MeanSpec::Fixed(_) => None,
    };
    let sigma = scenario.sigma2.sqrt();
    let delta = scenario.delta2.sqrt();

    let runs: Vec<Result<(f64, f64, Vec<f64>)>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut normals = |len: usize| DVector::<f64>::from_fn(len, |_, _| StandardNormal.sample(&mut rng));
            let mu = match (&scenario.mean, &psi_factor) {
                (MeanSpec::Fixed(mu), _) => mu.clone(),
                (MeanSpec::Random { theta, .. }, Some(l)) => theta + l * normals(p),
                (MeanSpec::Random { .. }, None) => unreachable!(),
            };
            let tau = normals(p) * delta;
            let xi = &mu + &tau;
            let mut xbar = DVector::zeros(p);
            for _ in 0..scenario.n {
                xbar += &xi + normals(p) * sigma;
            }
            xbar /= scenario.n as f64;
            let post = match scenario.mean {
                MeanSpec::Fixed(_) => posterior_xi_fixed_mu(&xbar, scenario)?,
                MeanSpec::Random { .. } => posterior_xi_random_mu(&xbar, scenario)?,
            };
            Ok(((&xbar - &xi).norm_squared(), (&post.mean - &xi).norm_squared(), tau.as_slice().to_vec()))
        })
        .collect();

    let mut mse_naive = 0.0;
    let mut mse_posterior = 0.0;
    let mut tau_draws = Vec::with_capacity(replications);
    for run in runs {
        let (a, b, tau) = run?;
        mse_naive += a;
        mse_posterior += b;
        tau_draws.push(tau);
    }
    Ok(QuantizationReport {
        mse_naive: mse_naive / replications as f64,
        mse_posterior: mse_posterior / replications as f64,
        replications,
        seed,
        sigma2: scenario.sigma2,
        delta2: scenario.delta2,
        n: scenario.n,
        p,
        tau_draws,
    })
}
