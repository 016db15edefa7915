//! Regularized group means: shrinkage toward the pooled mean, soft
//! thresholding and hard thresholding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datamodel::GroupMeans;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "delta", rename_all = "kebab-case")]
pub enum MeanRegularizer {
    None,
    /// `(1 - delta) xbar_k + delta xbar`, `delta` in `[0, 1]`.
    L2(f64),
    /// `sgn(x) max(|x| - delta, 0)` coordinate-wise.
    Soft(f64),
    /// `x 1[|x| > delta]` coordinate-wise.
    Hard(f64),
}

/// Regularizer family without its parameter, used to drive grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanRegKind {
    None,
    L2,
    Soft,
    Hard,
}

impl MeanRegKind {
    pub fn with_delta(self, delta: f64) -> MeanRegularizer {
        match self {
            Self::None => MeanRegularizer::None,
            Self::L2 => MeanRegularizer::L2(delta),
            Self::Soft => MeanRegularizer::Soft(delta),
            Self::Hard => MeanRegularizer::Hard(delta),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::None => "-",
            Self::L2 => "L2",
            Self::Soft => "L1",
            Self::Hard => "hard",
        }
    }

    /// Default CV grid for `delta`. Thresholds are quantiles of the absolute
    /// group-mean coordinates so they follow the scale of the data.
    pub fn default_grid(self, means: &GroupMeans) -> Vec<f64> {
        match self {
            Self::None => vec![0.0],
            Self::L2 => (0..10).map(|i| i as f64 / 10.0).collect(),
            Self::Soft | Self::Hard => {
                let mut abs: Vec<f64> = means.per_group.iter().map(|v| v.abs()).collect();
                abs.sort_by(f64::total_cmp);
                [0.0, 0.5, 0.75, 0.9, 0.95, 0.99].iter().map(|&q| if q == 0.0 { 0.0 } else { quantile(&abs, q) }).collect()
            }
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl MeanRegularizer {
    pub fn kind(&self) -> MeanRegKind {
        match self {
            Self::None => MeanRegKind::None,
            Self::L2(_) => MeanRegKind::L2,
            Self::Soft(_) => MeanRegKind::Soft,
            Self::Hard(_) => MeanRegKind::Hard,
        }
    }

    pub fn delta(&self) -> Option<f64> {
        match *self {
            Self::None => None,
            Self::L2(d) | Self::Soft(d) | Self::Hard(d) => Some(d),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::None => Ok(()),
            Self::L2(d) if (0.0..=1.0).contains(&d) => Ok(()),
            Self::Soft(d) | Self::Hard(d) if d >= 0.0 && d.is_finite() => Ok(()),
            other => Err(Error::InvalidParameter(format!("invalid mean regularizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedMeans {
    /// `K x p`, one regularized mean per row.
    pub per_group: DMatrix<f64>,
    /// Variable kept iff non-zero in at least one group.
    pub active_mask: Vec<bool>,
}

impl RegularizedMeans {
    pub fn group(&self, k: usize) -> DVector<f64> {
        self.per_group.row(k).transpose()
    }

    pub fn active_count(&self) -> usize {
        self.active_mask.iter().filter(|&&a| a).count()
    }
}

pub fn soft_threshold(x: f64, delta: f64) -> f64 {
    x.signum() * (x.abs() - delta).max(0.0)
}

/// Keeps `x` only when `|x| > delta`; the boundary is zeroed.
pub fn hard_threshold(x: f64, delta: f64) -> f64 {
    if x.abs() > delta {
        x
    } else {
        0.0
    }
}

pub fn regularize_means(means: &GroupMeans, reg: &MeanRegularizer) -> Result<RegularizedMeans> {
    reg.validate()?;
    let per_group = match *reg {
        MeanRegularizer::None => means.per_group.clone(),
        MeanRegularizer::L2(d) => {
            let mut out = &means.per_group * (1.0 - d);
            for mut row in out.row_iter_mut() {
                row += means.pooled.transpose() * d;
            }
            out
        }
        MeanRegularizer::Soft(d) => means.per_group.map(|x| soft_threshold(x, d)),
        MeanRegularizer::Hard(d) => means.per_group.map(|x| hard_threshold(x, d)),
    };
    let active_mask = match reg.kind() {
        MeanRegKind::None | MeanRegKind::L2 => vec![true; per_group.ncols()],
        _ => per_group.column_iter().map(|c| c.iter().any(|&v| v != 0.0)).collect(),
    };
    Ok(RegularizedMeans { per_group, active_mask })
}

/// Thresholds `xbar_kj / scale_j` and maps back, so one `delta` applies
/// uniformly to variables on different scales. `L2` and `None` are unaffected.
pub fn regularize_means_standardized(means: &GroupMeans, reg: &MeanRegularizer, scale: &DVector<f64>) -> Result<RegularizedMeans> {
    check_dim(means.pooled.len(), scale.len())?;
    if scale.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(Error::InvalidParameter("standardization scales must be positive".into()));
    }
    if matches!(reg.kind(), MeanRegKind::None | MeanRegKind::L2) {
        return regularize_means(means, reg);
    }
    let mut scaled = means.clone();
    for mut row in scaled.per_group.row_iter_mut() {
        row.component_div_assign(&scale.transpose());
    }
    let mut out = regularize_means(&scaled, reg)?;
    for mut row in out.per_group.row_iter_mut() {
        row.component_mul_assign(&scale.transpose());
    }
    Ok(out)
}
