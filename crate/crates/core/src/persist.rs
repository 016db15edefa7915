//! Versioned JSON model documents.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceConvention, RegularizationForm, RegularizedCovariance};
use crate::datamodel::GroupMeans;
use crate::error::{Error, Result};
use crate::regmeans::RegularizedMeans;
use crate::rlda::{RldaConfig, RldaModel, SvdMode, SvdRidgeModel};

pub const MODEL_FORMAT: &str = "rlda-model";
pub const MODEL_VERSION: u32 = 1;

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidData("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyBody {
    pub config: RldaConfig,
    pub lambda: f64,
    pub convention: CovarianceConvention,
    /// Lower factor of the regularized covariance, row-major.
    pub factor: Vec<Vec<f64>>,
    pub regularized_means: Vec<Vec<f64>>,
    pub active_mask: Vec<bool>,
    pub pooled_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdBody {
    pub lambda: f64,
    pub delta: f64,
    pub mode: SvdMode,
    pub singular_values: Vec<f64>,
    /// `p x r`, row-major.
    pub right_vectors: Vec<Vec<f64>>,
    pub column_variances: Vec<f64>,
    pub group_means: Vec<Vec<f64>>,
    pub pooled_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum ModelBody {
    Chol(CholeskyBody),
    Svd(SvdBody),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    /// Seed of the invocation that produced the model, for replication.
    #[serde(default)]
    pub seed: u64,
    pub group_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub priors: Vec<f64>,
    pub model: ModelBody,
}

/// Either fitted classifier, restored from a document.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Chol(RldaModel),
    Svd { model: SvdRidgeModel, delta: f64 },
}

impl ModelDocument {
    fn wrap(group_names: Vec<String>, feature_names: Vec<String>, priors: Vec<f64>, model: ModelBody) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: 0,
            group_names,
            feature_names,
            priors,
            model,
        }
    }

    pub fn from_cholesky(model: &RldaModel, feature_names: Vec<String>) -> Self {
        let cov = model.covariance();
        let body = CholeskyBody {
            config: model.config().clone(),
            lambda: cov.lambda(),
            convention: cov.convention(),
            factor: rows_of(cov.factor()),
            regularized_means: rows_of(&model.regularized_means().per_group),
            active_mask: model.regularized_means().active_mask.clone(),
            pooled_mean: model.pooled_mean().iter().copied().collect(),
        };
        Self::wrap(model.group_names().to_vec(), feature_names, model.priors().to_vec(), ModelBody::Chol(body))
    }

    pub fn from_svd(
        model: &SvdRidgeModel,
        delta: f64,
        priors: Vec<f64>,
        group_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Self {
        let body = SvdBody {
            lambda: model.lambda(),
            delta,
            mode: model.mode(),
            singular_values: model.singular_values().iter().copied().collect(),
            right_vectors: rows_of(model.right_vectors()),
            column_variances: model.column_variances().iter().copied().collect(),
            group_means: rows_of(&model.means().per_group),
            pooled_mean: model.means().pooled.iter().copied().collect(),
        };
        Self::wrap(group_names, feature_names, priors, ModelBody::Svd(body))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::InvalidData(format!("not a model document (format '{}')", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::InvalidData(format!("unsupported model version {}", doc.version)));
        }
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn p(&self) -> usize {
        match &self.model {
            ModelBody::Chol(b) => b.pooled_mean.len(),
            ModelBody::Svd(b) => b.pooled_mean.len(),
        }
    }

    pub fn restore(&self) -> Result<LoadedModel> {
        match &self.model {
            ModelBody::Chol(b) => {
                let factor = matrix_from_rows(&b.factor)?;
                let cov = RegularizedCovariance::from_factor(factor, b.lambda, RegularizationForm::Shrinkage, b.convention)?;
                let reg = RegularizedMeans { per_group: matrix_from_rows(&b.regularized_means)?, active_mask: b.active_mask.clone() };
                let model = RldaModel::from_parts(
                    reg,
                    DVector::from_vec(b.pooled_mean.clone()),
                    cov,
                    self.priors.clone(),
                    b.config.clone(),
                    self.group_names.clone(),
                )?;
                Ok(LoadedModel::Chol(model))
            }
            ModelBody::Svd(b) => {
                let means = GroupMeans {
                    pooled: DVector::from_vec(b.pooled_mean.clone()),
                    per_group: matrix_from_rows(&b.group_means)?,
                };
                crate::error::check_dim(self.group_names.len(), means.per_group.nrows())?;
                let model = SvdRidgeModel::from_parts(
                    matrix_from_rows(&b.right_vectors)?,
                    DVector::from_vec(b.singular_values.clone()),
                    DVector::from_vec(b.column_variances.clone()),
                    b.lambda,
                    b.mode,
                    means,
                )?;
                crate::rlda::check_priors(&self.priors, self.group_names.len())?;
                Ok(LoadedModel::Svd { model, delta: b.delta })
            }
        }
    }
}

impl LoadedModel {
    pub fn classify(&self, z: &DVector<f64>, priors: &[f64]) -> Result<usize> {
        match self {
            Self::Chol(m) => {
                crate::error::check_dim(m.p(), z.len())?;
                Ok(m.classify(z))
            }
            Self::Svd { model, delta } => crate::rlda::classify_alg2(model, *delta, priors, z),
        }
    }

    pub fn classify_rows(&self, rows: &DMatrix<f64>, priors: &[f64]) -> Result<Vec<usize>> {
        match self {
            Self::Chol(m) => {
                crate::error::check_dim(m.p(), rows.ncols())?;
                Ok(m.classify_rows(rows))
            }
            Self::Svd { .. } => rows.row_iter().map(|r| self.classify(&r.transpose(), priors)).collect(),
        }
    }
}
