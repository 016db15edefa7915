//! Bayesian shrinkage estimators and regularized linear discriminant
//! analysis for data with many more variables than observations.

pub mod bayes;
pub mod covariance;
pub mod datamodel;
pub mod error;
mod linalg;
pub mod persist;
pub mod quantization;
pub mod regmeans;
pub mod rlda;
pub mod selection;

pub use covariance::{CovarianceConvention, PooledCovariance, RegularizedCovariance, ShrinkageTarget};
pub use datamodel::{GroupMeans, GroupedDataset, SimulationConfig};
pub use error::{Error, Result};
pub use regmeans::{MeanRegKind, MeanRegularizer};
pub use rlda::{PriorSpec, RldaConfig, RldaModel, SvdMode};
pub use selection::{CvConfig, CvResult, LambdaSelection};

pub use nalgebra::{DMatrix, DVector};
