//! From-scratch learners: a one-hidden-layer perceptron for the stability
//! flag and a one-vs-one quadratic-kernel SVM for the time-of-instability
//! class, plus cross-validation, grid search and model persistence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod cv;
pub mod knn;
pub mod mlp;
pub mod persist;
pub mod svm;

pub use cv::{cross_validate, fold_assignment, grid_search, CvResult, GridPoint, GridResult};
pub use knn::KnnModel;
pub use mlp::{predict_mlp, train_mlp, MlpModel, MlpPrediction};
pub use persist::{load_model, save_model, TrainedModels, FORMAT_VERSION};
pub use svm::{predict_svm, train_svm_ovo, SvmBinaryModel, SvmMulticlassModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Scaled conjugate gradient.
    Scg,
    /// Full-batch gradient descent with backtracking line search.
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub loss_tol: f64,
    pub optimizer: Optimizer,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 10,
            max_epochs: 2000,
            loss_tol: 1e-6,
            optimizer: Optimizer::Scg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub c_grid: Vec<f64>,
    pub scale_grid: Vec<f64>,
    /// Cost multiplier per class label; missing labels weigh 1.
    pub class_costs: BTreeMap<String, f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub k_folds: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            scale_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            class_costs: BTreeMap::new(),
            tol: 1e-3,
            max_iter: 1_000_000,
            k_folds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub mlp: MlpConfig,
    pub svm: SvmConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            mlp: MlpConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mlp.hidden == 0 {
            return Err(Error::Config("mlp.hidden must be positive".into()));
        }
        if self.svm.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be at least 2, got {}", self.svm.k_folds)));
        }
        if self.svm.c_grid.is_empty() || self.svm.scale_grid.is_empty() {
            return Err(Error::Config("svm grids must be non-empty".into()));
        }
        if self.svm.c_grid.iter().chain(&self.svm.scale_grid).any(|&v| !(v > 0.0)) {
            return Err(Error::Config("svm grid values must be positive".into()));
        }
        if self.svm.class_costs.values().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("class costs must be positive".into()));
        }
        if !(self.svm.tol > 0.0) {
            return Err(Error::Config("svm.tol must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map(Vec::len).ok_or_else(|| Error::EmptyInput("no training rows".into()))?;
    for r in x {
        if r.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training input".into()));
        }
    }
    Ok(d)
}
