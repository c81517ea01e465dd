//! Binary classifiers over feature matrices, their metrics, and repeated
//! stratified cross-validation. Label 1 is the positive (malignant) class.

mod cv;
mod logistic;
mod metrics;
mod svm;

pub use cv::{
    cross_validate, cross_validate_with, fold_plan, stratified_folds, write_report_csv, write_report_table, ClassificationReport,
    CvConfig, ReportRow,
};
pub use logistic::{fit_elasticnet_logistic, fit_logistic, kkt_violation, lambda_grid, logistic_objective, LogisticModel};
pub use metrics::{auc, metrics, Metrics};
pub use svm::{fit_svm, Kernel, SvmModel, SVM_TOLERANCE};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("class {class} has {count} samples, fewer than {folds} folds")]
    TooFew { class: u8, count: usize, folds: usize },
    #[error("both classes are required: {0}")]
    OneClass(String),
    #[error("model grid: {0}")]
    Grid(String),
    #[error("report: {0}")]
    Report(String),
    #[error("featurization failed: {0}")]
    Featurize(String),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureBlock {
    Abcd,
    Cp,
    Both,
}

impl FeatureBlock {
    pub fn name(self) -> &'static str {
        match self {
            FeatureBlock::Abcd => "abcd",
            FeatureBlock::Cp => "cp",
            FeatureBlock::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
    pub block: FeatureBlock,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, labels: Vec<u8>, ids: Vec<String>, block: FeatureBlock) -> Result<Self> {
        check_xy(&x, &labels)?;
        if ids.len() != labels.len() {
            return Err(ClassifyError::Shape(format!("{} ids for {} rows", ids.len(), labels.len())));
        }
        Ok(Self { x, labels, ids, block })
    }
}

pub(crate) fn check_xy(x: &DMatrix<f64>, y: &[u8]) -> Result<()> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(ClassifyError::Shape(format!("{} rows for {} labels", x.nrows(), y.len())));
    }
    if let Some(bad) = y.iter().find(|&&l| l > 1) {
        return Err(ClassifyError::Data(format!("label {bad} is not 0 or 1")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifyError::Data("non-finite feature value".into()));
    }
    Ok(())
}

/// Per-column centering and scaling fitted on a subset of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population sd; constant columns keep scale 1.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>, rows: &[usize]) -> Self {
        let n = rows.len() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for c in 0..x.ncols() {
            let m = rows.iter().map(|&r| x[(r, c)]).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (x[(r, c)] - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), x.ncols(), |i, c| (x[(rows[i], c)] - self.mean[c]) / self.scale[c])
    }
}

/// One point of a classifier grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Logistic { alpha: f64 },
    SvmLinear { cost: f64 },
    SvmRbf { cost: f64, gamma: f64 },
    /// Kept in the schema; fitting it is an error.
    RandomForest { mtry: usize },
}

impl ModelSpec {
    pub fn model_name(&self) -> &'static str {
        match self {
            ModelSpec::Logistic { .. } => "logistic",
            ModelSpec::SvmLinear { .. } => "svm_linear",
            ModelSpec::SvmRbf { .. } => "svm_rbf",
            ModelSpec::RandomForest { .. } => "random_forest",
        }
    }

    pub fn tuning(&self) -> String {
        match self {
            ModelSpec::Logistic { alpha } => format!("alpha={alpha}"),
            ModelSpec::SvmLinear { cost } => format!("cost={cost}"),
            ModelSpec::SvmRbf { cost, gamma } => format!("cost={cost};gamma={gamma}"),
            ModelSpec::RandomForest { mtry } => format!("mtry={mtry}"),
        }
    }

    /// Decision scores for `x_test` and the threshold at or above which a
    /// score is called positive.
    pub fn fit_score(&self, x: &DMatrix<f64>, y: &[u8], x_test: &DMatrix<f64>, seed: u64) -> Result<(Vec<f64>, f64)> {
        match *self {
            ModelSpec::Logistic { alpha } => {
                let m = fit_elasticnet_logistic(x, y, alpha, seed)?;
                Ok((m.predict_proba(x_test), 0.5))
            }
            ModelSpec::SvmLinear { cost } => Ok((fit_svm(x, y, Kernel::Linear, cost)?.decision(x_test), 0.0)),
            ModelSpec::SvmRbf { cost, gamma } => Ok((fit_svm(x, y, Kernel::Rbf { gamma }, cost)?.decision(x_test), 0.0)),
            ModelSpec::RandomForest { .. } => Err(ClassifyError::Grid("random forest is reserved and not implemented".into())),
        }
    }
}

/// Linear models α ∈ {0, 0.5, 1}; linear SVM with cost ∈ {0.01, 0.1, 1, 10};
/// radial SVM over the same costs × gamma ∈ {0.01, 0.1, 1, 10}.
pub fn table2_grid() -> Vec<ModelSpec> {
    const COSTS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
    let mut g: Vec<ModelSpec> = [0.0, 0.5, 1.0].into_iter().map(|alpha| ModelSpec::Logistic { alpha }).collect();
    g.extend(COSTS.iter().map(|&cost| ModelSpec::SvmLinear { cost }));
    for &cost in &COSTS {
        for gamma in COSTS {
            g.push(ModelSpec::SvmRbf { cost, gamma });
        }
    }
    g
}
