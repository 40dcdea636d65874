use crate::data::Dataset;
use crate::fit::{fit, ModelSpec};

use super::{DiagnosticsError, FittedModel};

pub const DEFAULT_EDF_THRESHOLD: f64 = 0.5;

const RESIDUAL_COLUMN: &str = ".residual";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResmoothConfig {
    /// EDF above the minimum needed to flag the term.
    pub threshold: f64,
}

impl Default for ResmoothConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_EDF_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResmoothResult {
    /// EDF of the doubled-dimension smooth of the residuals.
    pub edf_star: f64,
    /// Smallest EDF that smooth can have (its penalty null dimension).
    pub edf_min: f64,
    pub threshold: f64,
    pub flagged: bool,
    /// Criterion value of the parent fit.
    pub criterion_before: f64,
    /// Filled in by the doubling driver after refitting at a larger `k`.
    pub criterion_after: Option<f64>,
    pub criterion_drop_fraction: Option<f64>,
}

/// Smooths the model residuals on the term's covariates with twice the
/// term's basis dimension, using the parent's criterion, and flags the term
/// when that smooth needs more than `edf_min + threshold` degrees of freedom.
pub fn resmooth_check(
    model: &FittedModel,
    term: usize,
    config: &ResmoothConfig,
) -> Result<ResmoothResult, DiagnosticsError> {
    let parent = model
        .spec
        .terms
        .get(term)
        .ok_or(crate::fit::FitError::NoSuchTerm(term))?;
    let doubled = parent.with_k(parent.k * 2);
    let mut data = Dataset::new();
    for (name, col) in doubled.covariates.iter().zip(model.term_covariates(term)?) {
        data.push_column(name.clone(), col.to_vec())?;
    }
    data.push_column(RESIDUAL_COLUMN, model.residuals.as_slice().to_vec())?;

    let spec = ModelSpec::new(RESIDUAL_COLUMN, vec![doubled], model.spec.criterion);
    let smooth = fit(&spec, &data)?;
    let edf_star = smooth.edf_per_term[0];
    let edf_min = smooth.blocks[0].null_dim as f64;
    Ok(ResmoothResult {
        edf_star,
        edf_min,
        threshold: config.threshold,
        flagged: edf_star > edf_min + config.threshold,
        criterion_before: model.criterion_value,
        criterion_after: None,
        criterion_drop_fraction: None,
    })
}
