//! A fitted model of either kind behind one interface.

use serde::{Deserialize, Serialize};

use crate::data::{ColumnRoles, RRDataset};
use crate::error::Result;
use crate::formula::ModelFormula;
use crate::glm::{fit_glm, predict_glm, FitData, FitOptions, FitResult, Scale};
use crate::glmm::{fit_glmm, predict_glmm, MixedFitResult, RandomEffects};
use crate::link::LinkFamily;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Fit {
    Glm(FitResult),
    Glmm(MixedFitResult),
}

macro_rules! both {
    ($self:ident, $f:ident => $e:expr) => {
        match $self {
            Fit::Glm($f) => $e,
            Fit::Glmm($f) => $e,
        }
    };
}

impl Fit {
    pub fn is_mixed(&self) -> bool {
        matches!(self, Fit::Glmm(_))
    }

    pub fn formula(&self) -> &ModelFormula {
        both!(self, f => &f.formula)
    }

    pub fn link(&self) -> LinkFamily {
        both!(self, f => f.link)
    }

    pub fn roles(&self) -> &ColumnRoles {
        both!(self, f => &f.roles)
    }

    pub fn column_names(&self) -> &[String] {
        both!(self, f => &f.column_names)
    }

    pub fn coefficients(&self) -> &[f64] {
        both!(self, f => &f.coefficients)
    }

    pub fn standard_errors(&self) -> &[f64] {
        both!(self, f => &f.standard_errors)
    }

    pub fn covariance(&self) -> &[Vec<f64>] {
        both!(self, f => &f.covariance)
    }

    pub fn deviance(&self) -> f64 {
        both!(self, f => f.deviance)
    }

    pub fn null_deviance(&self) -> f64 {
        both!(self, f => f.null_deviance)
    }

    pub fn log_likelihood(&self) -> f64 {
        both!(self, f => f.log_likelihood)
    }

    pub fn aic(&self) -> f64 {
        both!(self, f => f.aic)
    }

    pub fn bic(&self) -> f64 {
        both!(self, f => f.bic)
    }

    pub fn n_obs(&self) -> usize {
        both!(self, f => f.n_obs)
    }

    pub fn n_params(&self) -> usize {
        both!(self, f => f.n_params)
    }

    pub fn df_residual(&self) -> usize {
        both!(self, f => f.df_residual)
    }

    pub fn converged(&self) -> bool {
        both!(self, f => f.converged)
    }

    /// Conditional fitted probabilities of a "yes" answer.
    pub fn fitted(&self) -> &[f64] {
        both!(self, f => &f.fitted)
    }

    pub fn fitted_prevalence(&self) -> &[f64] {
        both!(self, f => &f.fitted_prevalence)
    }

    pub fn linear_predictor(&self) -> &[f64] {
        both!(self, f => &f.linear_predictor)
    }

    pub fn data(&self) -> &FitData {
        both!(self, f => &f.data)
    }

    /// Random-intercept standard deviation of a mixed fit.
    pub fn sigma(&self) -> Option<f64> {
        match self {
            Fit::Glm(_) => None,
            Fit::Glmm(m) => Some(m.sigma),
        }
    }

    pub fn boundary(&self) -> bool {
        matches!(self, Fit::Glmm(m) if m.boundary)
    }

    /// Predictions; mixed fits use the conditional modes.
    pub fn predict(&self, new_data: Option<&RRDataset>, scale: Scale) -> Result<Vec<f64>> {
        match self {
            Fit::Glm(f) => predict_glm(f, new_data, scale),
            Fit::Glmm(m) => predict_glmm(m, new_data, scale, RandomEffects::Conditional),
        }
    }
}

/// Fits a mixed model when `formula` has a random term, a GLM otherwise.
pub fn fit_model(
    formula: &ModelFormula,
    data: &RRDataset,
    link: LinkFamily,
    options: &FitOptions,
) -> Result<Fit> {
    if formula.random_intercept.is_some() {
        fit_glmm(formula, data, link, options).map(Fit::Glmm)
    } else {
        fit_glm(formula, data, link, options).map(Fit::Glm)
    }
}
