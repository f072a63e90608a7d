//! Generalized linear and random-intercept mixed models for binary
//! randomized-response survey data.
//!
//! Each observation carries its own questioning design. The design maps the
//! prevalence of the sensitive attribute `t` to the probability of a "yes"
//! answer, `pi = c + d * t`, and the models place a link function on `t`.

pub mod data;
pub mod design;
pub mod diagnostics;
mod error;
pub mod formula;
pub mod glm;
pub mod glmm;
pub mod inference;
pub mod link;
pub mod model;
pub mod numeric;
pub mod par;
pub mod simulate;

pub use data::{load_table, Column, ColumnRoles, LoadSchema, LoadedTable, NaPolicy, RRDataset};
pub use design::{derive_rr_parameters, RRAssignment, RRDesignKind};
pub use diagnostics::{
    gof, residuals, residuals_with, GofReport, GofTest, GroupingOptions, PatternKey, ResidualKind,
    ResidualVector,
};
pub use error::{Error, Result};
pub use formula::{build_design_matrices, parse_formula, DesignMatrices, LevelOrder, ModelFormula};
pub use glm::{fit_glm, predict_glm, FitOptions, FitResult, Scale};
pub use glmm::{fit_glmm, predict_glmm, Approximation, MixedFitResult, RandomEffects};
pub use inference::{anova_lr, summarize_fit, weighted_prevalence, AnovaTable, PrevalenceEstimate};
pub use link::LinkFamily;
pub use model::{fit_model, Fit};
pub use numeric::OptimizerSettings;
pub use par::Exec;
pub use simulate::{simulate_rr_dataset, SimulationSpec};
