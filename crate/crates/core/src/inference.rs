//! Weighted prevalence estimates, Wald summaries and likelihood-ratio
//! comparison of fitted models.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::RRDataset;
use crate::design::{RRAssignment, RRDesignKind};
use crate::error::{Error, Result};
use crate::model::Fit;
use crate::numeric::{chisq_upper_tail, std_normal_upper_tail};

/// Pooled moment estimate of the prevalence for one item (and design).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceEstimate {
    pub item: Option<String>,
    /// `None` when all designs are pooled.
    pub rr_model: Option<RRDesignKind>,
    /// `(sum y - sum c) / sum d`; not clamped to `[0, 1]`.
    pub estimate: f64,
    pub standard_error: f64,
    pub n: usize,
    /// Distinct `(p1, p2)` pairs pooled, ascending.
    pub parameter_sets: Vec<(f64, f64)>,
}

fn sorted_sets(rows: &[usize], assignments: &[RRAssignment]) -> Vec<(f64, f64)> {
    let mut sets: Vec<(f64, f64)> = rows
        .iter()
        .map(|&i| (assignments[i].p1, assignments[i].p2))
        .collect();
    sets.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    sets.dedup();
    sets
}

fn pooled_estimate(
    rows: &[usize],
    y: &[f64],
    assignments: &[RRAssignment],
    item: Option<&str>,
    rr_model: Option<RRDesignKind>,
) -> Result<PrevalenceEstimate> {
    let (mut sy, mut sc, mut sd, mut scale) = (0.0, 0.0, 0.0, 0.0);
    for &i in rows {
        sy += y[i];
        sc += assignments[i].c;
        sd += assignments[i].d;
        scale += assignments[i].d.abs();
    }
    // rounding leaves a residue of order 1e-16 when slopes cancel
    if sd.abs() <= 1e-12 * scale {
        return Err(Error::Domain(format!(
            "prevalence cell (item {}, design {}) has sum d = 0",
            item.unwrap_or("-"),
            rr_model.map_or("all", |k| k.name())
        )));
    }
    let estimate = (sy - sc) / sd;
    let var: f64 = rows
        .iter()
        .map(|&i| {
            let p = assignments[i]
                .response_probability(estimate)
                .clamp(0.0, 1.0);
            p * (1.0 - p)
        })
        .sum();
    Ok(PrevalenceEstimate {
        item: item.map(str::to_string),
        rr_model,
        estimate,
        standard_error: var.sqrt() / sd.abs(),
        n: rows.len(),
        parameter_sets: sorted_sets(rows, assignments),
    })
}

/// Items in order of first appearance with their row indices.
pub(crate) fn rows_by_item(
    n: usize,
    items: Option<&[String]>,
) -> Vec<(Option<String>, Vec<usize>)> {
    match items {
        None => vec![(None, (0..n).collect())],
        Some(labels) => {
            let mut out: Vec<(Option<String>, Vec<usize>)> = Vec::new();
            for (i, l) in labels.iter().enumerate() {
                match out
                    .iter_mut()
                    .find(|(k, _)| k.as_deref() == Some(l.as_str()))
                {
                    Some((_, rows)) => rows.push(i),
                    None => out.push((Some(l.clone()), vec![i])),
                }
            }
            out
        }
    }
}

/// Prevalence estimates per item, and per design within item when
/// `group_by_design` is set. Designs are listed alphabetically.
pub fn weighted_prevalence_rows(
    y: &[f64],
    assignments: &[RRAssignment],
    items: Option<&[String]>,
    group_by_design: bool,
) -> Result<Vec<PrevalenceEstimate>> {
    let mut out = Vec::new();
    for (item, rows) in rows_by_item(y.len(), items) {
        if !group_by_design {
            out.push(pooled_estimate(
                &rows,
                y,
                assignments,
                item.as_deref(),
                None,
            )?);
            continue;
        }
        let mut kinds: Vec<RRDesignKind> = rows.iter().map(|&i| assignments[i].kind).collect();
        kinds.sort_by_key(|k| k.name());
        kinds.dedup();
        for kind in kinds {
            let cell: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|&i| assignments[i].kind == kind)
                .collect();
            out.push(pooled_estimate(
                &cell,
                y,
                assignments,
                item.as_deref(),
                Some(kind),
            )?);
        }
    }
    Ok(out)
}

pub fn weighted_prevalence(
    data: &RRDataset,
    group_by_design: bool,
) -> Result<Vec<PrevalenceEstimate>> {
    let items = data.item_labels();
    weighted_prevalence_rows(
        data.response(),
        data.assignments(),
        items.as_deref(),
        group_by_design,
    )
}

/// Renders the prevalence table of one item.
pub fn format_prevalence_table(estimates: &[PrevalenceEstimate]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>10} {:>17} {:>11} {:>6}",
        "RRmodel", "estimate.weighted", "se.weighted", "n"
    );
    for e in estimates {
        let model = e.rr_model.map_or("all", |k| k.name());
        let _ = writeln!(
            s,
            "{:>10} {:>17.6} {:>11.7} {:>6}",
            model, e.estimate, e.standard_error, e.n
        );
    }
    s
}

/// Formats a parameter set as `(p1 | p2)`.
pub fn format_parameter_set((p1, p2): (f64, f64)) -> String {
    format!("({p1:.2} | {p2:.2})")
}

/// Formats a p-value the way statistical tables usually print them.
pub fn format_p_value(p: f64) -> String {
    if p.is_nan() {
        "NA".into()
    } else if p < 2.2e-16 {
        "< 2.2e-16".into()
    } else if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

pub fn significance_code(p: f64) -> &'static str {
    match p {
        p if p < 0.001 => "***",
        p if p < 0.01 => "**",
        p if p < 0.05 => "*",
        p if p < 0.1 => ".",
        _ => " ",
    }
}

/// One row of a Wald coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

pub fn coefficient_table(fit: &Fit) -> Vec<CoefficientRow> {
    fit.column_names()
        .iter()
        .zip(fit.coefficients())
        .zip(fit.standard_errors())
        .map(|((name, &estimate), &std_error)| {
            let z = if estimate == 0.0 {
                0.0
            } else {
                estimate / std_error
            };
            CoefficientRow {
                name: name.clone(),
                estimate,
                std_error,
                z,
                p_value: (2.0 * std_normal_upper_tail(z.abs())).min(1.0),
            }
        })
        .collect()
}

/// Everything printed by [`summarize_fit`], in structured form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub formula: String,
    pub link: String,
    pub mixed: bool,
    pub coefficients: Vec<CoefficientRow>,
    pub deviance: f64,
    pub null_deviance: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub df_residual: usize,
    pub sigma: Option<f64>,
    pub boundary: bool,
    pub converged: bool,
    pub prevalence: Vec<PrevalenceEstimate>,
}

pub fn fit_summary(fit: &Fit) -> Result<FitSummary> {
    let d = fit.data();
    Ok(FitSummary {
        formula: fit.formula().to_string(),
        link: fit.link().name().to_string(),
        mixed: fit.is_mixed(),
        coefficients: coefficient_table(fit),
        deviance: fit.deviance(),
        null_deviance: fit.null_deviance(),
        log_likelihood: fit.log_likelihood(),
        aic: fit.aic(),
        bic: fit.bic(),
        n_obs: fit.n_obs(),
        n_params: fit.n_params(),
        df_residual: fit.df_residual(),
        sigma: fit.sigma(),
        boundary: fit.boundary(),
        converged: fit.converged(),
        prevalence: weighted_prevalence_rows(&d.y, &d.assignments, d.items.as_deref(), true)?,
    })
}

fn design_listing(
    rows: &[usize],
    assignments: &[RRAssignment],
) -> Vec<(RRDesignKind, Vec<(f64, f64)>)> {
    let mut kinds: Vec<RRDesignKind> = Vec::new();
    for &i in rows {
        if !kinds.contains(&assignments[i].kind) {
            kinds.push(assignments[i].kind);
        }
    }
    kinds
        .into_iter()
        .map(|k| {
            let cell: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|&i| assignments[i].kind == k)
                .collect();
            (k, sorted_sets(&cell, assignments))
        })
        .collect()
}

/// Human-readable report: coefficient table, fit statistics, and per-item
/// design listing with weighted prevalence estimates.
pub fn summarize_fit(fit: &Fit) -> Result<String> {
    let summary = fit_summary(fit)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}",
        if summary.mixed {
            "Randomized-response generalized linear mixed model (random intercept)"
        } else {
            "Randomized-response generalized linear model"
        }
    );
    let _ = writeln!(s, "Formula: {}", summary.formula);
    let _ = writeln!(s, "Family: binomial");
    let _ = writeln!(s, "Link function: RR{}", summary.link);
    if let Fit::Glmm(m) = fit {
        let approx = match m.approximation {
            crate::glmm::Approximation::Laplace => "Laplace".to_string(),
            crate::glmm::Approximation::Agq(k) => {
                format!("adaptive Gauss-Hermite quadrature ({k} nodes)")
            }
        };
        let _ = writeln!(s, "Approximation: {approx}");
    }
    let _ = writeln!(s);

    if let Fit::Glmm(m) = fit {
        let _ = writeln!(s, "Random effects:");
        let _ = writeln!(
            s,
            " {:<10} {:<12} {:>10} {:>10}",
            "Groups", "Name", "Variance", "Std.Dev."
        );
        let _ = writeln!(
            s,
            " {:<10} {:<12} {:>10.4} {:>10.4}",
            m.grouping_name,
            "(Intercept)",
            m.sigma * m.sigma,
            m.sigma
        );
        let _ = writeln!(
            s,
            "Number of obs: {}, groups: {}, {}",
            m.n_obs, m.grouping_name, m.n_groups
        );
        if m.boundary {
            let _ = writeln!(
                s,
                "Note: the random-intercept variance is estimated on the boundary (0)."
            );
        }
        let _ = writeln!(s);
    }

    let _ = writeln!(s, "Coefficients:");
    let width = summary
        .coefficients
        .iter()
        .map(|c| c.name.len())
        .max()
        .unwrap_or(0)
        .max(11);
    let _ = writeln!(
        s,
        "{:<width$} {:>10} {:>10} {:>8} {:>10}",
        "", "Estimate", "Std. Error", "z value", "Pr(>|z|)"
    );
    for c in &summary.coefficients {
        let _ = writeln!(
            s,
            "{:<width$} {:>10.5} {:>10.5} {:>8.3} {:>10} {}",
            c.name,
            c.estimate,
            c.std_error,
            c.z,
            format_p_value(c.p_value),
            significance_code(c.p_value)
        );
    }
    let _ = writeln!(s, "---");
    let _ = writeln!(
        s,
        "Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "    Null deviance: {:.2} on {} degrees of freedom",
        summary.null_deviance,
        summary
            .n_obs
            .saturating_sub(usize::from(fit.formula().intercept))
    );
    let _ = writeln!(
        s,
        "Residual deviance: {:.2} on {} degrees of freedom",
        summary.deviance, summary.df_residual
    );
    let _ = writeln!(
        s,
        "AIC: {:.2}  BIC: {:.2}  logLik: {:.2}",
        summary.aic, summary.bic, summary.log_likelihood
    );
    match fit {
        Fit::Glm(g) => {
            let _ = writeln!(s, "Number of Fisher scoring iterations: {}", g.iterations);
        }
        Fit::Glmm(m) => {
            let _ = writeln!(s, "Objective evaluations: {}", m.evaluations);
        }
    }
    if !summary.converged {
        let _ = writeln!(s, "Warning: the fit did not converge.");
    }

    let d = fit.data();
    for (item, rows) in rows_by_item(d.y.len(), d.items.as_deref()) {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "---------------------------------------------------------"
        );
        let _ = writeln!(s, "Item: {}", item.as_deref().unwrap_or("(all rows)"));
        for (k, (kind, sets)) in design_listing(&rows, &d.assignments)
            .into_iter()
            .enumerate()
        {
            let label = if k == 0 { "Model(s):" } else { "" };
            let sets: Vec<String> = sets.into_iter().map(format_parameter_set).collect();
            let _ = writeln!(s, "{label:<10} {} {}", kind.name(), sets.join(" "));
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "## Estimated population prevalence (weighted per RR model)"
        );
        let cells: Vec<PrevalenceEstimate> = summary
            .prevalence
            .iter()
            .filter(|e| e.item == item)
            .cloned()
            .collect();
        s.push_str(&format_prevalence_table(&cells));
    }
    Ok(s)
}

/// One model's line in a deviance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub formula: String,
    pub mixed: bool,
    pub n_params: usize,
    pub df_residual: usize,
    pub deviance: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
}

/// Likelihood-ratio comparison of two fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub rows: [AnovaRow; 2],
    /// First deviance minus second.
    pub delta_deviance: f64,
    /// Second parameter count minus first.
    pub delta_df: i64,
    pub p_value: Option<f64>,
    pub notes: Vec<String>,
}

fn anova_row(fit: &Fit) -> AnovaRow {
    AnovaRow {
        formula: fit.formula().to_string(),
        mixed: fit.is_mixed(),
        n_params: fit.n_params(),
        df_residual: fit.df_residual(),
        deviance: fit.deviance(),
        log_likelihood: fit.log_likelihood(),
        aic: fit.aic(),
        bic: fit.bic(),
    }
}

/// Likelihood-ratio test between two fits of the same rows.
pub fn anova_lr(first: &Fit, second: &Fit) -> Result<AnovaTable> {
    if first.n_obs() != second.n_obs() {
        return Err(Error::Domain(format!(
            "models were fitted to different numbers of rows ({} vs {})",
            first.n_obs(),
            second.n_obs()
        )));
    }
    let delta_deviance = first.deviance() - second.deviance();
    let delta_df = second.n_params() as i64 - first.n_params() as i64;
    let mut notes = Vec::new();
    let p_value = if delta_df == 0 {
        if delta_deviance.abs() <= 1e-12 {
            Some(1.0)
        } else {
            notes.push("models have the same number of parameters; no test is possible".into());
            None
        }
    } else {
        Some(chisq_upper_tail(
            delta_deviance.abs(),
            delta_df.unsigned_abs() as f64,
        )?)
    };
    let (small, big) = if delta_df >= 0 {
        (first, second)
    } else {
        (second, first)
    };
    if delta_df != 0 && big.deviance() > small.deviance() + 1e-6 {
        notes.push(
            "the model with more parameters has the larger deviance; the models may not be nested"
                .into(),
        );
    }
    if first.is_mixed() != second.is_mixed() {
        notes.push(
            "the variance component is tested on the boundary of its parameter space; \
             the chi-square p-value is conservative"
                .into(),
        );
    }
    if first.boundary() || second.boundary() {
        notes.push("a random-intercept variance was estimated as 0 (boundary fit)".into());
    }
    Ok(AnovaTable {
        rows: [anova_row(first), anova_row(second)],
        delta_deviance,
        delta_df,
        p_value,
        notes,
    })
}

impl std::fmt::Display for AnovaTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let any_mixed = self.rows.iter().any(|r| r.mixed);
        writeln!(f, "Analysis of Deviance Table")?;
        writeln!(f)?;
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(f, "Model {}: {}", i + 1, r.formula)?;
        }
        let p = self.p_value.map_or("NA".to_string(), format_p_value);
        if any_mixed {
            writeln!(
                f,
                "  {:>5} {:>10} {:>10} {:>10} {:>10} {:>8} {:>4} {:>10}",
                "npar", "AIC", "BIC", "logLik", "deviance", "Chisq", "Df", "Pr(>Chisq)"
            )?;
            for (i, r) in self.rows.iter().enumerate() {
                write!(
                    f,
                    "{} {:>5} {:>10.1} {:>10.1} {:>10.1} {:>10.1}",
                    i + 1,
                    r.n_params,
                    r.aic,
                    r.bic,
                    r.log_likelihood,
                    r.deviance
                )?;
                if i == 1 {
                    write!(
                        f,
                        " {:>8.2} {:>4} {:>10}",
                        self.delta_deviance, self.delta_df, p
                    )?;
                }
                writeln!(f)?;
            }
        } else {
            writeln!(
                f,
                "  {:>9} {:>10} {:>4} {:>9} {:>9}",
                "Resid. Df", "Resid. Dev", "Df", "Deviance", "Pr(>Chi)"
            )?;
            for (i, r) in self.rows.iter().enumerate() {
                write!(f, "{} {:>9} {:>10.2}", i + 1, r.df_residual, r.deviance)?;
                if i == 1 {
                    write!(
                        f,
                        " {:>4} {:>9.4} {:>9}",
                        self.delta_df, self.delta_deviance, p
                    )?;
                }
                writeln!(f)?;
            }
        }
        for note in &self.notes {
            writeln!(f, "Note: {note}")?;
        }
        Ok(())
    }
}
