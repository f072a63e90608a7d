//! Maximum-likelihood fitting of fixed-effects randomized-response models by
//! iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnRoles, RRDataset};
use crate::design::RRAssignment;
use crate::error::{Error, Result};
use crate::formula::{build_design_matrices, DesignEncoding, GroupIndex, LevelOrder, ModelFormula};
use crate::glmm::Approximation;
use crate::link::{clamp_probability, mean_pair, LinkFamily};
use crate::numeric::OptimizerSettings;
use crate::par::{map_chunks, Exec};

/// Options shared by the fixed and mixed fitting routines.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub levels: LevelOrder,
    pub optimizer: OptimizerSettings,
    /// Integral approximation for mixed models; ignored by GLM fits.
    pub approximation: Approximation,
    pub exec: Exec,
}

/// The rows a model was fitted to, kept so residuals and goodness of fit can
/// be recomputed from a saved fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitData {
    pub y: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub x: DMatrix<f64>,
    pub assignments: Vec<RRAssignment>,
    pub items: Option<Vec<String>>,
    pub groups: Option<GroupIndex>,
}

impl FitData {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        (m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let (ncols, rows): (usize, Vec<Vec<f64>>) = Deserialize::deserialize(d)?;
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// A fitted fixed-effects model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub formula: ModelFormula,
    pub link: LinkFamily,
    pub roles: ColumnRoles,
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub standard_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub null_deviance: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub df_residual: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Fitted probabilities of a "yes" answer.
    pub fitted: Vec<f64>,
    /// Fitted prevalence `F(eta)` per row.
    pub fitted_prevalence: Vec<f64>,
    pub linear_predictor: Vec<f64>,
    pub encoding: DesignEncoding,
    pub data: FitData,
}

/// Per-observation quantities at a given linear predictor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowTerms {
    pub log_lik: f64,
    /// Fisher weight `pi'^2 / (pi (1 - pi))`.
    pub weight: f64,
    /// Score with respect to eta, `pi' (y - pi) / (pi (1 - pi))`.
    pub score: f64,
    /// Observed information with respect to eta.
    pub observed: f64,
}

pub(crate) fn row_terms(eta: f64, y: f64, a: &RRAssignment, link: LinkFamily) -> RowTerms {
    let (raw, mut q) = mean_pair(eta, a.c, a.d, link);
    let pi = clamp_probability(raw, a.c, a.d);
    if pi != raw {
        q = 1.0 - pi;
    }
    let dens = a.d * link.density(eta);
    let dens2 = a.d * link.density_derivative(eta);
    let v = pi * q;
    let log_lik = if y > 0.5 { pi.ln() } else { q.ln() };
    let resid = y - pi;
    let score = dens * resid / v;
    // -d score / d eta
    let observed = dens * dens / v - dens2 * resid / v + dens * dens * resid * (q - pi) / (v * v);
    RowTerms {
        log_lik,
        weight: dens * dens / v,
        score,
        observed,
    }
}

/// Log-likelihood of one row alone; cheaper than [`row_terms`].
pub(crate) fn row_log_lik(eta: f64, y: f64, a: &RRAssignment, link: LinkFamily) -> f64 {
    let (raw, mut q) = mean_pair(eta, a.c, a.d, link);
    let pi = clamp_probability(raw, a.c, a.d);
    if pi != raw {
        q = 1.0 - pi;
    }
    if y > 0.5 {
        pi.ln()
    } else {
        q.ln()
    }
}

pub(crate) fn log_likelihood_at(
    eta: &[f64],
    y: &[f64],
    assignments: &[RRAssignment],
    link: LinkFamily,
    exec: Exec,
) -> f64 {
    map_chunks(exec, y.len(), |r| {
        r.map(|i| row_log_lik(eta[i], y[i], &assignments[i], link))
            .sum::<f64>()
    })
    .into_iter()
    .sum()
}

/// Accumulates `X' W X` and `X' (W eta + score)` chunk by chunk.
pub(crate) fn normal_equations(
    x: &DMatrix<f64>,
    eta: &[f64],
    y: &[f64],
    assignments: &[RRAssignment],
    link: LinkFamily,
    exec: Exec,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = x.ncols();
    let parts = map_chunks(exec, y.len(), |r| {
        let mut a = DMatrix::<f64>::zeros(p, p);
        let mut b = DVector::<f64>::zeros(p);
        for i in r {
            let t = row_terms(eta[i], y[i], &assignments[i], link);
            let rhs = t.weight * eta[i] + t.score;
            for j in 0..p {
                let xij = x[(i, j)];
                if xij == 0.0 {
                    continue;
                }
                let wx = t.weight * xij;
                b[j] += xij * rhs;
                for k in 0..=j {
                    a[(j, k)] += wx * x[(i, k)];
                }
            }
        }
        (a, b)
    });
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for (pa, pb) in parts {
        a += pa;
        b += pb;
    }
    for j in 0..p {
        for k in 0..j {
            a[(k, j)] = a[(j, k)];
        }
    }
    (a, b)
}

pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("singular information matrix".into()))
}

pub(crate) fn invert_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = match a.clone().cholesky() {
        Some(ch) => Some(ch.inverse()),
        None => a.clone().try_inverse(),
    };
    inv.filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("information matrix is not invertible".into()))
}

pub(crate) struct IrlsOutcome {
    pub beta: DVector<f64>,
    pub eta: Vec<f64>,
    pub log_lik: f64,
    pub information: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn starting_eta(y: &[f64], assignments: &[RRAssignment], link: LinkFamily) -> Result<f64> {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let cbar = assignments.iter().map(|a| a.c).sum::<f64>() / n;
    let dbar = assignments.iter().map(|a| a.d).sum::<f64>() / n;
    let t = if dbar == 0.0 {
        0.5
    } else {
        ((ybar - cbar) / dbar).clamp(0.05, 0.95)
    };
    link.quantile(t)
}

pub(crate) fn irls(
    x: &DMatrix<f64>,
    y: &[f64],
    assignments: &[RRAssignment],
    link: LinkFamily,
    settings: &OptimizerSettings,
    exec: Exec,
) -> Result<IrlsOutcome> {
    let eta0 = starting_eta(y, assignments, link)?;
    let xtx = x.transpose() * x;
    let xte = x.transpose() * DVector::from_element(x.nrows(), eta0);
    let mut beta = solve_spd(&xtx, &xte)?;
    let eval = |beta: &DVector<f64>| -> (Vec<f64>, f64) {
        let eta: Vec<f64> = (x * beta).iter().copied().collect();
        let ll = log_likelihood_at(&eta, y, assignments, link, exec);
        (eta, -2.0 * ll)
    };
    let (mut eta, mut dev) = eval(&beta);
    if !dev.is_finite() {
        return Err(Error::Numerical(
            "non-finite deviance at the starting values".into(),
        ));
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        iterations += 1;
        let (a, b) = normal_equations(x, &eta, y, assignments, link, exec);
        let mut candidate = solve_spd(&a, &b)?;
        let (mut new_eta, mut new_dev) = eval(&candidate);
        let mut halvings = 0;
        while (!new_dev.is_finite() || new_dev > dev + 1e-10 * dev.abs()) && halvings < 10 {
            candidate = (&candidate + &beta) * 0.5;
            (new_eta, new_dev) = eval(&candidate);
            halvings += 1;
        }
        if !new_dev.is_finite() {
            return Err(Error::Numerical(
                "deviance diverged during iteration".into(),
            ));
        }
        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        let worse = new_dev > dev;
        if !worse {
            beta = candidate;
            eta = new_eta;
            dev = new_dev;
        }
        if change < settings.relative_tolerance || (worse && halvings == 10) {
            converged = !worse || change < settings.relative_tolerance;
            break;
        }
    }
    let (information, _) = normal_equations(x, &eta, y, assignments, link, exec);
    Ok(IrlsOutcome {
        beta,
        eta,
        log_lik: -dev / 2.0,
        information,
        iterations,
        converged,
    })
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Deviance of the intercept-only model, or of `eta = 0` without an intercept.
pub(crate) fn null_deviance(
    intercept: bool,
    y: &[f64],
    assignments: &[RRAssignment],
    link: LinkFamily,
    settings: &OptimizerSettings,
    exec: Exec,
) -> Result<f64> {
    if intercept {
        let ones = DMatrix::from_element(y.len(), 1, 1.0);
        Ok(-2.0 * irls(&ones, y, assignments, link, settings, exec)?.log_lik)
    } else {
        let eta = vec![0.0; y.len()];
        Ok(-2.0 * log_likelihood_at(&eta, y, assignments, link, exec))
    }
}

pub(crate) fn fit_data(data: &RRDataset, x: DMatrix<f64>, groups: Option<GroupIndex>) -> FitData {
    FitData {
        y: data.response().to_vec(),
        x,
        assignments: data.assignments().to_vec(),
        items: data.item_labels(),
        groups,
    }
}

/// Fits a fixed-effects model. A random term in `formula` is an error; use
/// [`crate::glmm::fit_glmm`] for those.
pub fn fit_glm(
    formula: &ModelFormula,
    data: &RRDataset,
    link: LinkFamily,
    options: &FitOptions,
) -> Result<FitResult> {
    options.optimizer.validate()?;
    if formula.random_intercept.is_some() {
        return Err(Error::Formula(
            "formula has a random term; fit it as a mixed model".into(),
        ));
    }
    if data.n_rows() == 0 {
        return Err(Error::Data("no rows to fit".into()));
    }
    let dm = build_design_matrices(formula, data, &options.levels)?;
    let y = data.response();
    let asg = data.assignments();
    let out = irls(&dm.x, y, asg, link, &options.optimizer, options.exec)?;
    if !out.converged {
        log::warn!("IRLS did not converge in {} iterations", out.iterations);
    }
    let cov = invert_spd(&out.information)?;
    let n = y.len();
    let p = dm.x.ncols();
    let deviance = -2.0 * out.log_lik;
    let null_dev = null_deviance(
        formula.intercept,
        y,
        asg,
        link,
        &options.optimizer,
        options.exec,
    )?;
    let fitted = out
        .eta
        .iter()
        .zip(asg)
        .map(|(&e, a)| clamp_probability(crate::link::mean(e, a.c, a.d, link), a.c, a.d))
        .collect();
    Ok(FitResult {
        formula: formula.clone(),
        link,
        roles: data.roles().clone(),
        column_names: dm.column_names.clone(),
        coefficients: out.beta.iter().copied().collect(),
        standard_errors: (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        covariance: matrix_to_rows(&cov),
        log_likelihood: out.log_lik,
        deviance,
        null_deviance: null_dev,
        aic: deviance + 2.0 * p as f64,
        bic: deviance + p as f64 * (n as f64).ln(),
        n_obs: n,
        n_params: p,
        df_residual: n.saturating_sub(p),
        iterations: out.iterations,
        converged: out.converged,
        fitted,
        fitted_prevalence: out.eta.iter().map(|&e| link.cdf(e)).collect(),
        linear_predictor: out.eta,
        encoding: dm.encoding,
        data: fit_data(data, dm.x, None),
    })
}

/// Bernoulli log-likelihood of `formula` on `data` at coefficients `beta`.
pub fn log_likelihood(
    beta: &[f64],
    data: &RRDataset,
    formula: &ModelFormula,
    link: LinkFamily,
    levels: &LevelOrder,
) -> Result<f64> {
    let dm = build_design_matrices(&formula.fixed_part(), data, levels)?;
    if beta.len() != dm.x.ncols() {
        return Err(Error::Domain(format!(
            "expected {} coefficients, got {}",
            dm.x.ncols(),
            beta.len()
        )));
    }
    let eta: Vec<f64> = (dm.x * DVector::from_column_slice(beta))
        .iter()
        .copied()
        .collect();
    Ok(log_likelihood_at(
        &eta,
        data.response(),
        data.assignments(),
        link,
        Exec::Sequential,
    ))
}

/// Scale on which predictions are returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    /// The linear predictor `eta`.
    Link,
    /// The probability of a "yes" answer, `c + d F(eta)`.
    Response,
    /// The prevalence of the sensitive attribute, `F(eta)`.
    Prevalence,
}

pub(crate) fn apply_scale(
    eta: &[f64],
    assignments: &[RRAssignment],
    link: LinkFamily,
    scale: Scale,
) -> Vec<f64> {
    match scale {
        Scale::Link => eta.to_vec(),
        Scale::Prevalence => eta.iter().map(|&e| link.cdf(e)).collect(),
        Scale::Response => eta
            .iter()
            .zip(assignments)
            .map(|(&e, a)| crate::link::mean(e, a.c, a.d, link))
            .collect(),
    }
}

/// Predictions for the fitted rows, or for `new_data` when given.
pub fn predict_glm(
    fit: &FitResult,
    new_data: Option<&RRDataset>,
    scale: Scale,
) -> Result<Vec<f64>> {
    match new_data {
        None => Ok(apply_scale(
            &fit.linear_predictor,
            &fit.data.assignments,
            fit.link,
            scale,
        )),
        Some(d) => {
            let x = fit.encoding.encode(d)?;
            let beta = DVector::from_column_slice(&fit.coefficients);
            let eta: Vec<f64> = (x * beta).iter().copied().collect();
            Ok(apply_scale(&eta, d.assignments(), fit.link, scale))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::RRDesignKind;

    #[test]
    fn observed_information_matches_finite_difference() {
        let a = RRAssignment::new(RRDesignKind::Forced, 0.7, 0.4).unwrap();
        for link in LinkFamily::ALL {
            for &eta in &[-2.0, -0.3, 0.8, 1.7] {
                for &y in &[0.0, 1.0] {
                    let h = 1e-5;
                    let s = |e: f64| row_terms(e, y, &a, link).score;
                    let fd = -(s(eta + h) - s(eta - h)) / (2.0 * h);
                    let t = row_terms(eta, y, &a, link);
                    assert!(
                        (t.observed - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                        "{link:?} {eta} {y}"
                    );
                    let l = |e: f64| row_terms(e, y, &a, link).log_lik;
                    let fd_score = (l(eta + h) - l(eta - h)) / (2.0 * h);
                    assert!((t.score - fd_score).abs() < 1e-6 * (1.0 + fd_score.abs()));
                }
            }
        }
    }
}
