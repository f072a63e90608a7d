//! Random-intercept models fitted by Laplace or adaptive Gauss-Hermite
//! approximation of the marginal likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnRoles, RRDataset};
use crate::design::RRAssignment;
use crate::error::{Error, Result};
use crate::formula::{build_design_matrices, DesignEncoding, ModelFormula};
use crate::glm::{
    apply_scale, fit_data, invert_spd, irls, log_likelihood_at, matrix_to_rows, row_log_lik,
    row_terms, solve_spd, FitData, FitOptions, Scale,
};
use crate::link::{clamp_probability, LinkFamily};
use crate::numeric::{
    bfgs, gauss_hermite, golden_section, nelder_mead, Minimum, OptimizerSettings,
};
use crate::par::{map_indexed, Exec};

/// How the random-effect integral is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Approximation {
    #[default]
    Laplace,
    /// Adaptive Gauss-Hermite quadrature with the given number of nodes.
    /// One node is the Laplace approximation.
    Agq(usize),
}

impl Approximation {
    pub fn nodes(self) -> usize {
        match self {
            Approximation::Laplace => 1,
            Approximation::Agq(k) => k,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Approximation::Agq(k) if !(1..=50).contains(&k) => Err(Error::Domain(format!(
                "quadrature needs between 1 and 50 nodes, got {k}"
            ))),
            _ => Ok(()),
        }
    }
}

/// A fitted random-intercept model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFitResult {
    pub formula: ModelFormula,
    pub link: LinkFamily,
    pub roles: ColumnRoles,
    pub approximation: Approximation,
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub standard_errors: Vec<f64>,
    /// Standard deviation of the random intercept.
    pub sigma: f64,
    /// True when the variance estimate sits on the zero boundary.
    pub boundary: bool,
    /// Name of the grouping factor.
    pub grouping_name: String,
    /// Conditional modes of the random intercepts, one per group.
    pub conditional_modes: Vec<f64>,
    pub log_likelihood: f64,
    pub deviance: f64,
    /// Deviance of the fixed-effects intercept-only model.
    pub null_deviance: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    pub n_params: usize,
    pub df_residual: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Conditional fitted probabilities `c + d F(x'beta + b_g)`.
    pub fitted: Vec<f64>,
    pub fitted_prevalence: Vec<f64>,
    /// Conditional linear predictor.
    pub linear_predictor: Vec<f64>,
    pub encoding: DesignEncoding,
    pub data: FitData,
}

const MODE_TOLERANCE: f64 = 1e-10;

/// `(X'WX, X'Wz, sum w, X'w, sum wz)` of one group.
type GroupBlock = (DMatrix<f64>, DVector<f64>, f64, DVector<f64>, f64);

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    assignments: &'a [RRAssignment],
    members: Vec<Vec<usize>>,
    link: LinkFamily,
    exec: Exec,
}

/// Penalized-likelihood pieces at one value of a group's intercept.
#[derive(Debug, Clone, Copy)]
struct ModeState {
    b: f64,
    log_lik: f64,
    /// Penalized score.
    score: f64,
    /// Penalized observed information.
    observed: f64,
    /// Unpenalized Fisher information.
    fisher: f64,
}

/// Result of integrating out one group's intercept.
#[derive(Debug, Clone, Copy)]
struct GroupIntegral {
    mode: f64,
    /// `-2 log` of the approximate marginal likelihood of the group.
    deviance: f64,
}

impl<'a> Problem<'a> {
    fn fixed_eta(&self, beta: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(beta);
        (self.x * b).iter().copied().collect()
    }

    fn group_loglik(&self, rows: &[usize], offset: &[f64], b: f64) -> f64 {
        rows.iter()
            .map(|&i| row_log_lik(offset[i] + b, self.y[i], &self.assignments[i], self.link))
            .sum()
    }

    fn group_state(&self, rows: &[usize], offset: &[f64], b: f64, prec: f64) -> ModeState {
        let mut st = ModeState {
            b,
            log_lik: 0.0,
            score: -prec * b,
            observed: prec,
            fisher: 0.0,
        };
        for &i in rows {
            let t = row_terms(offset[i] + b, self.y[i], &self.assignments[i], self.link);
            st.log_lik += t.log_lik;
            st.score += t.score;
            st.observed += t.observed;
            st.fisher += t.weight;
        }
        st
    }

    /// Mode of `log f(y | b) - b^2 / (2 sigma^2)` by damped Newton steps,
    /// with the likelihood and Fisher information at the mode.
    fn group_mode(&self, rows: &[usize], offset: &[f64], sigma: f64, start: f64) -> ModeState {
        let prec = 1.0 / (sigma * sigma);
        let penalized = |st: &ModeState| st.log_lik - 0.5 * prec * st.b * st.b;
        let mut cur = self.group_state(rows, offset, start, prec);
        for _ in 0..100 {
            if cur.score.abs() < MODE_TOLERANCE {
                break;
            }
            let curvature = if cur.observed > 0.0 && cur.observed.is_finite() {
                cur.observed
            } else {
                cur.fisher + prec
            };
            let mut step = cur.score / curvature;
            let mut accepted = None;
            for _ in 0..40 {
                let cand = self.group_state(rows, offset, cur.b + step, prec);
                if penalized(&cand) >= penalized(&cur) {
                    accepted = Some(cand);
                    break;
                }
                step *= 0.5;
            }
            let Some(next) = accepted else { break };
            let moved = (next.b - cur.b).abs();
            cur = next;
            if moved <= 1e-15 * (1.0 + cur.b.abs()) {
                break;
            }
        }
        cur
    }

    fn integrate_group(&self, g: usize, offset: &[f64], sigma: f64, nodes: usize) -> GroupIntegral {
        let rows = &self.members[g];
        let at = self.group_mode(rows, offset, sigma, 0.0);
        let mode = at.b;
        let s2 = sigma * sigma;
        let h = at.fisher;
        let laplace = -2.0 * at.log_lik + mode * mode / s2 + (1.0 + s2 * h).ln();
        if nodes <= 1 {
            return GroupIntegral {
                mode,
                deviance: laplace,
            };
        }
        let rule = gauss_hermite(nodes);
        let scale = 1.0 / (h + 1.0 / s2).sqrt();
        let terms: Vec<f64> = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&z, &w)| {
                let b = mode + std::f64::consts::SQRT_2 * scale * z;
                w.ln() + z * z + self.group_loglik(rows, offset, b) - 0.5 * b * b / s2
            })
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
        // the constant is log(sqrt(2) s / (sigma sqrt(2 pi))) = log(s / (sigma sqrt(pi)))
        let log_lik = top + sum.ln() + (scale / (sigma * std::f64::consts::PI.sqrt())).ln();
        GroupIntegral {
            mode,
            deviance: -2.0 * log_lik,
        }
    }

    fn integrals(&self, beta: &[f64], sigma: f64, nodes: usize) -> Vec<GroupIntegral> {
        let offset = self.fixed_eta(beta);
        map_indexed(self.exec, self.members.len(), |g| {
            self.integrate_group(g, &offset, sigma, nodes)
        })
    }

    fn deviance(&self, beta: &[f64], sigma: f64, nodes: usize) -> f64 {
        self.integrals(beta, sigma, nodes)
            .iter()
            .map(|g| g.deviance)
            .sum()
    }

    /// Per-group pieces of the penalized normal equations at `eta`.
    fn group_blocks(&self, eta: &[f64]) -> Vec<GroupBlock> {
        let p = self.x.ncols();
        map_indexed(self.exec, self.members.len(), |g| {
            let mut xwx = DMatrix::<f64>::zeros(p, p);
            let mut xwz = DVector::<f64>::zeros(p);
            let mut u = DVector::<f64>::zeros(p);
            let (mut h, mut r) = (0.0, 0.0);
            for &i in &self.members[g] {
                let t = row_terms(eta[i], self.y[i], &self.assignments[i], self.link);
                let wz = t.weight * eta[i] + t.score;
                h += t.weight;
                r += wz;
                for j in 0..p {
                    let xij = self.x[(i, j)];
                    if xij == 0.0 {
                        continue;
                    }
                    u[j] += t.weight * xij;
                    xwz[j] += xij * wz;
                    for k in 0..=j {
                        xwx[(j, k)] += t.weight * xij * self.x[(i, k)];
                    }
                }
            }
            (xwx, xwz, h, u, r)
        })
    }

    /// Schur complement `X'WX - sum u u' / (h + 1/sigma^2)` and matching
    /// right-hand side; also returns the per-group `(h, u, r)`.
    #[allow(clippy::type_complexity)]
    fn reduced_system(
        &self,
        eta: &[f64],
        sigma: f64,
    ) -> (DMatrix<f64>, DVector<f64>, Vec<(f64, DVector<f64>, f64)>) {
        let p = self.x.ncols();
        let prec = 1.0 / (sigma * sigma);
        let mut a = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        let mut parts = Vec::with_capacity(self.members.len());
        for (xwx, xwz, h, u, r) in self.group_blocks(eta) {
            a += xwx;
            rhs += xwz;
            let denom = h + prec;
            for j in 0..p {
                for k in 0..=j {
                    a[(j, k)] -= u[j] * u[k] / denom;
                }
                rhs[j] -= u[j] * r / denom;
            }
            parts.push((h, u, r));
        }
        for j in 0..p {
            for k in 0..j {
                a[(k, j)] = a[(j, k)];
            }
        }
        (a, rhs, parts)
    }

    fn joint_eta(&self, fixed: &[f64], b: &[f64]) -> Vec<f64> {
        let mut eta = fixed.to_vec();
        for (g, rows) in self.members.iter().enumerate() {
            for &i in rows {
                eta[i] += b[g];
            }
        }
        eta
    }

    fn penalized_deviance(&self, eta: &[f64], b: &[f64], sigma: f64) -> f64 {
        let ll: f64 =
            crate::glm::log_likelihood_at(eta, self.y, self.assignments, self.link, self.exec);
        -2.0 * ll + b.iter().map(|v| v * v).sum::<f64>() / (sigma * sigma)
    }

    /// Joint penalized IRLS over `(beta, b)` at fixed `sigma`.
    fn pirls(
        &self,
        beta0: &[f64],
        sigma: f64,
        settings: &OptimizerSettings,
    ) -> Result<(Vec<f64>, bool)> {
        let prec = 1.0 / (sigma * sigma);
        let mut beta = DVector::from_column_slice(beta0);
        let mut b = vec![0.0; self.members.len()];
        let mut eta = self.joint_eta(&self.fixed_eta(beta.as_slice()), &b);
        let mut dev = self.penalized_deviance(&eta, &b, sigma);
        let mut converged = false;
        for _ in 0..2 * settings.max_iterations {
            let (a, rhs, parts) = self.reduced_system(&eta, sigma);
            let mut new_beta = solve_spd(&a, &rhs)?;
            let mut new_b: Vec<f64> = parts
                .iter()
                .map(|(h, u, r)| (r - u.dot(&new_beta)) / (h + prec))
                .collect();
            let mut new_eta = self.joint_eta(&self.fixed_eta(new_beta.as_slice()), &new_b);
            let mut new_dev = self.penalized_deviance(&new_eta, &new_b, sigma);
            let mut halvings = 0;
            while !(new_dev <= dev + 1e-10 * dev.abs()) && halvings < 10 {
                new_beta = (&new_beta + &beta) * 0.5;
                for (nb, ob) in new_b.iter_mut().zip(&b) {
                    *nb = 0.5 * (*nb + ob);
                }
                new_eta = self.joint_eta(&self.fixed_eta(new_beta.as_slice()), &new_b);
                new_dev = self.penalized_deviance(&new_eta, &new_b, sigma);
                halvings += 1;
            }
            if !(new_dev <= dev + 1e-10 * dev.abs()) {
                break;
            }
            let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
            beta = new_beta;
            b = new_b;
            eta = new_eta;
            dev = new_dev;
            if change < settings.relative_tolerance {
                converged = true;
                break;
            }
        }
        Ok((beta.iter().copied().collect(), converged))
    }
}

/// Fits `formula`, which must contain one `(1 | group)` term.
pub fn fit_glmm(
    formula: &ModelFormula,
    data: &RRDataset,
    link: LinkFamily,
    options: &FitOptions,
) -> Result<MixedFitResult> {
    let settings = &options.optimizer;
    settings.validate()?;
    options.approximation.validate()?;
    let nodes = options.approximation.nodes();
    if formula.random_intercept.is_none() {
        return Err(Error::Formula(
            "mixed model needs a `(1 | group)` term".into(),
        ));
    }
    if data.n_rows() == 0 {
        return Err(Error::Data("no rows to fit".into()));
    }
    let dm = build_design_matrices(formula, data, &options.levels)?;
    let groups = dm.groups.clone().expect("random term present");
    let y = data.response();
    let asg = data.assignments();
    let problem = Problem {
        x: &dm.x,
        y,
        assignments: asg,
        members: groups.members(),
        link,
        exec: options.exec,
    };
    let p = dm.x.ncols();
    let n = y.len();

    let start = irls(&dm.x, y, asg, link, settings, options.exec)?;
    let glm_beta: Vec<f64> = start.beta.iter().copied().collect();
    let (lo, hi) = settings.bounds;

    // Stage 1: profile log sigma with beta from penalized IRLS.
    let mut evaluations = 0usize;
    let mut pirls_ok = true;
    let mut stage1 = |log_sigma: f64| -> f64 {
        evaluations += 1;
        let sigma = log_sigma.exp();
        match problem.pirls(&glm_beta, sigma, settings) {
            Ok((beta, ok)) => {
                pirls_ok &= ok;
                problem.deviance(&beta, sigma, nodes)
            }
            Err(_) => f64::INFINITY,
        }
    };
    let outer = golden_section(&mut stage1, lo, hi, 1e-5, 200);
    if !pirls_ok {
        log::debug!("penalized IRLS hit its iteration limit during the variance search");
    }
    let mut log_sigma = outer.argmin;
    let mut converged = outer.converged && start.converged;
    let boundary_cut = lo + 1e-3;

    let (beta, sigma, boundary) = if log_sigma <= boundary_cut {
        (glm_beta.clone(), 0.0, true)
    } else {
        let sigma1 = log_sigma.exp();
        let (mut beta, ok) = problem.pirls(&glm_beta, sigma1, settings)?;
        converged &= ok;
        // Stage 2: polish (beta, log sigma) on the approximate likelihood.
        let steps = stage_steps(&problem, &beta, sigma1);
        let origin: Vec<f64> = beta.iter().copied().chain([log_sigma]).collect();
        let objective = |z: &[f64]| -> f64 {
            let theta: Vec<f64> = origin
                .iter()
                .zip(&steps)
                .zip(z)
                .map(|((o, s), z)| o + s * z)
                .collect();
            let ls = theta[p];
            if !(lo..=hi).contains(&ls) {
                return f64::INFINITY;
            }
            problem.deviance(&theta[..p], ls.exp(), nodes)
        };
        let zero = vec![0.0; p + 1];
        // in standard-error units the deviance Hessian is close to 2 I;
        // summation noise (~1e-8) limits the difference step to about 1e-3
        let mut refined = bfgs(&objective, &zero, 1e-3, 0.5, 1e-3, 60 * (p + 2) * (p + 2));
        if !refined.converged {
            let ones = vec![1.0; p + 1];
            let start = refined.argmin.clone();
            let fallback = nelder_mead(
                &objective,
                &start,
                &ones,
                1e-7,
                1e-3,
                400 * (p + 1) * (p + 1),
            );
            refined = Minimum {
                evaluations: refined.evaluations + fallback.evaluations,
                ..fallback
            };
        }
        evaluations += refined.evaluations;
        converged &= refined.converged;
        let theta: Vec<f64> = origin
            .iter()
            .zip(&steps)
            .zip(&refined.argmin)
            .map(|((o, s), z)| o + s * z)
            .collect();
        beta = theta[..p].to_vec();
        log_sigma = theta[p];
        if log_sigma <= boundary_cut {
            (glm_beta.clone(), 0.0, true)
        } else {
            (beta, log_sigma.exp(), false)
        }
    };

    let fixed = problem.fixed_eta(&beta);
    let (deviance, modes, information) = if boundary {
        let (info, _) = crate::glm::normal_equations(&dm.x, &fixed, y, asg, link, options.exec);
        (-2.0 * start.log_lik, vec![0.0; groups.n_groups()], info)
    } else {
        let integrals = problem.integrals(&beta, sigma, nodes);
        let modes: Vec<f64> = integrals.iter().map(|g| g.mode).collect();
        let eta = problem.joint_eta(&fixed, &modes);
        let (a, _, _) = problem.reduced_system(&eta, sigma);
        (integrals.iter().map(|g| g.deviance).sum(), modes, a)
    };
    let cov = invert_spd(&information)?;
    if !converged {
        log::warn!("mixed-model optimisation did not fully converge");
    }
    let linear_predictor = problem.joint_eta(&fixed, &modes);
    let fitted = linear_predictor
        .iter()
        .zip(asg)
        .map(|(&e, a)| clamp_probability(crate::link::mean(e, a.c, a.d, link), a.c, a.d))
        .collect();
    let n_params = p + 1;
    Ok(MixedFitResult {
        formula: formula.clone(),
        link,
        roles: data.roles().clone(),
        approximation: options.approximation,
        column_names: dm.column_names.clone(),
        coefficients: beta,
        standard_errors: (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        covariance: matrix_to_rows(&cov),
        sigma,
        boundary,
        grouping_name: groups.name.clone(),
        conditional_modes: modes,
        log_likelihood: -deviance / 2.0,
        deviance,
        null_deviance: crate::glm::null_deviance(
            formula.intercept,
            y,
            asg,
            link,
            settings,
            options.exec,
        )?,
        aic: deviance + 2.0 * n_params as f64,
        bic: deviance + n_params as f64 * (n as f64).ln(),
        n_obs: n,
        n_groups: groups.n_groups(),
        n_params,
        df_residual: n.saturating_sub(n_params),
        evaluations,
        converged,
        fitted,
        fitted_prevalence: linear_predictor.iter().map(|&e| link.cdf(e)).collect(),
        linear_predictor,
        encoding: dm.encoding,
        data: fit_data(data, dm.x, Some(groups)),
    })
}

fn fitted_problem(fit: &MixedFitResult, exec: Exec) -> Problem<'_> {
    let groups = fit.data.groups.as_ref().expect("mixed fit has groups");
    Problem {
        x: &fit.data.x,
        y: &fit.data.y,
        assignments: &fit.data.assignments,
        members: groups.members(),
        link: fit.link,
        exec,
    }
}

/// Approximate marginal deviance of the fitted rows at `(beta, sigma)`,
/// using the fit's approximation. `sigma = 0` gives the fixed-effects deviance.
pub fn approximate_deviance(fit: &MixedFitResult, beta: &[f64], sigma: f64) -> Result<f64> {
    if beta.len() != fit.coefficients.len() {
        return Err(Error::Domain(format!(
            "expected {} coefficients, got {}",
            fit.coefficients.len(),
            beta.len()
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!(
            "sigma = {sigma} must be finite and non-negative"
        )));
    }
    let problem = fitted_problem(fit, Exec::default());
    if sigma == 0.0 {
        let eta = problem.fixed_eta(beta);
        return Ok(
            -2.0 * log_likelihood_at(&eta, problem.y, problem.assignments, fit.link, problem.exec)
        );
    }
    Ok(problem.deviance(beta, sigma, fit.approximation.nodes()))
}

/// Simplex scales: standard errors from the reduced system for `beta`, a
/// fixed step for `log sigma`.
fn stage_steps(problem: &Problem<'_>, beta: &[f64], sigma: f64) -> Vec<f64> {
    let fixed = problem.fixed_eta(beta);
    let zeros = vec![0.0; problem.members.len()];
    let eta = problem.joint_eta(&fixed, &zeros);
    let (a, _, _) = problem.reduced_system(&eta, sigma);
    let p = beta.len();
    let mut steps: Vec<f64> = match invert_spd(&a) {
        Ok(cov) => (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        Err(_) => vec![0.1; p],
    };
    for s in steps.iter_mut() {
        if !(s.is_finite() && *s > 1e-8) {
            *s = 0.1;
        }
    }
    steps.push(0.1);
    steps
}

/// How random intercepts enter predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RandomEffects {
    /// Add the estimated mode of each row's group (zero for unseen groups).
    Conditional,
    /// Integrate over the random-intercept distribution.
    Marginal,
}

/// `E[c + d F(eta + sigma Z)]` with 20-node Gauss-Hermite.
pub fn marginal_mean(eta: f64, sigma: f64, a: &RRAssignment, link: LinkFamily) -> f64 {
    if sigma == 0.0 {
        return crate::link::mean(eta, a.c, a.d, link);
    }
    let prevalence = gauss_hermite(20).expect_normal(|z| link.cdf(eta + sigma * z));
    a.c + a.d * prevalence
}

/// Predictions for the fitted rows, or for `new_data` when given.
pub fn predict_glmm(
    fit: &MixedFitResult,
    new_data: Option<&RRDataset>,
    scale: Scale,
    effects: RandomEffects,
) -> Result<Vec<f64>> {
    let (x, assignments, group_of): (DMatrix<f64>, Vec<RRAssignment>, Vec<Option<usize>>) =
        match new_data {
            None => {
                let groups = fit.data.groups.as_ref().expect("mixed fit has groups");
                (
                    fit.data.x.clone(),
                    fit.data.assignments.clone(),
                    groups.index.iter().map(|&g| Some(g)).collect(),
                )
            }
            Some(d) => {
                let x = fit.encoding.encode(d)?;
                let labels = &fit
                    .data
                    .groups
                    .as_ref()
                    .expect("mixed fit has groups")
                    .labels;
                let name = fit.formula.random_intercept.as_deref().unwrap_or_default();
                let group_of = match d.column(name) {
                    Ok(col) => col
                        .raw
                        .iter()
                        .map(|v| labels.iter().position(|l| l == v))
                        .collect(),
                    Err(_) => vec![None; d.n_rows()],
                };
                (x, d.assignments().to_vec(), group_of)
            }
        };
    let beta = DVector::from_column_slice(&fit.coefficients);
    let fixed: Vec<f64> = (x * beta).iter().copied().collect();
    match effects {
        RandomEffects::Conditional => {
            let eta: Vec<f64> = fixed
                .iter()
                .zip(&group_of)
                .map(|(&e, g)| e + g.map_or(0.0, |g| fit.conditional_modes[g]))
                .collect();
            Ok(apply_scale(&eta, &assignments, fit.link, scale))
        }
        RandomEffects::Marginal => Ok(match scale {
            Scale::Link => fixed,
            Scale::Response => fixed
                .iter()
                .zip(&assignments)
                .map(|(&e, a)| marginal_mean(e, fit.sigma, a, fit.link))
                .collect(),
            Scale::Prevalence => fixed
                .iter()
                .map(|&e| marginal_mean(e, fit.sigma, &RRAssignment::direct(), fit.link))
                .collect(),
        }),
    }
}
