use serde::{Deserialize, Serialize};

/// Iteration controls shared by the fitting routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Search interval for bounded scalar minimisation.
    pub bounds: (f64, f64),
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 25,
            relative_tolerance: 1e-8,
            bounds: (-5.0, 5.0),
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> crate::Result<()> {
        if self.max_iterations == 0 {
            return Err(crate::Error::Domain(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.relative_tolerance > 0.0) {
            return Err(crate::Error::Domain(
                "relative_tolerance must be positive".into(),
            ));
        }
        if !(self.bounds.0 < self.bounds.1) {
            return Err(crate::Error::Domain(
                "bounds must be an increasing interval".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum<T> {
    pub argmin: T,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Golden-section search for a minimum of `f` on `[lo, hi]`, stopping once
/// the bracket is narrower than `tol`.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_evaluations: usize,
) -> Minimum<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut evals = 2;
    while (b - a) > tol && evals < max_evaluations {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
        evals += 1;
    }
    let converged = (b - a) <= tol;
    // the endpoints themselves are candidates
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for edge in [lo, hi] {
        if (best.0 - edge).abs() <= 2.0 * tol {
            let fe = f(edge);
            evals += 1;
            if fe < best.1 {
                best = (edge, fe);
            }
        }
    }
    Minimum {
        argmin: best.0,
        value: best.1,
        evaluations: evals,
        converged,
    }
}

/// Nelder-Mead simplex minimisation.
///
/// `steps` gives the initial displacement along each axis. Converges when
/// the spread of function values falls below `ftol` and the simplex diameter
/// below `xtol`; one restart from the best vertex guards against a collapsed
/// simplex.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    steps: &[f64],
    ftol: f64,
    xtol: f64,
    max_evaluations: usize,
) -> Minimum<Vec<f64>> {
    let n = start.len();
    let mut evals = 0usize;
    let mut best = start.to_vec();
    let mut best_value = f(&best);
    evals += 1;
    let mut converged = false;

    for _restart in 0..2 {
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best.clone(), best_value));
        for i in 0..n {
            let mut x = best.clone();
            x[i] += steps[i];
            let v = f(&x);
            evals += 1;
            simplex.push((x, v));
        }
        converged = false;
        while evals < max_evaluations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread <= ftol && diameter <= xtol {
                converged = true;
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64, worst: &[f64]| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(worst)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let worst = simplex[n].0.clone();
            let reflected = along(1.0, &worst);
            let fr = f(&reflected);
            evals += 1;
            if fr < simplex[0].1 {
                let expanded = along(2.0, &worst);
                let fe = f(&expanded);
                evals += 1;
                simplex[n] = if fe < fr {
                    (expanded, fe)
                } else {
                    (reflected, fr)
                };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (reflected, fr);
            } else {
                let (contracted, fc) = if fr < simplex[n].1 {
                    let x = along(0.5, &worst);
                    let v = f(&x);
                    (x, v)
                } else {
                    let x = along(-0.5, &worst);
                    let v = f(&x);
                    (x, v)
                };
                evals += 1;
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (contracted, fc);
                } else {
                    let anchor = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        for (xj, aj) in vertex.0.iter_mut().zip(&anchor) {
                            *xj = aj + 0.5 * (*xj - aj);
                        }
                        vertex.1 = f(&vertex.0);
                        evals += 1;
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = simplex[0].1 < best_value;
        if simplex[0].1 <= best_value {
            best = simplex[0].0.clone();
            best_value = simplex[0].1;
        }
        if !improved && converged {
            break;
        }
    }
    Minimum {
        argmin: best,
        value: best_value,
        evaluations: evals,
        converged,
    }
}

/// Quasi-Newton (BFGS) minimisation with central-difference gradients.
///
/// `h` is the difference step, `inverse_hessian_scale` the initial inverse
/// Hessian `alpha * I`. Stops once every gradient component is below `gtol`.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    h: f64,
    inverse_hessian_scale: f64,
    gtol: f64,
    max_evaluations: usize,
) -> Minimum<Vec<f64>> {
    let n = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };
    let gradient =
        |x: &[f64], evals: &mut usize, eval: &mut dyn FnMut(&[f64], &mut usize) -> f64| {
            let mut g = vec![0.0; n];
            let mut probe = x.to_vec();
            for j in 0..n {
                probe[j] = x[j] + h;
                let up = eval(&probe, evals);
                probe[j] = x[j] - h;
                let down = eval(&probe, evals);
                probe[j] = x[j];
                g[j] = (up - down) / (2.0 * h);
            }
            g
        };
    let mut x = start.to_vec();
    let mut fx = eval(&x, &mut evals);
    let mut g = gradient(&x, &mut evals, &mut eval);
    let mut hinv = vec![vec![0.0; n]; n];
    for (j, row) in hinv.iter_mut().enumerate() {
        row[j] = inverse_hessian_scale;
    }
    let mut converged = false;
    while evals < max_evaluations {
        if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if g.iter().all(|v| v.abs() < gtol) {
            converged = true;
            break;
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| hinv[i][j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            // lost descent; restart from steepest descent
            for (i, row) in hinv.iter_mut().enumerate() {
                row.iter_mut().for_each(|v| *v = 0.0);
                row[i] = inverse_hessian_scale;
            }
            dir = g.iter().map(|v| -inverse_hessian_scale * v).collect();
            slope = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 && evals < max_evaluations {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let fc = eval(&cand, &mut evals);
            if fc.is_finite() && fc <= fx + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let g_new = gradient(&x_new, &mut evals, &mut eval);
        let step: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = step.iter().zip(&dg).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| hinv[i][j] * dg[j]).sum())
                .collect();
            let yhy: f64 = dg.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += (1.0 + yhy * rho) * rho * step[i] * step[j]
                        - rho * (hy[i] * step[j] + step[i] * hy[j]);
                }
            }
        }
        let stalled = (fx - f_new).abs() <= 1e-14 * (1.0 + fx.abs());
        x = x_new;
        fx = f_new;
        g = g_new;
        if stalled {
            converged = g.iter().all(|v| v.abs() < 1e3 * gtol);
            break;
        }
    }
    Minimum {
        argmin: x,
        value: fx,
        evaluations: evals,
        converged,
    }
}
