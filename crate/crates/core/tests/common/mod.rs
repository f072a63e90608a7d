#![allow(dead_code)]

use std::collections::HashMap;

use rrglmm::simulate::{
    CovariateDistribution, CovariateSpec, GroupingSpec, SimulationSpec, Truth, WeightedDesign,
};
use rrglmm::{Column, ColumnRoles, LinkFamily, RRAssignment, RRDataset, RRDesignKind};

/// Builds a dataset from explicit vectors. Numeric covariates come first,
/// then factors, then an optional grouping column.
pub fn dataset(
    y: &[f64],
    designs: &[RRAssignment],
    numeric: &[(&str, Vec<f64>)],
    factors: &[(&str, Vec<String>)],
    group: Option<(&str, Vec<String>)>,
) -> RRDataset {
    let mut columns = vec![
        Column::from_numeric("response", y.to_vec()),
        Column::new(
            "RRmodel",
            designs.iter().map(|a| a.kind.name().to_string()).collect(),
        ),
        Column::from_numeric("p1", designs.iter().map(|a| a.p1).collect()),
        Column::from_numeric("p2", designs.iter().map(|a| a.p2).collect()),
    ];
    for (name, v) in numeric {
        columns.push(Column::from_numeric(*name, v.clone()));
    }
    for (name, v) in factors {
        columns.push(Column::new(*name, v.clone()));
    }
    let mut roles = ColumnRoles::new("response", "RRmodel", "p1", "p2");
    if let Some((name, labels)) = group {
        columns.push(Column::new(name, labels));
        roles = roles.with_group(name);
    }
    RRDataset::from_columns(columns, roles).expect("valid test dataset")
}

pub fn design(kind: RRDesignKind, p1: f64, p2: f64) -> WeightedDesign {
    WeightedDesign {
        rr_model: kind,
        p1,
        p2,
        weight: 1.0,
    }
}

pub fn normal(name: &str) -> CovariateSpec {
    CovariateSpec {
        name: name.into(),
        distribution: CovariateDistribution::Normal { mean: 0.0, sd: 1.0 },
    }
}

pub fn factor(name: &str, levels: &[&str], cycle: bool) -> CovariateSpec {
    CovariateSpec {
        name: name.into(),
        distribution: CovariateDistribution::Factor {
            levels: levels.iter().map(|s| s.to_string()).collect(),
            cycle,
        },
    }
}

pub fn model_truth(formula: &str, coefficients: &[f64], sigma: f64, link: LinkFamily) -> Truth {
    Truth::Model {
        formula: formula.into(),
        coefficients: coefficients.to_vec(),
        sigma,
        link,
        levels: HashMap::new(),
    }
}

/// Forced(0.75, 0.67) with one standard-normal covariate `x`.
pub fn forced_spec(n: usize, seed: u64, beta: &[f64]) -> SimulationSpec {
    SimulationSpec {
        n,
        seed,
        designs: vec![design(RRDesignKind::Forced, 0.75, 0.67)],
        covariates: vec![normal("x")],
        grouping: None,
        item: None,
        truth: model_truth("y ~ x", beta, 0.0, LinkFamily::Logit),
    }
}

pub const ITEM_EFFECTS: [f64; 5] = [-1.0, -0.5, 0.0, -1.5, -0.8];

/// Person-by-item data: one design per person drawn from four designs,
/// a probit Rasch-type truth with person intercepts of sd `sigma`.
pub fn rirt_spec(persons: usize, seed: u64, sigma: f64) -> SimulationSpec {
    SimulationSpec {
        n: persons * 5,
        seed,
        designs: vec![
            design(RRDesignKind::DQ, 1.0, 0.0),
            design(RRDesignKind::Crosswise, 0.2, 0.0),
            design(RRDesignKind::Forced, 0.75, 0.17),
            design(RRDesignKind::UQM, 0.67, 0.25),
        ],
        covariates: vec![factor("item", &["i1", "i2", "i3", "i4", "i5"], true)],
        grouping: Some(GroupingSpec {
            name: "person".into(),
            size: 5,
            design_per_group: true,
        }),
        item: Some("item".into()),
        truth: model_truth(
            "y ~ -1 + item + (1 | person)",
            &ITEM_EFFECTS,
            sigma,
            LinkFamily::Probit,
        ),
    }
}

/// Central difference of `f` along each coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|j| {
            let mut up = at.to_vec();
            let mut down = at.to_vec();
            up[j] += h;
            down[j] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Plain Newton-Raphson for ordinary logistic regression.
pub fn logistic_newton(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut h = vec![vec![0.0; p]; p];
        let mut g = vec![0.0; p];
        for (row, &yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            let w = mu * (1.0 - mu);
            for j in 0..p {
                g[j] += row[j] * (yi - mu);
                for k in 0..p {
                    h[j][k] += w * row[j] * row[k];
                }
            }
        }
        let step = solve(h, g);
        beta.iter_mut().zip(&step).for_each(|(b, s)| *b += s);
        if step.iter().all(|s| s.abs() < 1e-14) {
            break;
        }
    }
    beta
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &u)| ((i as f64 + 1.0) / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Prints one acceptance line and returns whether it passed.
pub fn report(criterion: u32, title: &str, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {criterion:>2}: {title} ({detail})");
    pass
}
