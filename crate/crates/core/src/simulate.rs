//! Synthetic randomized-response datasets with a known truth.
//!
//! Every random draw comes from a ChaCha8 stream selected by `(seed, domain,
//! index)`, so a row's values do not depend on how rows are scheduled.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnRoles, RRDataset};
use crate::design::{RRAssignment, RRDesignKind};
use crate::error::{Error, Result};
use crate::formula::{build_design_matrices, parse_formula};
use crate::link::LinkFamily;
use crate::par::{map_indexed, Exec};

const ROW_DOMAIN: u64 = 0;
const GROUP_DOMAIN: u64 = 1 << 62;
const RESPONSE_DOMAIN: u64 = 2 << 62;

fn stream(seed: u64, domain: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain | index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDesign {
    pub rr_model: RRDesignKind,
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CovariateDistribution {
    Normal {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        sd: f64,
    },
    Uniform {
        min: f64,
        max: f64,
    },
    Bernoulli {
        p: f64,
    },
    /// A categorical covariate. With `cycle`, levels rotate by position
    /// (within the group when rows are grouped); otherwise they are drawn
    /// uniformly.
    Factor {
        levels: Vec<String>,
        #[serde(default)]
        cycle: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub distribution: CovariateDistribution,
}

/// Consecutive blocks of `size` rows form one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingSpec {
    pub name: String,
    pub size: usize,
    /// Draw the design once per group instead of once per row.
    #[serde(default)]
    pub design_per_group: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Truth {
    Constant {
        prevalence: f64,
    },
    Model {
        formula: String,
        coefficients: Vec<f64>,
        #[serde(default)]
        sigma: f64,
        link: LinkFamily,
        #[serde(default)]
        levels: HashMap<String, Vec<String>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n: usize,
    pub seed: u64,
    pub designs: Vec<WeightedDesign>,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    #[serde(default)]
    pub grouping: Option<GroupingSpec>,
    /// Covariate to mark as the item column of the output.
    #[serde(default)]
    pub item: Option<String>,
    pub truth: Truth,
}

/// Column names of simulated datasets.
pub const RESPONSE_COLUMN: &str = "response";
pub const MODEL_COLUMN: &str = "RRmodel";
pub const P1_COLUMN: &str = "p1";
pub const P2_COLUMN: &str = "p2";

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("simulation needs at least one row".into()));
        }
        if self.designs.is_empty() {
            return Err(Error::Domain("simulation needs at least one design".into()));
        }
        for d in &self.designs {
            if !(d.weight > 0.0 && d.weight.is_finite()) {
                return Err(Error::Domain(format!(
                    "design weight must be positive, got {}",
                    d.weight
                )));
            }
            RRAssignment::new(d.rr_model, d.p1, d.p2)?;
        }
        if let Some(g) = &self.grouping {
            if g.size == 0 {
                return Err(Error::Domain("group size must be positive".into()));
            }
        }
        for c in &self.covariates {
            let ok = match &c.distribution {
                CovariateDistribution::Normal { sd, .. } => *sd >= 0.0,
                CovariateDistribution::Uniform { min, max } => min < max,
                CovariateDistribution::Bernoulli { p } => (0.0..=1.0).contains(p),
                CovariateDistribution::Factor { levels, .. } => !levels.is_empty(),
            };
            if !ok {
                return Err(Error::Domain(format!(
                    "invalid distribution for covariate `{}`",
                    c.name
                )));
            }
        }
        match &self.truth {
            Truth::Constant { prevalence } if !(0.0..=1.0).contains(prevalence) => Err(
                Error::Domain(format!("prevalence must lie in [0, 1], got {prevalence}")),
            ),
            Truth::Model { sigma, .. } if !(*sigma >= 0.0) => {
                Err(Error::Domain("sigma must be non-negative".into()))
            }
            Truth::Model { sigma, .. } if *sigma > 0.0 && self.grouping.is_none() => {
                Err(Error::Domain("a random intercept needs a grouping".into()))
            }
            _ => Ok(()),
        }
    }

    fn group_of(&self, row: usize) -> Option<usize> {
        self.grouping.as_ref().map(|g| row / g.size)
    }
}

fn pick_design(designs: &[WeightedDesign], total: f64, u: f64) -> usize {
    let mut acc = 0.0;
    for (k, d) in designs.iter().enumerate() {
        acc += d.weight / total;
        if u < acc {
            return k;
        }
    }
    designs.len() - 1
}

enum Value {
    Number(f64),
    Label(String),
}

struct RowDraw {
    design: usize,
    covariates: Vec<Value>,
}

pub fn simulate_rr_dataset(spec: &SimulationSpec) -> Result<RRDataset> {
    simulate_rr_dataset_with(spec, Exec::default())
}

/// Generates the dataset described by `spec`; the result does not depend on
/// `exec`.
pub fn simulate_rr_dataset_with(spec: &SimulationSpec, exec: Exec) -> Result<RRDataset> {
    spec.validate()?;
    let total_weight: f64 = spec.designs.iter().map(|d| d.weight).sum();
    let n_groups = spec
        .grouping
        .as_ref()
        .map_or(0, |g| spec.n.div_ceil(g.size));
    let sigma = match &spec.truth {
        Truth::Model { sigma, .. } => *sigma,
        Truth::Constant { .. } => 0.0,
    };
    let per_group = spec.grouping.as_ref().is_some_and(|g| g.design_per_group);

    // group stream: design uniform, then the standard-normal intercept
    let groups: Vec<(usize, f64)> = map_indexed(exec, n_groups, |g| {
        let mut rng = stream(spec.seed, GROUP_DOMAIN, g);
        let design = pick_design(&spec.designs, total_weight, rng.random::<f64>());
        let z: f64 = rng.sample(StandardNormal);
        (design, sigma * z)
    });

    // row stream: design uniform, then covariates in declaration order
    let rows: Vec<RowDraw> = map_indexed(exec, spec.n, |i| {
        let mut rng = stream(spec.seed, ROW_DOMAIN, i);
        let u = rng.random::<f64>();
        let design = match spec.group_of(i) {
            Some(g) if per_group => groups[g].0,
            _ => pick_design(&spec.designs, total_weight, u),
        };
        let position = match &spec.grouping {
            Some(g) => i % g.size,
            None => i,
        };
        let covariates = spec
            .covariates
            .iter()
            .map(|c| match &c.distribution {
                CovariateDistribution::Normal { mean, sd } => {
                    let z: f64 = rng.sample(StandardNormal);
                    Value::Number(mean + sd * z)
                }
                CovariateDistribution::Uniform { min, max } => {
                    Value::Number(min + (max - min) * rng.random::<f64>())
                }
                CovariateDistribution::Bernoulli { p } => {
                    Value::Number(if rng.random::<f64>() < *p { 1.0 } else { 0.0 })
                }
                CovariateDistribution::Factor { levels, cycle } => {
                    let k = if *cycle {
                        position % levels.len()
                    } else {
                        rng.random_range(0..levels.len())
                    };
                    Value::Label(levels[k].clone())
                }
            })
            .collect();
        RowDraw { design, covariates }
    });

    let assignments: Vec<RRAssignment> = rows
        .iter()
        .map(|r| {
            let d = &spec.designs[r.design];
            RRAssignment::new(d.rr_model, d.p1, d.p2)
        })
        .collect::<Result<_>>()?;

    let mut columns = vec![
        Column::new(
            MODEL_COLUMN,
            assignments
                .iter()
                .map(|a| a.kind.name().to_string())
                .collect(),
        ),
        Column::from_numeric(P1_COLUMN, assignments.iter().map(|a| a.p1).collect()),
        Column::from_numeric(P2_COLUMN, assignments.iter().map(|a| a.p2).collect()),
    ];
    for (k, c) in spec.covariates.iter().enumerate() {
        columns.push(match &c.distribution {
            CovariateDistribution::Factor { .. } => Column::new(
                c.name.clone(),
                rows.iter()
                    .map(|r| match &r.covariates[k] {
                        Value::Label(s) => s.clone(),
                        Value::Number(v) => v.to_string(),
                    })
                    .collect(),
            ),
            _ => Column::from_numeric(
                c.name.clone(),
                rows.iter()
                    .map(|r| match &r.covariates[k] {
                        Value::Number(v) => *v,
                        Value::Label(_) => f64::NAN,
                    })
                    .collect(),
            ),
        });
    }
    if let Some(g) = &spec.grouping {
        columns.push(Column::new(
            g.name.clone(),
            (0..spec.n).map(|i| format!("{}", i / g.size + 1)).collect(),
        ));
    }
    let mut roles = ColumnRoles::new(RESPONSE_COLUMN, MODEL_COLUMN, P1_COLUMN, P2_COLUMN);
    if let Some(item) = &spec.item {
        roles = roles.with_item(item);
    }
    if let Some(g) = &spec.grouping {
        roles = roles.with_group(&g.name);
    }

    let prevalence: Vec<f64> = match &spec.truth {
        Truth::Constant { prevalence } => vec![*prevalence; spec.n],
        Truth::Model {
            formula,
            coefficients,
            link,
            levels,
            ..
        } => {
            let mut f = parse_formula(formula)?.fixed_part();
            f.response = RESPONSE_COLUMN.to_string();
            let mut scratch = columns.clone();
            scratch.push(Column::from_numeric(RESPONSE_COLUMN, vec![0.0; spec.n]));
            let scratch = RRDataset::from_columns(scratch, roles.clone())?;
            let dm = build_design_matrices(&f, &scratch, levels)?;
            if dm.x.ncols() != coefficients.len() {
                return Err(Error::Domain(format!(
                    "truth formula has {} columns ({}) but {} coefficients were given",
                    dm.x.ncols(),
                    dm.column_names.join(", "),
                    coefficients.len()
                )));
            }
            let beta = nalgebra::DVector::from_column_slice(coefficients);
            let eta = &dm.x * beta;
            (0..spec.n)
                .map(|i| {
                    let b = spec.group_of(i).map_or(0.0, |g| groups[g].1);
                    link.cdf(eta[i] + b)
                })
                .collect()
        }
    };

    let y: Vec<f64> = map_indexed(exec, spec.n, |i| {
        let a = &assignments[i];
        let p = a.response_probability(prevalence[i]);
        assert!(
            (-1e-12..=1.0 + 1e-12).contains(&p),
            "response probability {p} outside [0, 1]"
        );
        let mut rng = stream(spec.seed, RESPONSE_DOMAIN, i);
        if rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        }
    });
    columns.insert(0, Column::from_numeric(RESPONSE_COLUMN, y));
    RRDataset::from_columns(columns, roles)
}
