//! Residuals and grouped goodness-of-fit tests.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::Scale;
use crate::glmm::{predict_glmm, RandomEffects};
use crate::model::Fit;
use crate::numeric::chisq_upper_tail;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResidualKind {
    #[serde(rename = "response")]
    Response,
    #[serde(rename = "pearson")]
    Pearson,
    #[serde(rename = "deviance")]
    Deviance,
    #[serde(rename = "unconditional.response")]
    UnconditionalResponse,
    #[serde(rename = "unconditional.pearson")]
    UnconditionalPearson,
    #[serde(rename = "pearson.grouped")]
    PearsonGrouped,
    #[serde(rename = "deviance.grouped")]
    DevianceGrouped,
    #[serde(rename = "hosmer-lemeshow")]
    HosmerLemeshow,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 8] = [
        ResidualKind::Response,
        ResidualKind::Pearson,
        ResidualKind::Deviance,
        ResidualKind::UnconditionalResponse,
        ResidualKind::UnconditionalPearson,
        ResidualKind::PearsonGrouped,
        ResidualKind::DevianceGrouped,
        ResidualKind::HosmerLemeshow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::Response => "response",
            ResidualKind::Pearson => "pearson",
            ResidualKind::Deviance => "deviance",
            ResidualKind::UnconditionalResponse => "unconditional.response",
            ResidualKind::UnconditionalPearson => "unconditional.pearson",
            ResidualKind::PearsonGrouped => "pearson.grouped",
            ResidualKind::DevianceGrouped => "deviance.grouped",
            ResidualKind::HosmerLemeshow => "hosmer-lemeshow",
        }
    }

    pub fn is_grouped(self) -> bool {
        matches!(
            self,
            ResidualKind::PearsonGrouped
                | ResidualKind::DevianceGrouped
                | ResidualKind::HosmerLemeshow
        )
    }
}

impl fmt::Display for ResidualKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResidualKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResidualKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown residual kind `{s}`")))
    }
}

/// How observations are grouped into covariate patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PatternKey {
    /// Identical design-matrix rows.
    #[default]
    Covariates,
    /// Identical design-matrix rows and identical `(c, d)`.
    CovariatesAndDesign,
}

/// Summary of one group of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDescriptor {
    pub size: usize,
    pub mean_response: f64,
    /// Mean fitted probability of the group.
    pub fitted: f64,
    /// Smallest and largest fitted probability in the group.
    pub bounds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector {
    pub kind: ResidualKind,
    pub values: Vec<f64>,
    pub grouping: Option<Vec<GroupDescriptor>>,
}

/// `x log(x / m)` with `0 log 0 = 0`.
fn xlogx_over(x: f64, m: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / m).ln()
    }
}

pub fn pearson_residual(y: f64, pi: f64) -> f64 {
    (y - pi) / (pi * (1.0 - pi)).sqrt()
}

/// Deviance residual of a group of `n` observations with mean `ybar`.
pub fn deviance_residual(ybar: f64, pi: f64, n: f64) -> f64 {
    let inner = 2.0 * n * (xlogx_over(ybar, pi) + xlogx_over(1.0 - ybar, 1.0 - pi));
    let sign = if ybar >= pi { 1.0 } else { -1.0 };
    sign * inner.max(0.0).sqrt()
}

fn grouped_pearson(g: &GroupDescriptor) -> f64 {
    (g.mean_response - g.fitted) / (g.fitted * (1.0 - g.fitted) / g.size as f64).sqrt()
}

fn grouped_deviance(g: &GroupDescriptor) -> f64 {
    deviance_residual(g.mean_response, g.fitted, g.size as f64)
}

fn describe(rows: &[usize], y: &[f64], fitted: &[f64]) -> GroupDescriptor {
    let n = rows.len() as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sy, mut sp) = (0.0, 0.0);
    for &i in rows {
        sy += y[i];
        sp += fitted[i];
        lo = lo.min(fitted[i]);
        hi = hi.max(fitted[i]);
    }
    GroupDescriptor {
        size: rows.len(),
        mean_response: sy / n,
        fitted: sp / n,
        bounds: (lo, hi),
    }
}

fn key_part(v: f64) -> String {
    format!("{v:.11e}")
}

/// Row indices of each covariate pattern, patterns in order of first
/// appearance.
pub fn covariate_patterns(fit: &Fit, key: PatternKey) -> Vec<Vec<usize>> {
    let d = fit.data();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..d.n_obs() {
        let mut k: Vec<String> = d.x.row(i).iter().map(|&v| key_part(v)).collect();
        if key == PatternKey::CovariatesAndDesign {
            k.push(key_part(d.assignments[i].c));
            k.push(key_part(d.assignments[i].d));
        }
        let k = k.join("|");
        let next = groups.len();
        let g = *lookup.entry(k).or_insert(next);
        if g == next {
            groups.push(Vec::new());
        }
        groups[g].push(i);
    }
    groups
}

/// Hosmer-Lemeshow groups: rows stably sorted by fitted probability and cut
/// by rank into `groups` blocks whose sizes differ by at most one.
pub fn hosmer_lemeshow_groups(fitted: &[f64], groups: usize) -> Result<Vec<Vec<usize>>> {
    let n = fitted.len();
    if groups < 1 || n < groups {
        return Err(Error::Domain(format!(
            "cannot form {groups} Hosmer-Lemeshow groups from {n} observations"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitted[a].total_cmp(&fitted[b]));
    let mut out = vec![Vec::new(); groups];
    for (rank, i) in order.into_iter().enumerate() {
        out[rank * groups / n].push(i);
    }
    Ok(out)
}

fn unconditional_fitted(fit: &Fit) -> Result<Vec<f64>> {
    match fit {
        Fit::Glmm(m) => predict_glmm(m, None, Scale::Response, RandomEffects::Marginal),
        Fit::Glm(_) => Err(Error::Domain(
            "unconditional residuals need a mixed-model fit".into(),
        )),
    }
}

/// Options for grouped residuals and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingOptions {
    pub pattern_key: PatternKey,
    pub hl_groups: usize,
}

impl Default for GroupingOptions {
    fn default() -> Self {
        GroupingOptions {
            pattern_key: PatternKey::Covariates,
            hl_groups: 10,
        }
    }
}

pub fn residuals(fit: &Fit, kind: ResidualKind) -> Result<ResidualVector> {
    residuals_with(fit, kind, &GroupingOptions::default())
}

pub fn residuals_with(
    fit: &Fit,
    kind: ResidualKind,
    options: &GroupingOptions,
) -> Result<ResidualVector> {
    let y = &fit.data().y;
    let fitted = fit.fitted();
    let per_row = |pi: &[f64], f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        y.iter().zip(pi).map(|(&y, &p)| f(y, p)).collect()
    };
    let grouped = |groups: Vec<Vec<usize>>, f: fn(&GroupDescriptor) -> f64| -> ResidualVector {
        let desc: Vec<GroupDescriptor> = groups
            .iter()
            .map(|rows| describe(rows, y, fitted))
            .collect();
        ResidualVector {
            kind,
            values: desc.iter().map(f).collect(),
            grouping: Some(desc),
        }
    };
    let plain = |values| ResidualVector {
        kind,
        values,
        grouping: None,
    };
    Ok(match kind {
        ResidualKind::Response => plain(per_row(fitted, &|y, p| y - p)),
        ResidualKind::Pearson => plain(per_row(fitted, &pearson_residual)),
        ResidualKind::Deviance => plain(per_row(fitted, &|y, p| deviance_residual(y, p, 1.0))),
        ResidualKind::UnconditionalResponse => {
            plain(per_row(&unconditional_fitted(fit)?, &|y, p| y - p))
        }
        ResidualKind::UnconditionalPearson => {
            plain(per_row(&unconditional_fitted(fit)?, &pearson_residual))
        }
        ResidualKind::PearsonGrouped => grouped(
            covariate_patterns(fit, options.pattern_key),
            grouped_pearson,
        ),
        ResidualKind::DevianceGrouped => grouped(
            covariate_patterns(fit, options.pattern_key),
            grouped_deviance,
        ),
        ResidualKind::HosmerLemeshow => grouped(
            hosmer_lemeshow_groups(fitted, options.hl_groups)?,
            grouped_pearson,
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GofTest {
    Pearson,
    Deviance,
    HosmerLemeshow,
}

impl GofTest {
    pub const ALL: [GofTest; 3] = [GofTest::Pearson, GofTest::Deviance, GofTest::HosmerLemeshow];

    pub fn label(self) -> &'static str {
        match self {
            GofTest::Pearson => "Pearson",
            GofTest::Deviance => "Deviance",
            GofTest::HosmerLemeshow => "Hosmer-Lemeshow",
        }
    }
}

impl FromStr for GofTest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(GofTest::Pearson),
            "deviance" => Ok(GofTest::Deviance),
            "hosmer-lemeshow" | "hl" => Ok(GofTest::HosmerLemeshow),
            _ => Err(Error::Domain(format!("unknown goodness-of-fit test `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofTestResult {
    pub test: GofTest,
    pub statistic: Option<f64>,
    pub df: Option<i64>,
    pub p_value: Option<f64>,
    pub groups: usize,
    /// Why the test was not computed.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HosmerLemeshowGroup {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub observed: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub response: String,
    pub predictors: Vec<String>,
    pub n_obs: usize,
    pub pattern_key: PatternKey,
    pub patterns: usize,
    pub singleton_patterns: usize,
    pub results: Vec<GofTestResult>,
    pub hosmer_lemeshow: Option<Vec<HosmerLemeshowGroup>>,
}

/// Grouped goodness-of-fit tests for a fixed-effects fit.
pub fn gof(fit: &Fit, tests: &[GofTest], options: &GroupingOptions) -> Result<GofReport> {
    if fit.is_mixed() {
        return Err(Error::Domain(
            "goodness-of-fit tests are defined for fixed-effects fits only".into(),
        ));
    }
    let y = &fit.data().y;
    let fitted = fit.fitted();
    let patterns = covariate_patterns(fit, options.pattern_key);
    let j = patterns.len();
    let singletons = patterns.iter().filter(|p| p.len() == 1).count();
    let p = fit.coefficients().len();
    let q = if fit.formula().intercept { p - 1 } else { p };
    let pattern_df = j as i64 - (q as i64 + 1);
    let pattern_skip = if pattern_df <= 0 {
        Some(format!(
            "{j} covariate patterns leave no degrees of freedom ({q} covariates)"
        ))
    } else if 2 * singletons > j {
        Some(format!(
            "{singletons} of {j} covariate patterns hold a single observation (continuous covariates)"
        ))
    } else {
        None
    };
    let pattern_desc: Vec<GroupDescriptor> = patterns
        .iter()
        .map(|rows| describe(rows, y, fitted))
        .collect();

    let mut results = Vec::new();
    let mut hl_detail = None;
    for &test in tests {
        let result = match test {
            GofTest::Pearson | GofTest::Deviance => match &pattern_skip {
                Some(why) => GofTestResult {
                    test,
                    statistic: None,
                    df: Some(pattern_df),
                    p_value: None,
                    groups: j,
                    skipped: Some(why.clone()),
                },
                None => {
                    let f = if test == GofTest::Pearson {
                        grouped_pearson
                    } else {
                        grouped_deviance
                    };
                    let stat: f64 = pattern_desc.iter().map(|g| f(g).powi(2)).sum();
                    GofTestResult {
                        test,
                        statistic: Some(stat),
                        df: Some(pattern_df),
                        p_value: Some(chisq_upper_tail(stat, pattern_df as f64)?),
                        groups: j,
                        skipped: None,
                    }
                }
            },
            GofTest::HosmerLemeshow => {
                let g = options.hl_groups;
                let df = g as i64 - 2;
                match hosmer_lemeshow_groups(fitted, g) {
                    Err(e) => GofTestResult {
                        test,
                        statistic: None,
                        df: Some(df),
                        p_value: None,
                        groups: g,
                        skipped: Some(e.to_string()),
                    },
                    Ok(_) if df <= 0 => GofTestResult {
                        test,
                        statistic: None,
                        df: Some(df),
                        p_value: None,
                        groups: g,
                        skipped: Some("at least 3 groups are needed".into()),
                    },
                    Ok(groups) => {
                        let desc: Vec<GroupDescriptor> = groups
                            .iter()
                            .map(|rows| describe(rows, y, fitted))
                            .collect();
                        let stat: f64 = desc.iter().map(|d| grouped_pearson(d).powi(2)).sum();
                        hl_detail = Some(
                            desc.iter()
                                .map(|d| HosmerLemeshowGroup {
                                    lower: d.bounds.0,
                                    upper: d.bounds.1,
                                    n: d.size,
                                    observed: d.mean_response * d.size as f64,
                                    expected: d.fitted * d.size as f64,
                                })
                                .collect(),
                        );
                        GofTestResult {
                            test,
                            statistic: Some(stat),
                            df: Some(df),
                            p_value: Some(chisq_upper_tail(stat, df as f64)?),
                            groups: g,
                            skipped: None,
                        }
                    }
                }
            }
        };
        results.push(result);
    }
    Ok(GofReport {
        response: fit.formula().response.clone(),
        predictors: fit.formula().covariates(),
        n_obs: fit.n_obs(),
        pattern_key: options.pattern_key,
        patterns: j,
        singleton_patterns: singletons,
        results,
        hosmer_lemeshow: hl_detail,
    })
}

impl fmt::Display for GofReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Goodness-of-fit testing")?;
        writeln!(f, "Response variable: {}", self.response)?;
        writeln!(f, "Predictor(s): {}", self.predictors.join(" "))?;
        writeln!(f, "Entries dataset: {}", self.n_obs)?;
        writeln!(
            f,
            "Covariate patterns: {} ({} singleton){}",
            self.patterns,
            self.singleton_patterns,
            if self.pattern_key == PatternKey::CovariatesAndDesign {
                ", keyed by design"
            } else {
                ""
            }
        )?;
        writeln!(
            f,
            "---------------------------------------------------------"
        )?;
        writeln!(f, "Summary:")?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<16}{:>9} {:>8} {:>3} {:>6}",
            "", "Statistic", "P.value", "df", "Groups"
        )?;
        for r in &self.results {
            match (r.statistic, r.p_value) {
                (Some(s), Some(p)) => writeln!(
                    f,
                    "{:<16}{:>9.2} {:>8.4} {:>3} {:>6}",
                    r.test.label(),
                    s,
                    p,
                    r.df.unwrap_or(0),
                    r.groups
                )?,
                _ => writeln!(
                    f,
                    "{:<16}skipped: {}",
                    r.test.label(),
                    r.skipped.as_deref().unwrap_or("not computed")
                )?,
            }
        }
        if let Some(groups) = &self.hosmer_lemeshow {
            writeln!(f)?;
            writeln!(f, "Hosmer-Lemeshow groups:")?;
            writeln!(
                f,
                "{:>5} {:>18} {:>6} {:>9} {:>9}",
                "group", "fitted range", "n", "observed", "expected"
            )?;
            for (k, g) in groups.iter().enumerate() {
                writeln!(
                    f,
                    "{:>5} {:>8.4} - {:<7.4} {:>6} {:>9.0} {:>9.2}",
                    k + 1,
                    g.lower,
                    g.upper,
                    g.n,
                    g.observed,
                    g.expected
                )?;
            }
        }
        writeln!(
            f,
            "---------------------------------------------------------"
        )
    }
}
