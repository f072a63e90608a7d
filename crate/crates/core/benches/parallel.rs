use std::collections::HashMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rrglmm::simulate::{
    simulate_rr_dataset_with, CovariateDistribution, CovariateSpec, GroupingSpec, SimulationSpec,
    Truth, WeightedDesign,
};
use rrglmm::{fit_glm, fit_glmm, parse_formula, Exec, FitOptions, LinkFamily, RRDesignKind};

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn spec(persons: usize) -> SimulationSpec {
    let design = |rr_model, p1, p2| WeightedDesign {
        rr_model,
        p1,
        p2,
        weight: 1.0,
    };
    SimulationSpec {
        n: persons * 5,
        seed: 1,
        designs: vec![
            design(RRDesignKind::DQ, 1.0, 0.0),
            design(RRDesignKind::Crosswise, 0.2, 0.0),
            design(RRDesignKind::Forced, 0.75, 0.17),
            design(RRDesignKind::UQM, 0.67, 0.25),
        ],
        covariates: vec![
            CovariateSpec {
                name: "item".into(),
                distribution: CovariateDistribution::Factor {
                    levels: ["i1", "i2", "i3", "i4", "i5"].map(String::from).to_vec(),
                    cycle: true,
                },
            },
            CovariateSpec {
                name: "x".into(),
                distribution: CovariateDistribution::Normal { mean: 0.0, sd: 1.0 },
            },
        ],
        grouping: Some(GroupingSpec {
            name: "person".into(),
            size: 5,
            design_per_group: true,
        }),
        item: Some("item".into()),
        truth: Truth::Model {
            formula: "y ~ -1 + item + x + (1 | person)".into(),
            coefficients: vec![-1.0, -0.5, 0.0, -1.5, -0.8, 0.3],
            sigma: 0.66,
            link: LinkFamily::Probit,
            levels: HashMap::new(),
        },
    }
}

fn simulate(c: &mut Criterion) {
    let spec = spec(20_000);
    let mut group = c.benchmark_group("simulate_100k_rows");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_rr_dataset_with(&spec, exec).unwrap())
        });
    }
    group.finish();
}

fn glm(c: &mut Criterion) {
    let data = simulate_rr_dataset_with(&spec(20_000), Exec::Parallel).unwrap();
    let formula = parse_formula("response ~ -1 + item + x").unwrap();
    let mut group = c.benchmark_group("glm_fit_100k_rows");
    for (name, exec) in MODES {
        let opts = FitOptions {
            exec,
            ..Default::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_glm(&formula, &data, LinkFamily::Probit, &opts).unwrap())
        });
    }
    group.finish();
}

fn glmm(c: &mut Criterion) {
    let data = simulate_rr_dataset_with(&spec(1_000), Exec::Parallel).unwrap();
    let formula = parse_formula("response ~ -1 + item + x + (1 | person)").unwrap();
    let mut group = c.benchmark_group("glmm_laplace_fit_5k_rows");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = FitOptions {
            exec,
            ..Default::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fit_glmm(&formula, &data, LinkFamily::Probit, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, simulate, glm, glmm);
criterion_main!(benches);
