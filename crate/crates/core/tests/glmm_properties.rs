mod common;

use common::*;
use rrglmm::glmm::approximate_deviance;
use rrglmm::link::{mean, mean_derivative};
use rrglmm::numeric::bfgs;
use rrglmm::simulate::SimulationSpec;
use rrglmm::*;

const RIRT: &str = "response ~ -1 + item + (1 | person)";

fn fit(data: &RRDataset, approximation: Approximation) -> MixedFitResult {
    let opts = FitOptions {
        approximation,
        ..Default::default()
    };
    fit_glmm(
        &parse_formula(RIRT).unwrap(),
        data,
        LinkFamily::Probit,
        &opts,
    )
    .unwrap()
}

#[test]
fn independent_rows_give_a_small_or_boundary_variance() {
    // Under sigma = 0 the deviance drop is a 50:50 mixture of chi-square(0)
    // and chi-square(1), so it stays below 0.5 in about 76% of replicates
    // whatever the sample size. Large direct-questioning groups keep sigma
    // itself near zero.
    let mut close = 0;
    for seed in 0..10 {
        let spec = SimulationSpec {
            n: 80_000,
            seed: 300 + seed,
            designs: vec![design(RRDesignKind::DQ, 1.0, 0.0)],
            covariates: vec![normal("x")],
            grouping: Some(GroupingSpec {
                name: "g".into(),
                size: 1000,
                design_per_group: false,
            }),
            item: None,
            truth: model_truth("y ~ x + (1 | g)", &[-0.8, 0.6], 0.0, LinkFamily::Logit),
        };
        let data = simulate_rr_dataset(&spec).unwrap();
        let opts = FitOptions::default();
        let mixed = fit_glmm(
            &parse_formula("response ~ x + (1 | g)").unwrap(),
            &data,
            LinkFamily::Logit,
            &opts,
        )
        .unwrap();
        let fixed = fit_glm(
            &parse_formula("response ~ x").unwrap(),
            &data,
            LinkFamily::Logit,
            &opts,
        )
        .unwrap();
        assert!(mixed.sigma <= 0.05, "seed {seed}: sigma {}", mixed.sigma);
        let drop = fixed.deviance - mixed.deviance;
        assert!(
            drop >= -1e-6,
            "seed {seed}: mixed fit is worse by {}",
            -drop
        );
        close += (drop <= 0.5) as usize;
    }
    assert!(
        close >= 5,
        "only {close}/10 replicates within 0.5 of the fixed-effects deviance"
    );
}

use rrglmm::simulate::GroupingSpec;

#[test]
fn boundary_fit_predictions_ignore_the_random_effect() {
    let spec = SimulationSpec {
        n: 600,
        seed: 17,
        designs: vec![design(RRDesignKind::DQ, 1.0, 0.0)],
        covariates: vec![normal("x")],
        grouping: Some(GroupingSpec {
            name: "g".into(),
            size: 100,
            design_per_group: false,
        }),
        item: None,
        truth: model_truth("y ~ x + (1 | g)", &[0.0, 1.0], 0.0, LinkFamily::Logit),
    };
    let data = simulate_rr_dataset(&spec).unwrap();
    let m = fit_glmm(
        &parse_formula("response ~ x + (1 | g)").unwrap(),
        &data,
        LinkFamily::Logit,
        &FitOptions::default(),
    )
    .unwrap();
    if m.sigma == 0.0 {
        assert!(m.boundary);
        assert!(m.conditional_modes.iter().all(|&b| b == 0.0));
        let c = predict_glmm(&m, None, Scale::Response, RandomEffects::Conditional).unwrap();
        let u = predict_glmm(&m, None, Scale::Response, RandomEffects::Marginal).unwrap();
        assert_eq!(c, u);
    }
    // forcing sigma to zero reproduces the fixed-effects deviance
    let fixed = fit_glm(
        &parse_formula("response ~ x").unwrap(),
        &data,
        LinkFamily::Logit,
        &FitOptions::default(),
    )
    .unwrap();
    let at_zero = approximate_deviance(&m, &fixed.coefficients, 0.0).unwrap();
    assert!((at_zero - fixed.deviance).abs() < 1e-8);
}

#[test]
fn estimate_is_a_local_optimum_of_the_objective() {
    let data = simulate_rr_dataset(&rirt_spec(400, 31, 0.8)).unwrap();
    for approximation in [Approximation::Laplace, Approximation::Agq(7)] {
        let m = fit(&data, approximation);
        assert!(m.converged && !m.boundary);
        let at = approximate_deviance(&m, &m.coefficients, m.sigma).unwrap();
        assert!((at - m.deviance).abs() < 1e-8);
        for factor in [0.99, 1.01] {
            let moved = approximate_deviance(&m, &m.coefficients, m.sigma * factor).unwrap();
            assert!(
                at <= moved,
                "{approximation:?}: {at} > {moved} at sigma x {factor}"
            );
        }
        // profiling beta out at the moved sigma cannot beat the joint optimum
        for factor in [0.99, 1.01] {
            let sigma = m.sigma * factor;
            let scaled = |z: &[f64]| {
                let beta: Vec<f64> = m
                    .coefficients
                    .iter()
                    .zip(&m.standard_errors)
                    .zip(z)
                    .map(|((b, s), z)| b + s * z)
                    .collect();
                approximate_deviance(&m, &beta, sigma).unwrap()
            };
            let profile = bfgs(
                scaled,
                &vec![0.0; m.coefficients.len()],
                1e-3,
                0.5,
                1e-4,
                2000,
            );
            assert!(
                at <= profile.value + 1e-6,
                "{approximation:?}: profile {} below {at}",
                profile.value
            );
        }
    }
}

#[test]
fn conditional_modes_are_stationary() {
    let data = simulate_rr_dataset(&rirt_spec(300, 32, 0.66)).unwrap();
    let m = fit(&data, Approximation::Laplace);
    let groups = m.data.groups.as_ref().unwrap();
    let eta_fixed = predict_glmm(&m, None, Scale::Link, RandomEffects::Marginal).unwrap();
    let mut score = vec![0.0; groups.n_groups()];
    for (i, &g) in groups.index.iter().enumerate() {
        let a = m.data.assignments[i];
        let eta = eta_fixed[i] + m.conditional_modes[g];
        let pi = mean(eta, a.c, a.d, m.link);
        let slope = mean_derivative(eta, a.c, a.d, m.link);
        score[g] += slope * (m.data.y[i] - pi) / (pi * (1.0 - pi));
    }
    for (g, s) in score.iter().enumerate() {
        let penalized = s - m.conditional_modes[g] / (m.sigma * m.sigma);
        assert!(penalized.abs() < 1e-6, "group {g}: {penalized}");
    }
}

#[test]
fn conditional_link_predictions_add_the_modes() {
    let data = simulate_rr_dataset(&rirt_spec(200, 33, 0.66)).unwrap();
    let m = fit(&data, Approximation::Laplace);
    let conditional = predict_glmm(&m, None, Scale::Link, RandomEffects::Conditional).unwrap();
    let fixed = predict_glmm(&m, None, Scale::Link, RandomEffects::Marginal).unwrap();
    let groups = m.data.groups.as_ref().unwrap();
    for i in 0..data.n_rows() {
        assert_eq!(
            conditional[i],
            fixed[i] + m.conditional_modes[groups.index[i]]
        );
    }
    assert_eq!(conditional, m.linear_predictor);
}

#[test]
fn one_node_quadrature_is_laplace() {
    let data = simulate_rr_dataset(&rirt_spec(300, 34, 0.66)).unwrap();
    let laplace = fit(&data, Approximation::Laplace);
    let one = fit(&data, Approximation::Agq(1));
    assert!((laplace.deviance - one.deviance).abs() < 1e-8);
    assert_eq!(laplace.coefficients, one.coefficients);
    let probe = approximate_deviance(&one, &laplace.coefficients, 0.9).unwrap();
    assert!(
        (probe - approximate_deviance(&laplace, &laplace.coefficients, 0.9).unwrap()).abs() < 1e-8
    );
}

#[test]
fn information_criteria_count_the_variance() {
    let data = simulate_rr_dataset(&rirt_spec(250, 35, 0.66)).unwrap();
    let m = fit(&data, Approximation::Laplace);
    assert_eq!(m.n_params, 6);
    assert_eq!(m.n_groups, 250);
    assert!((m.aic - (m.deviance + 12.0)).abs() < 1e-9);
    assert!((m.bic - (m.deviance + 6.0 * (1250f64).ln())).abs() < 1e-9);
}

#[test]
fn comparison_with_the_fixed_effects_model() {
    let data = simulate_rr_dataset(&rirt_spec(500, 36, 0.9)).unwrap();
    let opts = FitOptions::default();
    let fe = fit_model(
        &parse_formula("response ~ -1 + item").unwrap(),
        &data,
        LinkFamily::Probit,
        &opts,
    )
    .unwrap();
    let re = fit_model(
        &parse_formula(RIRT).unwrap(),
        &data,
        LinkFamily::Probit,
        &opts,
    )
    .unwrap();
    let table = anova_lr(&fe, &re).unwrap();
    assert_eq!(table.delta_df, 1);
    assert!(table.delta_deviance > 0.0);
    assert!(table.notes.iter().any(|n| n.contains("boundary")));
    assert!(table.p_value.unwrap() < 0.05);
}

#[test]
fn marginal_predictions_shrink_toward_one_half_on_the_prevalence_scale() {
    let data = simulate_rr_dataset(&rirt_spec(200, 37, 1.0)).unwrap();
    let m = fit(&data, Approximation::Laplace);
    let eta = predict_glmm(&m, None, Scale::Link, RandomEffects::Marginal).unwrap();
    let marginal = predict_glmm(&m, None, Scale::Prevalence, RandomEffects::Marginal).unwrap();
    for (e, t) in eta.iter().zip(&marginal) {
        let plain = m.link.cdf(*e);
        assert!((t - 0.5).abs() <= (plain - 0.5).abs() + 1e-12);
    }
}

#[test]
fn invalid_requests_are_rejected() {
    let data = simulate_rr_dataset(&rirt_spec(50, 38, 0.66)).unwrap();
    let opts = FitOptions::default();
    assert!(fit_glmm(
        &parse_formula("response ~ -1 + item").unwrap(),
        &data,
        LinkFamily::Probit,
        &opts
    )
    .is_err());
    let bad = FitOptions {
        approximation: Approximation::Agq(0),
        ..Default::default()
    };
    assert!(fit_glmm(
        &parse_formula(RIRT).unwrap(),
        &data,
        LinkFamily::Probit,
        &bad
    )
    .is_err());
    let m = fit(&data, Approximation::Laplace);
    assert!(approximate_deviance(&m, &[0.0], 0.5).is_err());
    assert!(approximate_deviance(&m, &m.coefficients, -1.0).is_err());
}

#[test]
fn sequential_and_parallel_fits_agree_bitwise() {
    let data = simulate_rr_dataset(&rirt_spec(300, 39, 0.66)).unwrap();
    let formula = parse_formula(RIRT).unwrap();
    let seq = FitOptions {
        exec: Exec::Sequential,
        ..Default::default()
    };
    let par = FitOptions {
        exec: Exec::Parallel,
        ..Default::default()
    };
    let a = fit_glmm(&formula, &data, LinkFamily::Probit, &seq).unwrap();
    let b = fit_glmm(&formula, &data, LinkFamily::Probit, &par).unwrap();
    assert_eq!(a.coefficients, b.coefficients);
    assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
    assert_eq!(a.deviance.to_bits(), b.deviance.to_bits());
}
