mod common;

use nalgebra::DMatrix;
use readpred::lmm::{
    build_design, fit_lmm, profiled_deviance, remove_fixed_effects, t_values, Coefficient,
    DesignMatrices, FitResult, Grouping, ModelSpec, OptimizerConfig,
};
use readpred::pipeline::fit_model;
use readpred::sim::{simulate_study, SimConfig};
use readpred::Error;

use common::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn theta_zero_is_ols() {
    for seed in 0..5 {
        let d = random_instance(seed);
        let sol = profiled_deviance(&d, &[0.0, 0.0]).unwrap();
        let (beta, rss) = ols(&d.x, &d.y);
        let n = d.n() as f64;
        let dev = n * (2.0 * std::f64::consts::PI * rss / n).ln() + n;
        assert!(rel(sol.deviance, dev) < 1e-8);
        assert!(rel(sol.sigma2, rss / n) < 1e-8);
        for (a, b) in sol.beta.iter().zip(&beta) {
            assert!(rel(*a, *b) < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn pls_matches_dense_at_fixed_theta() {
    for seed in 0..5 {
        let d = random_instance(100 + seed);
        for theta in [[0.3, 1.7], [2.0, 0.0], [0.0, 0.5]] {
            let sol = profiled_deviance(&d, &theta).unwrap();
            let (dev, beta, sigma2) = dense_deviance(&d, &theta);
            assert!(
                (sol.deviance - dev).abs() < 1e-8,
                "{} vs {dev}",
                sol.deviance
            );
            assert!(rel(sol.sigma2, sigma2) < 1e-9);
            for (a, b) in sol.beta.iter().zip(&beta) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn optimum_matches_dense_oracle() {
    for seed in 0..4 {
        let d = random_instance(200 + seed);
        let fit = fit_lmm(&d, &OptimizerConfig::default()).unwrap();
        let (dev, beta, _) = dense_optimum(&d);
        assert!(fit.converged);
        assert!(
            (fit.deviance - dev).abs() < 1e-4,
            "seed {seed}: {} vs {dev}",
            fit.deviance
        );
        for (a, b) in fit.beta().iter().zip(&beta) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}

#[test]
fn balanced_one_way_closed_form() {
    let (d, groups) = one_way();
    let (mean, resid, group) = one_way_ml(&groups);
    assert!(group > 0.0);
    let fit = fit_lmm(&d, &OptimizerConfig::default()).unwrap();
    assert!((fit.beta()[0] - mean).abs() < 1e-6);
    assert!(
        (fit.sigma2 - resid).abs() < 1e-6,
        "{} vs {resid}",
        fit.sigma2
    );
    assert!(
        (fit.random_effects[0].variance - group).abs() < 1e-6,
        "{} vs {group}",
        fit.random_effects[0].variance
    );
}

#[test]
fn deviance_at_any_theta_is_above_optimum() {
    let d = random_instance(7);
    let fit = fit_lmm(&d, &OptimizerConfig::default()).unwrap();
    for a in [0.0, 0.2, 0.7, 1.5, 4.0] {
        for b in [0.0, 0.3, 1.0, 3.0] {
            let dev = profiled_deviance(&d, &[a, b]).unwrap().deviance;
            assert!(dev >= fit.deviance - 1e-8);
        }
    }
}

#[test]
fn negative_theta_rejected() {
    let d = random_instance(1);
    assert!(matches!(
        profiled_deviance(&d, &[-0.1, 1.0]),
        Err(Error::Invalid(_))
    ));
}

#[test]
fn aic_bookkeeping() {
    let d = random_instance(3);
    let fit = fit_lmm(&d, &OptimizerConfig::default()).unwrap();
    assert_eq!(
        fit.aic,
        -2.0 * fit.loglik + 2.0 * (fit.p + fit.theta().len() + 1) as f64
    );
    for c in &fit.coefficients {
        assert_eq!(c.t_value, c.estimate / c.std_error);
    }
    assert!(fit.theta().iter().all(|t| *t >= 0.0));
    let json = fit.to_json().unwrap();
    let back = FitResult::from_json(&json).unwrap();
    assert_eq!(back.aic, fit.aic);
    assert_eq!(back.coefficients, fit.coefficients);
}

fn permuted(d: &DesignMatrices, seed: u64) -> DesignMatrices {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..d.n()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let x = DMatrix::from_fn(d.n(), d.p(), |i, j| d.x[(order[i], j)]);
    let groupings = d
        .groupings
        .iter()
        .map(|g| {
            let labels: Vec<u32> = order.iter().map(|&i| g.labels[g.levels[i]]).collect();
            Grouping::from_labels(&g.name, &labels)
        })
        .collect();
    DesignMatrices::new(
        order.iter().map(|&i| d.y[i]).collect(),
        x,
        d.column_names.clone(),
        groupings,
    )
    .unwrap()
}

#[test]
fn row_permutation_invariance() {
    let study = simulate_study(
        &SimConfig {
            participants: 20,
            words: 60,
            words_per_participant: 30,
            ..SimConfig::default()
        },
        5,
    )
    .unwrap();
    let ds = study.dataset(&[]).unwrap();
    let d = build_design(&ds, &ModelSpec::baseline().with_term("cloze")).unwrap();
    let a = fit_lmm(&d, &OptimizerConfig::default()).unwrap();
    let b = fit_lmm(&permuted(&d, 9), &OptimizerConfig::default()).unwrap();
    assert!(rel(a.deviance, b.deviance) < 1e-6);
    for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
        assert!(rel(x.estimate, y.estimate) < 1e-6, "{x:?} {y:?}");
        assert!(rel(x.t_value, y.t_value) < 1e-6);
    }
}

#[test]
fn t_is_invariant_to_column_scale() {
    let study = simulate_study(
        &SimConfig {
            participants: 20,
            words: 60,
            words_per_participant: 30,
            ..SimConfig::default()
        },
        6,
    )
    .unwrap();
    let ds = study.dataset(&[]).unwrap();
    let d = build_design(&ds, &ModelSpec::baseline()).unwrap();
    let a = fit_lmm(&d, &OptimizerConfig::default()).unwrap();
    for (j, c) in [(1usize, 10.0), (3, 0.1), (7, 3.0)] {
        let mut x = d.x.clone();
        x.column_mut(j).scale_mut(c);
        let scaled =
            DesignMatrices::new(d.y.clone(), x, d.column_names.clone(), d.groupings.clone())
                .unwrap();
        let b = fit_lmm(&scaled, &OptimizerConfig::default()).unwrap();
        let (ta, tb) = (a.coefficients[j].t_value, b.coefficients[j].t_value);
        assert!(rel(tb.abs(), ta.abs()) < 1e-3, "column {j}: {ta} vs {tb}");
        assert!(rel(b.coefficients[j].estimate * c, a.coefficients[j].estimate) < 1e-3);
    }
}

#[test]
fn adding_a_column_never_raises_deviance() {
    for seed in 0..3 {
        let study = simulate_study(
            &SimConfig {
                participants: 15,
                words: 50,
                words_per_participant: 25,
                ..SimConfig::default()
            },
            40 + seed,
        )
        .unwrap();
        let ds = study.dataset(&[]).unwrap();
        let small = fit_lmm(
            &build_design(&ds, &ModelSpec::baseline()).unwrap(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        let big = fit_lmm(
            &build_design(&ds, &ModelSpec::baseline().with_term("cloze")).unwrap(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!(big.deviance <= small.deviance + 1e-8);
    }
}

#[test]
fn recovers_simulated_effects() {
    let cfg = SimConfig::default();
    let study = simulate_study(&cfg, 11).unwrap();
    let ds = study.dataset(&[]).unwrap();
    let (fit, _) = fit_model(
        &ds,
        &ModelSpec::baseline().with_term("cloze"),
        &OptimizerConfig::default(),
    )
    .unwrap();
    assert!(fit.converged);
    let mut truth = vec![cfg.intercept];
    truth.extend(cfg.covariate_effects);
    truth.push(cfg.cloze_effect);
    for (c, b) in fit.coefficients.iter().zip(&truth) {
        assert!(
            (c.estimate - b).abs() < 3.0 * c.std_error,
            "{}: {} vs {b} (se {})",
            c.name,
            c.estimate,
            c.std_error
        );
    }
    let sd_p = fit.random_effects[0].variance.sqrt();
    let sd_w = fit.random_effects[1].variance.sqrt();
    assert!((sd_p - cfg.sd_participant).abs() < 0.05, "{sd_p}");
    assert!((sd_w - cfg.sd_word).abs() < 0.03, "{sd_w}");
    assert!((fit.sigma2.sqrt() - cfg.sd_residual).abs() < 0.01);
}

#[test]
fn zero_group_variance_hits_the_boundary() {
    let cfg = SimConfig {
        sd_word: 0.0,
        ..SimConfig::default()
    };
    let study = simulate_study(&cfg, 12).unwrap();
    let ds = study.dataset(&[]).unwrap();
    let (fit, _) = fit_model(
        &ds,
        &ModelSpec::baseline().with_term("cloze"),
        &OptimizerConfig::default(),
    )
    .unwrap();
    assert_eq!(fit.random_effects[1].name, "word_id");
    assert!(
        fit.random_effects[1].theta <= 0.05,
        "{}",
        fit.random_effects[1].theta
    );
}

#[test]
fn design_shapes_and_rank() {
    let study = simulate_study(
        &SimConfig {
            participants: 10,
            words: 40,
            words_per_participant: 20,
            words_per_line: 5,
            ..SimConfig::default()
        },
        1,
    )
    .unwrap();
    let ds = study.dataset(&[]).unwrap();
    assert_eq!(build_design(&ds, &ModelSpec::baseline()).unwrap().p(), 8);
    let m1 = build_design(&ds, &ModelSpec::baseline().with_term("cloze")).unwrap();
    assert_eq!(m1.p(), 9);
    assert_eq!(m1.column_names[0], "(Intercept)");
    assert_eq!(m1.column_names[8], "cloze");
    let dup = build_design(&ds, &ModelSpec::baseline().with_term("log_freq"));
    assert!(
        matches!(dup, Err(Error::RankDeficient(ref c)) if c == "log_freq"),
        "{dup:?}"
    );
    let missing = build_design(&ds, &ModelSpec::baseline().with_term("gpt2"));
    assert!(matches!(missing, Err(Error::MissingColumn(_))));
}

#[test]
fn single_level_grouping_rejected() {
    let r = DesignMatrices::new(
        vec![1.0, 2.0, 3.0],
        DMatrix::from_element(3, 1, 1.0),
        vec!["(Intercept)".into()],
        vec![Grouping::from_labels("g", &[1, 1, 1])],
    );
    assert!(matches!(r, Err(Error::TooFewLevels { .. })));
}

#[test]
fn t_value_threshold_is_strict() {
    let fit = FitResult {
        coefficients: vec![Coefficient {
            name: "x".into(),
            estimate: 0.5,
            std_error: 0.25,
            t_value: 0.5 / 0.25,
        }],
        random_effects: vec![],
        sigma2: 1.0,
        loglik: 0.0,
        deviance: 0.0,
        aic: 0.0,
        n: 1,
        p: 1,
        q: 0,
        converged: true,
        evaluations: 0,
        dataset_hash: None,
        fitted_fixed: vec![],
    };
    let t = t_values(&fit);
    assert_eq!(t[0].t, 2.0);
    assert!(!t[0].significant);
}

#[test]
fn residuals_add_back_to_response() {
    let d = random_instance(21);
    let fit = fit_lmm(&d, &OptimizerConfig::default()).unwrap();
    let r = remove_fixed_effects(&fit, &d).unwrap();
    assert_eq!(r.len(), d.n());
    for ((ri, fi), yi) in r.iter().zip(&fit.fitted_fixed).zip(&d.y) {
        assert!((ri + fi - yi).abs() < 1e-12);
    }

    let (d1, _) = one_way();
    let fit = fit_lmm(&d1, &OptimizerConfig::default()).unwrap();
    let r = remove_fixed_effects(&fit, &d1).unwrap();
    for (ri, yi) in r.iter().zip(&d1.y) {
        assert!((ri - (yi - fit.beta()[0])).abs() < 1e-12);
    }
}

#[test]
fn no_random_factors_is_plain_regression() {
    let d = random_instance(2);
    let plain =
        DesignMatrices::new(d.y.clone(), d.x.clone(), d.column_names.clone(), vec![]).unwrap();
    let fit = fit_lmm(&plain, &OptimizerConfig::default()).unwrap();
    let (beta, rss) = ols(&d.x, &d.y);
    assert!(rel(fit.sigma2, rss / d.n() as f64) < 1e-10);
    assert!(rel(fit.beta()[1], beta[1]) < 1e-10);
    assert_eq!(fit.aic, fit.deviance + 2.0 * 4.0);
}
