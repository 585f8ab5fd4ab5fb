use isra::config::{CreditExperimentConfig, ReferenceConfig};
use isra::experiments::*;
use isra::loss::{ConstraintSet, CreditLoss, LinearLoss};
use isra::models::{CreditModelSpec, ModelSpec};
use isra::objective::Decision;
use isra::ra::{run_plain_ra, run_vanilla_ra, HSearch, Problem, RaSchedule};
use isra::rng::{rng_from, Purpose, SeedStream};
use isra::solver::SolverOptions;
use isra::Error;
use rand_distr::{Distribution, Normal};

fn reference(spec: &ModelSpec, beta: f64, n: usize, h: Option<f64>) -> Bench {
    let loss = LinearLoss::new(spec.dim()).unwrap();
    let problem = Problem {
        model: spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let cfg = ReferenceConfig {
        n,
        h,
        rel_eps: 1e-6,
        cache_dir: None,
    };
    reference_solution(&problem, beta, &cfg, 3, &SolverOptions::default(), "test").unwrap()
}

#[test]
fn exponential_reference_matches_closed_form() {
    let spec = ModelSpec::independent(vec![1.0]).unwrap();
    let b = reference(&spec, 1e-2, 200_000, None);
    let exact = 100f64.ln() + 1.0;
    assert!(
        (b.reference.c / exact - 1.0).abs() < 0.01,
        "{} vs {exact}",
        b.reference.c
    );
}

#[test]
fn weibull_reference_matches_closed_form() {
    let spec = ModelSpec::independent(vec![0.5]).unwrap();
    let b = reference(&spec, 1e-2, 200_000, Some(2.5));
    let l = 100f64.ln();
    let exact = l * l + 2.0 * l + 2.0;
    assert!(
        (b.reference.c / exact - 1.0).abs() < 0.02,
        "{} vs {exact}",
        b.reference.c
    );
}

#[test]
fn symmetric_model_has_symmetric_optimum() {
    let spec = ModelSpec::equicorrelated(vec![0.5, 0.5], 0.3).unwrap();
    let b = reference(&spec, 0.01, 100_000, Some(2.5));
    for t in &b.reference.theta {
        assert!((t - 0.5).abs() < 0.05, "{:?}", b.reference.theta);
    }
}

#[test]
fn reference_refuses_thin_tails() {
    let spec = ModelSpec::independent(vec![1.0]).unwrap();
    let loss = LinearLoss::new(1).unwrap();
    let problem = Problem {
        model: &spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let cfg = ReferenceConfig {
        n: 1000,
        ..Default::default()
    };
    match reference_solution(&problem, 1e-3, &cfg, 0, &SolverOptions::default(), "x") {
        Err(Error::InsufficientTail { n_required, .. }) => assert_eq!(n_required, 50_000),
        other => panic!(
            "expected tail refusal, got {:?}",
            other.map(|b| b.reference)
        ),
    }
}

#[test]
fn reference_cache_is_keyed_on_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::equicorrelated(vec![0.5; 2], 0.3).unwrap();
    let loss = LinearLoss::new(2).unwrap();
    let problem = Problem {
        model: &spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let cfg = ReferenceConfig {
        n: 20_000,
        cache_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let opts = SolverOptions::default();
    let a = reference_solution(&problem, 0.01, &cfg, 1, &opts, "m1").unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let again = reference_solution(&problem, 0.01, &cfg, 1, &opts, "m1").unwrap();
    assert_eq!(a.reference, again.reference);
    let other = reference_solution(&problem, 0.01, &cfg, 1, &opts, "m2").unwrap();
    assert_ne!(a.reference.key, other.reference.key);
    let reseeded = reference_solution(&problem, 0.01, &cfg, 2, &opts, "m1").unwrap();
    assert_ne!(a.reference.key, reseeded.reference.key);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
}

#[test]
fn rmse_of_simulated_noise() {
    let mut rng = rng_from(17);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let c = 3.0;
    let out: Vec<f64> = (0..1000)
        .map(|_| c * (1.0 + noise.sample(&mut rng)))
        .collect();
    let r = relative_rmse(&out, c).unwrap();
    assert!((r / 0.05 - 1.0).abs() < 0.05, "{r}");
}

#[test]
fn regret_is_zero_at_optimum_and_positive_off_it() {
    let spec = ModelSpec::equicorrelated(vec![0.5; 3], 0.3).unwrap();
    let loss = LinearLoss::new(3).unwrap();
    let b = reference(&spec, 0.01, 50_000, Some(2.5));
    let at = b.regret_pct(&loss, &b.reference.theta).unwrap();
    assert!(at.abs() < 1e-3, "{at}");
    let mut t = b.reference.theta.clone();
    t[0] += 0.2;
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    assert!(b.regret_pct(&loss, &t).unwrap() > 0.1);
}

fn linear_setup<'a>(
    spec: &'a ModelSpec,
    loss: &'a LinearLoss,
    cfg: &'a isra::config::ExperimentConfig,
) -> Setup<'a> {
    Setup {
        problem: Problem {
            model: spec,
            loss,
            constraint: &ConstraintSet::SimplexSum,
        },
        cfg,
        search: HSearch::new(vec![1.0, 2.5, 4.0]),
        opts: SolverOptions::default(),
        master: SeedStream::new(9),
    }
}

#[test]
fn huge_target_stops_at_first_budget() {
    let spec = ModelSpec::equicorrelated(vec![0.5; 2], 0.3).unwrap();
    let loss = LinearLoss::new(2).unwrap();
    let mut cfg = isra::config::ExperimentConfig::default();
    cfg.replications = 3;
    let setup = linear_setup(&spec, &loss, &cfg);
    let b = reference(&spec, 0.05, 20_000, None);
    let r = samples_to_regret(&setup, &b, MethodKind::Saa, 1e6, 200, 10_000, 2).unwrap();
    assert_eq!(r.budget, 200);
    assert_eq!(r.trace.len(), 1);
    assert!(!r.capped);
    let capped = samples_to_regret(&setup, &b, MethodKind::Saa, 1e-9, 200, 800, 2).unwrap();
    assert!(capped.capped);
    assert_eq!(capped.budget, 800);
    assert_eq!(
        capped.trace.iter().map(|t| t.0).collect::<Vec<_>>(),
        vec![200, 400, 800]
    );
}

#[test]
fn replications_are_reproducible_and_nonnegative() {
    let spec = ModelSpec::equicorrelated(vec![0.5; 2], 0.3).unwrap();
    let loss = LinearLoss::new(2).unwrap();
    let mut cfg = isra::config::ExperimentConfig::default();
    cfg.split = vec![100, 400];
    let setup = linear_setup(&spec, &loss, &cfg);
    let b = reference(&spec, 0.05, 40_000, Some(2.5));
    for m in MethodKind::ALL {
        let (e1, r1, _) = setup.replicate(&b, m, 500, 2.5, 4).unwrap();
        let (e2, r2, _) = setup.replicate(&b, m, 500, 2.5, 4).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(r1, r2);
        assert!(r1.iter().all(|r| *r >= -1e-6), "{m:?}: {r1:?}");
    }
}

#[test]
fn degenerate_box_is_single_point() {
    let spec = ModelSpec::equicorrelated(vec![0.5; 2], 0.3).unwrap();
    let loss = LinearLoss::new(2).unwrap();
    let problem = Problem {
        model: &spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let at = Decision::new(12.0, vec![0.5, 0.5]);
    let a = worst_case_se(&problem, 0.01, 0.0, 1000, &[2.5], 7, 5000, &at, 4).unwrap();
    assert_eq!(a.points, 1);
    assert_eq!(a.saa.at, at);
    let b = worst_case_se(&problem, 0.01, 0.0, 1000, &[2.5], 1, 5000, &at, 4).unwrap();
    assert_eq!(a.saa.rel_se, b.saa.rel_se);
    assert_eq!(a.is[0].rel_se, b.is[0].rel_se);
    // Relative SE scales as n^{-1/2}.
    let c = worst_case_se(&problem, 0.01, 0.0, 4000, &[2.5], 1, 5000, &at, 4).unwrap();
    assert!((a.saa.rel_se / c.saa.rel_se - 2.0).abs() < 1e-9);
}

#[test]
fn worst_case_is_stable_under_grid_refinement() {
    let spec = ModelSpec::equicorrelated(vec![0.5; 2], 0.3).unwrap();
    let loss = LinearLoss::new(2).unwrap();
    let problem = Problem {
        model: &spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let b = reference(&spec, 1e-3, 100_000, Some(2.5));
    let at = b.decision();
    let coarse = worst_case_se(&problem, 1e-3, 0.2, 2000, &[2.5], 5, 50_000, &at, 8).unwrap();
    let fine = worst_case_se(&problem, 1e-3, 0.2, 2000, &[2.5], 9, 50_000, &at, 8).unwrap();
    assert!((fine.saa.rel_se / coarse.saa.rel_se - 1.0).abs() < 0.2);
    assert!((fine.is[0].rel_se / coarse.is[0].rel_se - 1.0).abs() < 0.2);
    assert!(fine.is[0].rel_se < fine.saa.rel_se);
}

#[test]
fn factor_is_is_neutral_without_factor_dependence() {
    let mut spec = CreditModelSpec::default_two_class();
    for c in &mut spec.classes {
        c.slopes = vec![0.0; 4];
        c.intercept = -3.5;
    }
    let constraint = ConstraintSet::ReturnFloor {
        returns: spec.returns(),
        min_return: spec.min_return,
    };
    let loss = CreditLoss::new(spec.clone());
    let problem = Problem {
        model: &spec.factors,
        loss: &loss,
        constraint: &constraint,
    };
    let beta = 0.05;
    let schedule = RaSchedule::with_sizes(vec![1000], 0.01).unwrap();
    let start = Decision::uniform(2);
    let opts = SolverOptions::default();
    let diffs: Vec<f64> = (0..20)
        .map(|r| {
            let seeds = SeedStream::new(100).child(Purpose::Replication, r);
            let p = run_plain_ra(&problem, beta, &schedule, &seeds, &start, &opts).unwrap();
            let i = run_vanilla_ra(&problem, beta, 2.5, &schedule, &seeds, &start, &opts).unwrap();
            i.final_estimate - p.final_estimate
        })
        .collect();
    let s = summarize(&diffs);
    assert!(s.mean.abs() <= 3.0 * s.se, "{s:?}");
}

#[test]
fn credit_study_keeps_portfolios_feasible() {
    let spec = CreditModelSpec::default_two_class();
    let cfg = CreditExperimentConfig {
        betas: vec![0.05],
        n: 500,
        replications: 3,
        pilot: 2000,
        h: None,
        rel_eps: 1e-3,
    };
    let reference = ReferenceConfig {
        n: 5000,
        ..Default::default()
    };
    let r = run_credit_experiment(
        &spec,
        0.05,
        &cfg,
        &reference,
        &HSearch::new(vec![1.0, 2.0, 4.0]),
        &SolverOptions::default(),
        &SeedStream::new(1),
        "credit-test",
    )
    .unwrap();
    assert!(
        r.max_constraint_residual <= 1e-10,
        "{}",
        r.max_constraint_residual
    );
    assert!(r.h_selection.is_some());
    assert_eq!(r.plain.n, 3);
    let theta = &r.reference.theta;
    assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    assert!(theta[0] * 0.04 + theta[1] * 0.06 >= 0.05 - 1e-10);
}
