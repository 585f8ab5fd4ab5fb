use isra::loss::{ConstraintSet, CreditLoss, LinearLoss};
use isra::models::{CreditModelSpec, ModelSpec};
use isra::objective::Decision;
use isra::ra::*;
use isra::rng::SeedStream;
use isra::solver::{Method, SolverOptions};

fn linear() -> (ModelSpec, LinearLoss) {
    (
        ModelSpec::equicorrelated(vec![0.5; 3], 0.3).unwrap(),
        LinearLoss::new(3).unwrap(),
    )
}

#[test]
fn single_candidate_selection_reproduces_fixed_h() {
    let (spec, loss) = linear();
    let problem = Problem {
        model: &spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let schedule = RaSchedule::with_sizes(vec![300, 1200], 0.01).unwrap();
    let seeds = SeedStream::new(4);
    let start = Decision::uniform(3);
    let opts = SolverOptions::default();
    let fixed = run_vanilla_ra(&problem, 0.01, 2.5, &schedule, &seeds, &start, &opts).unwrap();
    let adaptive = run_enhanced_ra(
        &problem,
        0.01,
        2.5,
        &HSearch::new(vec![2.5]),
        &schedule,
        &seeds,
        &start,
        &opts,
    )
    .unwrap();
    assert!((fixed.final_estimate - adaptive.final_estimate).abs() <= 1e-9 * fixed.final_estimate);
    for (a, b) in fixed
        .final_decision
        .theta
        .iter()
        .zip(&adaptive.final_decision.theta)
    {
        assert!((a - b).abs() < 1e-9);
    }
    assert_eq!(adaptive.stages[1].h, vec![2.5, 2.5]);
    assert_eq!(adaptive.stages[1].selection.len(), 2);
}

#[test]
fn traces_are_deterministic_and_warm_started() {
    let (spec, loss) = linear();
    let problem = Problem {
        model: &spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let schedule = RaSchedule::geometric(250, 3, 0.01).unwrap();
    let seeds = SeedStream::new(12);
    let search = HSearch::new(log_grid(0.8, 6.0, 5));
    let run = || {
        run_enhanced_ra(
            &problem,
            0.003,
            2.5,
            &search,
            &schedule,
            &seeds,
            &Decision::uniform(3),
            &SolverOptions::default(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    for k in 1..a.stages.len() {
        assert_eq!(a.stages[k].start, a.stages[k - 1].report.solution);
        assert!(a.stages[k].work > a.stages[k - 1].work);
        assert!(a.stages[k].eps < a.stages[k - 1].eps);
    }
    assert!(a.stages[0].h == vec![2.5]);
}

#[test]
fn separate_selection_draws_are_supported() {
    let (spec, loss) = linear();
    let problem = Problem {
        model: &spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let schedule = RaSchedule::with_sizes(vec![300, 1200], 0.01)
        .unwrap()
        .with_cv(vec![500])
        .unwrap();
    let t = run_enhanced_ra(
        &problem,
        0.01,
        2.5,
        &HSearch::new(vec![1.0, 2.5, 4.0]),
        &schedule,
        &SeedStream::new(2),
        &Decision::uniform(3),
        &SolverOptions::default(),
    )
    .unwrap();
    assert_eq!(t.stages[1].h.len(), 1);
    assert!([1.0, 2.5, 4.0].contains(&t.stages[1].h[0]));
    assert!(RaSchedule::with_sizes(vec![300, 1200], 0.01)
        .unwrap()
        .with_cv(vec![1, 2])
        .is_err());
}

#[test]
fn both_solvers_reach_the_same_optimum() {
    let (spec, loss) = linear();
    let problem = Problem {
        model: &spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let schedule = RaSchedule::with_sizes(vec![2000], 1e-4).unwrap();
    let seeds = SeedStream::new(8);
    let go = |method| {
        let opts = SolverOptions {
            method,
            max_iter: 200_000,
            ..Default::default()
        };
        run_vanilla_ra(
            &problem,
            0.01,
            2.5,
            &schedule,
            &seeds,
            &Decision::uniform(3),
            &opts,
        )
        .unwrap()
    };
    let (e, p) = (go(Method::Ellipsoid), go(Method::PolyakSubgradient));
    assert!(e.all_converged);
    assert!((e.final_estimate - p.final_estimate).abs() < 1e-2 * e.final_estimate);
    assert!(e.final_estimate <= p.final_estimate + 1e-4 * e.final_estimate);
}

#[test]
fn credit_runs_respect_the_return_floor() {
    let spec = CreditModelSpec::default_two_class();
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
    let schedule = RaSchedule::with_sizes(vec![400, 1600], 0.5).unwrap();
    let t = run_vanilla_ra(
        &problem,
        0.01,
        2.0,
        &schedule,
        &SeedStream::new(3),
        &Decision::uniform(2),
        &SolverOptions::default(),
    )
    .unwrap();
    let th = &t.final_decision.theta;
    assert!(constraint.is_feasible(th, 1e-10), "{th:?}");
    // The floor binds: the riskier class carries the higher return.
    assert!((th[0] * 0.04 + th[1] * 0.06 - 0.05).abs() < 1e-6, "{th:?}");
}

#[test]
fn trace_files_roundtrip() {
    let (spec, loss) = linear();
    let problem = Problem {
        model: &spec,
        loss: &loss,
        constraint: &ConstraintSet::SimplexSum,
    };
    let t = run_plain_ra(
        &problem,
        0.05,
        &RaSchedule::with_sizes(vec![200, 800], 0.01).unwrap(),
        &SeedStream::new(1),
        &Decision::uniform(3),
        &SolverOptions::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.write_csv(&dir.path().join("t.csv")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().contains(",none,"));
    t.write_json(&dir.path().join("t.json")).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(v["stages"].as_array().unwrap().len(), 2);
    assert!(t.summary().contains("final: CVaR estimate"));
}
