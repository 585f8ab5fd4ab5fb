use std::path::Path;
use std::process::{Command, Output};

use isra::loss::{ConstraintSet, LinearLoss};
use isra::models::sample_x;
use isra::objective::{Decision, SamplePath};
use isra::rng::{Purpose, SeedStream};
use isra::solver::{solve, SolverOptions};

fn isra(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isra"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"
[experiments]
replications = 2
split = [100, 400]

[experiments.reference]
n = 4000

[experiments.regret_search]
betas = [0.037]
target_pct = 1000.0
start = 300
cap = 1200
refine_steps = 0

[experiments.worst_case]
beta = 0.037
n = 500
hs = [2.5]
points = 2
pilot = 2000
"#;

#[test]
fn default_schedule_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = isra(dir.path(), &["validate-schedule"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("schedule passes"));
}

#[test]
fn constant_schedule_fails_with_named_condition() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[run]\nsizes = [1000, 1000, 1000, 1000, 1000, 1000]\n",
    )
    .unwrap();
    let o = isra(dir.path(), &["--config", "c.toml", "validate-schedule"]);
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(
        s.contains("FAIL condition 3: limsup m_k^{-1} sum_{j<=k} m_j < inf"),
        "{s}"
    );
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        isra(dir.path(), &["--bogus", "solve"]).status.code(),
        Some(1)
    );
    assert_eq!(isra(dir.path(), &["frobnicate"]).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), "[run]\nbeta = 0.9\n").unwrap();
    let o = isra(dir.path(), &["--config", "bad.toml", "solve"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("beta"));
    std::fs::write(dir.path().join("typo.toml"), "[run]\nbta = 0.01\n").unwrap();
    assert_eq!(
        isra(dir.path(), &["--config", "typo.toml", "solve"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        isra(dir.path(), &["experiment", "fig9"]).status.code(),
        Some(1)
    );
}

#[test]
fn check_transform_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = isra(dir.path(), &["check-transform"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn single_plain_stage_matches_direct_solve() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "seed = 5\n[run]\nalgorithm = \"plain\"\nbeta = 0.05\nsizes = [3000]\n",
    )
    .unwrap();
    let o = isra(dir.path(), &["--config", "c.toml", "--out", "res", "solve"]);
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/trace.json")).unwrap())
            .unwrap();
    let cli_value = json["trace"]["final_estimate"].as_f64().unwrap();

    let cfg = isra::config::Config::from_toml("").unwrap();
    let model = cfg.model.build().unwrap();
    let loss = LinearLoss::new(5).unwrap();
    let batch = sample_x(
        &model,
        3000,
        SeedStream::new(5).seed(Purpose::StageSample, 0),
    )
    .unwrap();
    let path = SamplePath::plain(&batch, &loss, 0.05).unwrap();
    let rep = solve(
        &path,
        &loss,
        &Decision::uniform(5),
        0.01,
        &ConstraintSet::SimplexSum,
        &SolverOptions::default(),
    )
    .unwrap();
    assert!((rep.objective_value - cli_value).abs() < 1e-12 * cli_value);

    let csv = std::fs::read_to_string(dir.path().join("res/trace.csv")).unwrap();
    assert!(csv.starts_with("# isra "));
    assert!(csv.contains(" seed 5\n"));
}

#[test]
fn fig3b_format_and_byte_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    for out in ["a", "b"] {
        let o = isra(
            dir.path(),
            &[
                "--config",
                "c.toml",
                "--out",
                out,
                "--jobs",
                "2",
                "experiment",
                "fig3b",
            ],
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let a = std::fs::read(dir.path().join("a/fig3b.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/fig3b.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# isra "));
    assert_eq!(lines.next().unwrap(), "beta,method,samples_to_1pct");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    // Huge target: the first probed budget already meets it.
    assert!(rows.iter().all(|r| r.ends_with(",300")), "{rows:?}");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["config"]["experiments"]["replications"], 2);
    assert!(summary["provenance"]["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn seed_override_changes_header_not_hash() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    for (out, seed) in [("s1", "1"), ("s2", "2")] {
        let o = isra(
            dir.path(),
            &[
                "--config",
                "c.toml",
                "--seed",
                seed,
                "--out",
                out,
                "experiment",
                "fig1b",
            ],
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let h1 = std::fs::read_to_string(dir.path().join("s1/fig1b.csv")).unwrap();
    let h2 = std::fs::read_to_string(dir.path().join("s2/fig1b.csv")).unwrap();
    let (l1, l2) = (h1.lines().next().unwrap(), h2.lines().next().unwrap());
    assert!(l1.ends_with("seed 1") && l2.ends_with("seed 2"));
    assert_eq!(l1.split(' ').nth(3), l2.split(' ').nth(3));
}
