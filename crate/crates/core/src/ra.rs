//! Retrospective approximation.
//!
//! Each stage draws a fresh batch of size `m_k`, builds the sample-path
//! objective (transformed and likelihood-weighted under IS, raw otherwise),
//! and solves it to tolerance `eps_k` starting from the previous stage's
//! solution. The enhanced variant re-selects `h` before every stage after
//! the first by minimizing the empirical second moment of the `u`-gradient,
//! `(1/n) sum 1{l(Z_h, theta) >= u} L_h^2`, at the previous solution over a
//! grid of candidates, with common random numbers.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{ConstraintSet, LossModel};
use crate::models::{sample_x, ModelSpec, SampleBatch};
use crate::objective::{Decision, SamplePath};
use crate::rng::{Purpose, SeedStream};
use crate::solver::{solve, ConvergenceClass, SolveReport, SolverOptions};
use crate::transform::{h_min, TransformParams, TransformedBatch};

/// Model, loss and decision set of one CVaR problem.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a ModelSpec,
    pub loss: &'a dyn LossModel,
    pub constraint: &'a ConstraintSet,
}

/// Stage sample sizes and tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaSchedule {
    pub sample_sizes: Vec<usize>,
    pub tolerances: Vec<f64>,
    /// Separate cross-validation sizes for the enhanced variant; entry `k`
    /// serves the selection before stage `k + 2`. When absent, the stage's
    /// own draws are cross-fitted: `h` is selected on each half and applied
    /// to the other, at no extra sample cost.
    #[serde(default)]
    pub cv_sizes: Option<Vec<usize>>,
}

impl RaSchedule {
    pub fn new(sample_sizes: Vec<usize>, tolerances: Vec<f64>) -> Result<Self> {
        let s = Self {
            sample_sizes,
            tolerances,
            cv_sizes: None,
        };
        s.check()?;
        Ok(s)
    }

    /// `m_k = m_1 2^(k-1)`, `eps_k = eps_1 / sqrt(m_k / m_1)`.
    pub fn geometric(m1: usize, stages: usize, eps1: f64) -> Result<Self> {
        let sizes: Vec<usize> = (0..stages).map(|k| m1 << k).collect();
        let tols = sizes
            .iter()
            .map(|&m| eps1 / (m as f64 / m1 as f64).sqrt())
            .collect();
        Self::new(sizes, tols)
    }

    /// Stage sizes with tolerances `eps_1 / sqrt(m_k / m_1)`.
    pub fn with_sizes(sizes: Vec<usize>, eps1: f64) -> Result<Self> {
        let m1 = *sizes
            .first()
            .ok_or_else(|| Error::Config("schedule needs at least one stage".into()))?
            as f64;
        let tols = sizes
            .iter()
            .map(|&m| eps1 / (m as f64 / m1).sqrt())
            .collect();
        Self::new(sizes, tols)
    }

    /// Adds separate cross-validation draws for `h` selection.
    pub fn with_cv(mut self, cv_sizes: Vec<usize>) -> Result<Self> {
        self.cv_sizes = Some(cv_sizes);
        self.check()?;
        Ok(self)
    }

    pub fn stages(&self) -> usize {
        self.sample_sizes.len()
    }

    /// Samples drawn over the whole run.
    pub fn budget(&self) -> usize {
        self.sample_sizes.iter().sum::<usize>()
            + self.cv_sizes.as_ref().map_or(0, |c| c.iter().sum())
    }

    pub fn check(&self) -> Result<()> {
        let k = self.sample_sizes.len();
        if k == 0 {
            return Err(Error::Config("schedule needs at least one stage".into()));
        }
        if self.tolerances.len() != k {
            return Err(Error::Config(format!(
                "{k} sample sizes but {} tolerances",
                self.tolerances.len()
            )));
        }
        if self.sample_sizes.contains(&0) {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.tolerances.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if let Some(cv) = &self.cv_sizes {
            if cv.len() + 1 != k || cv.contains(&0) {
                return Err(Error::Config(
                    "cross-validation sizes must be positive, one per stage after the first".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Finite-schedule check of one asymptotic condition.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub name: String,
    pub passed: bool,
    /// The statistic compared against `bound`.
    pub statistic: f64,
    pub bound: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub passed: bool,
    pub conditions: Vec<ConditionReport>,
}

impl std::fmt::Display for ScheduleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.conditions {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "{verdict} {}: {} (statistic {:.4}, bound {:.4})",
                c.name, c.detail, c.statistic, c.bound
            )?;
        }
        write!(
            f,
            "schedule {}",
            if self.passed { "passes" } else { "fails" }
        )
    }
}

pub const C1_LINEAR: &str = "condition 1: liminf eps_{k-1} sqrt(m_k) > 0";
pub const C1_POLYNOMIAL: &str = "condition 1: liminf log(1/sqrt(m_{k-1})) / log(eps_k) > 0";
pub const C2: &str = "condition 2: limsup (sum_{j<=k} m_j) eps_k^2 < inf";
pub const C3: &str = "condition 3: limsup m_k^{-1} sum_{j<=k} m_j < inf";

/// Relative floor for condition 1 and growth caps for conditions 2 and 3.
const C1_FLOOR: f64 = 0.5;
const C2_CAP: f64 = 4.0;
const C3_CAP: f64 = 4.0;

/// Checks the sample-size/tolerance conditions as boundedness proxies:
/// condition 1 passes when its sequence never drops below half its first
/// value, condition 2 when its sequence never exceeds four times its first
/// value, and condition 3 when `m_k^{-1} sum_{j<=k} m_j <= 4` at every stage.
pub fn validate_schedule(schedule: &RaSchedule, class: ConvergenceClass) -> ScheduleReport {
    let m: Vec<f64> = schedule.sample_sizes.iter().map(|&v| v as f64).collect();
    let eps = &schedule.tolerances;
    let k = m.len();
    let cum: Vec<f64> = m
        .iter()
        .scan(0.0, |s, v| {
            *s += v;
            Some(*s)
        })
        .collect();

    let (c1_name, c1_seq): (&str, Vec<f64>) = match class {
        ConvergenceClass::Linear => (
            C1_LINEAR,
            (1..k).map(|i| eps[i - 1] * m[i].sqrt()).collect(),
        ),
        ConvergenceClass::Polynomial => (
            C1_POLYNOMIAL,
            (1..k)
                .map(|i| (1.0 / m[i - 1].sqrt()).ln() / eps[i].ln())
                .collect(),
        ),
    };
    let c1 = if c1_seq.is_empty() {
        vacuous(c1_name)
    } else {
        let ratio = c1_seq.iter().cloned().fold(f64::INFINITY, f64::min) / c1_seq[0];
        ConditionReport {
            name: c1_name.into(),
            passed: ratio >= C1_FLOOR && c1_seq[0] > 0.0,
            statistic: ratio,
            bound: C1_FLOOR,
            detail: format!("min over stages relative to stage 2: {ratio:.4}"),
        }
    };

    let c2_seq: Vec<f64> = (0..k).map(|i| cum[i] * eps[i] * eps[i]).collect();
    let c2_ratio = c2_seq.iter().cloned().fold(0.0, f64::max) / c2_seq[0];
    let c2 = if k == 1 {
        vacuous(C2)
    } else {
        ConditionReport {
            name: C2.into(),
            passed: c2_ratio <= C2_CAP,
            statistic: c2_ratio,
            bound: C2_CAP,
            detail: format!("max over stages relative to stage 1: {c2_ratio:.4}"),
        }
    };

    let c3_max = (0..k).map(|i| cum[i] / m[i]).fold(0.0, f64::max);
    let c3 = if k == 1 {
        vacuous(C3)
    } else {
        ConditionReport {
            name: C3.into(),
            passed: c3_max <= C3_CAP,
            statistic: c3_max,
            bound: C3_CAP,
            detail: format!("max over stages: {c3_max:.4}"),
        }
    };

    let conditions = vec![c1, c2, c3];
    ScheduleReport {
        passed: conditions.iter().all(|c| c.passed),
        conditions,
    }
}

fn vacuous(name: &str) -> ConditionReport {
    ConditionReport {
        name: name.into(),
        passed: true,
        statistic: f64::NAN,
        bound: f64::NAN,
        detail: "single stage, vacuous".into(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: usize,
    pub m: usize,
    pub eps: f64,
    /// `h` per part of the stage sample (two parts when cross-fitted);
    /// empty for plain sampling.
    pub h: Vec<f64>,
    pub start: Decision,
    pub report: SolveReport,
    /// Cumulative work `W_k = sum_{j<=k} N_j m_j`.
    pub work: f64,
    /// Criterion values behind this stage's `h` (enhanced variant).
    pub selection: Vec<HSelection>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RaTrace {
    pub beta: f64,
    pub stages: Vec<StageRecord>,
    pub final_decision: Decision,
    /// Optimal value of the last sample-path problem.
    pub final_estimate: f64,
    pub all_converged: bool,
}

impl RaTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// One row per stage.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "stage,m,eps,h,iterations,oracle_calls,work,objective,achieved_tol,converged,u,theta"
        )?;
        for s in &self.stages {
            let theta: Vec<String> = s
                .report
                .solution
                .theta
                .iter()
                .map(|v| format!("{v:.10}"))
                .collect();
            writeln!(
                f,
                "{},{},{:e},{},{},{},{:e},{:.10},{:e},{},{:.10},{}",
                s.stage,
                s.m,
                s.eps,
                fmt_h(&s.h, |h| format!("{h}")),
                s.report.iterations,
                s.report.oracle_calls,
                s.work,
                s.report.objective_value,
                s.report.achieved_tol,
                s.report.converged,
                s.report.solution.u,
                theta.join(";")
            )?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            out += &format!(
                "stage {} m={} eps={:.3e} h={} iters={} value={:.6} converged={}\n",
                s.stage,
                s.m,
                s.eps,
                fmt_h(&s.h, |h| format!("{h:.4}")),
                s.report.iterations,
                s.report.objective_value,
                s.report.converged
            );
        }
        let theta: Vec<String> = self
            .final_decision
            .theta
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect();
        out += &format!(
            "final: CVaR estimate {:.6}, u = {:.6}, theta = [{}]",
            self.final_estimate,
            self.final_decision.u,
            theta.join(", ")
        );
        out
    }
}

fn fmt_h(h: &[f64], f: impl Fn(f64) -> String) -> String {
    if h.is_empty() {
        "none".into()
    } else {
        h.iter().map(|&v| f(v)).collect::<Vec<_>>().join(";")
    }
}

/// Sample-path objective for a batch, transformed when `h` is given.
pub fn build_path(
    problem: &Problem,
    beta: f64,
    h: Option<f64>,
    batch: SampleBatch,
) -> Result<SamplePath> {
    match h {
        Some(h) => {
            let params = TransformParams::new(h, beta, problem.loss.order())?;
            SamplePath::from_batch(
                &TransformedBatch::new(batch, problem.model, params)?,
                problem.loss,
            )
        }
        None => SamplePath::plain(&batch, problem.loss, beta),
    }
}

fn stage_batch(problem: &Problem, seeds: &SeedStream, k: usize, m: usize) -> Result<SampleBatch> {
    sample_x(problem.model, m, seeds.seed(Purpose::StageSample, k as u64))
}

/// Empirical second moment `(1/n) sum 1{l(z_i) >= u} L_i^2` of a batch.
pub fn h_criterion(tb: &TransformedBatch, loss: &dyn LossModel, dec: &Decision) -> f64 {
    tail_moment(tb, loss, dec).0
}

fn tail_moment(tb: &TransformedBatch, loss: &dyn LossModel, dec: &Decision) -> (f64, usize) {
    let mut f = vec![0.0; loss.feature_dim()];
    let mut total = 0.0;
    let mut hits = 0;
    for i in 0..tb.len() {
        loss.features(tb.z(i), tb.raw().scenario_seed(i), &mut f);
        if loss.eval(&f, &dec.theta) >= dec.u {
            total += tb.lr()[i] * tb.lr()[i];
            hits += 1;
        }
    }
    (total / tb.len() as f64, hits)
}

/// Candidates with fewer tail samples than this have an unresolved
/// criterion (often exactly zero) and are not eligible.
pub const MIN_TAIL_HITS: usize = 10;

/// How the criterion values on the grid are turned into a choice of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Smallest grid value of the raw criterion.
    #[default]
    GridMin,
    /// Minimizer over `[min, max]` of the grid of a least-squares parabola
    /// in `(ln h, ln criterion)` through the eligible points. The raw
    /// criterion is a heavy-tailed estimate of a flat curve; pooling the
    /// whole grid cuts the spread of the selected `h` severalfold.
    Smoothed,
}

/// Candidate grid plus selection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSearch {
    pub grid: Vec<f64>,
    #[serde(default)]
    pub rule: SelectionRule,
}

impl HSearch {
    pub fn new(grid: Vec<f64>) -> Self {
        Self {
            grid,
            rule: SelectionRule::default(),
        }
    }

    pub fn with_rule(mut self, rule: SelectionRule) -> Self {
        self.rule = rule;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HSelection {
    pub h: f64,
    pub rule: SelectionRule,
    pub grid: Vec<f64>,
    pub criteria: Vec<f64>,
    pub tail_hits: Vec<usize>,
    pub warning: Option<String>,
}

/// Minimizes the `h` criterion over the search grid on one batch (common
/// random numbers across candidates). Inadmissible candidates (`s_h <= 1`)
/// are skipped, as are candidates with fewer than [`MIN_TAIL_HITS`] tail
/// samples. Grid-min ties go to the smaller `h`. If no candidate qualifies,
/// `current` is kept with a warning.
pub fn select_h_on_batch(
    problem: &Problem,
    batch: &SampleBatch,
    dec: &Decision,
    beta: f64,
    search: &HSearch,
    current: f64,
) -> Result<HSelection> {
    let grid = &search.grid;
    let mut hs: Vec<f64> = grid.iter().cloned().filter(|&h| h > h_min(beta)).collect();
    hs.sort_by(f64::total_cmp);
    if hs.is_empty() {
        return Err(Error::StretchTooSmall {
            stretch: grid.iter().cloned().fold(0.0, f64::max) / h_min(beta),
            h_min: h_min(beta),
            beta,
        });
    }
    let mut criteria = Vec::with_capacity(hs.len());
    let mut tail_hits = Vec::with_capacity(hs.len());
    for &h in &hs {
        let params = TransformParams::new(h, beta, problem.loss.order())?;
        let tb = TransformedBatch::new(batch.clone(), problem.model, params)?;
        let (c, hits) = tail_moment(&tb, problem.loss, dec);
        criteria.push(c);
        tail_hits.push(hits);
    }
    let eligible: Vec<usize> = (0..hs.len())
        .filter(|&i| tail_hits[i] >= MIN_TAIL_HITS)
        .collect();
    let grid_min = eligible
        .iter()
        .cloned()
        .reduce(|b, i| if criteria[i] < criteria[b] { i } else { b });
    let (h, warning) = match grid_min {
        Some(b) => {
            let h = match search.rule {
                SelectionRule::GridMin => hs[b],
                SelectionRule::Smoothed => {
                    let pts: Vec<(f64, f64)> = eligible
                        .iter()
                        .map(|&i| (hs[i].ln(), criteria[i].ln()))
                        .collect();
                    parabola_argmin(&pts).map_or(hs[b], f64::exp)
                }
            };
            (h, None)
        }
        None => {
            let msg = format!(
                "fewer than {MIN_TAIL_HITS} tail samples at u = {:.4} for every h; keeping h = {current}",
                dec.u
            );
            warn!("{msg}");
            (current, Some(msg))
        }
    };
    Ok(HSelection {
        h,
        rule: search.rule,
        grid: hs,
        criteria,
        tail_hits,
        warning,
    })
}

/// Least-squares fit `y = a + b t + c t^2`, minimized over the range of `t`.
/// `None` with fewer than three distinct points.
fn parabola_argmin(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 3 {
        return None;
    }
    let x = DMatrix::from_fn(pts.len(), 3, |i, j| pts[i].0.powi(j as i32));
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let coef = (x.transpose() * &x).lu().solve(&(x.transpose() * y))?;
    let (b, c) = (coef[1], coef[2]);
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let fit = |t: f64| b * t + c * t * t;
    let t = if c > 0.0 {
        (-b / (2.0 * c)).clamp(lo, hi)
    } else if fit(lo) <= fit(hi) {
        lo
    } else {
        hi
    };
    t.is_finite().then_some(t)
}

/// [`select_h_on_batch`] on `n` fresh draws from `seed`.
pub fn select_h(
    problem: &Problem,
    dec: &Decision,
    beta: f64,
    search: &HSearch,
    n: usize,
    seed: u64,
    current: f64,
) -> Result<HSelection> {
    let batch = sample_x(problem.model, n, seed)?;
    select_h_on_batch(problem, &batch, dec, beta, search, current)
}

/// Candidate grid: `points` log-spaced values on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

enum HPolicy<'a> {
    Plain,
    Fixed(f64),
    Adaptive { h0: f64, search: &'a HSearch },
}

fn run(
    problem: &Problem,
    beta: f64,
    policy: HPolicy,
    schedule: &RaSchedule,
    seeds: &SeedStream,
    start: &Decision,
    opts: &SolverOptions,
) -> Result<RaTrace> {
    schedule.check()?;
    problem.constraint.validate(problem.loss.theta_dim())?;
    let mut h = match policy {
        HPolicy::Plain => None,
        HPolicy::Fixed(h) => Some(h),
        HPolicy::Adaptive { h0, .. } => Some(h0),
    };
    if let Some(h) = h {
        TransformParams::new(h, beta, problem.loss.order())?;
    }
    let mut current = start.clone();
    let mut stages = Vec::with_capacity(schedule.stages());
    let mut work = 0.0;
    for k in 0..schedule.stages() {
        let m = schedule.sample_sizes[k];
        let eps = schedule.tolerances[k];
        let batch = stage_batch(problem, seeds, k, m)?;
        let mut warning = None;
        let mut selection = Vec::new();
        let mut hs: Vec<f64> = h.into_iter().collect();
        let mut path = None;
        if let HPolicy::Adaptive { search, .. } = &policy {
            // The first stage has no solution to select at and runs at h0.
            if k > 0 {
                let cur = h.unwrap();
                match &schedule.cv_sizes {
                    Some(cv) => {
                        let cv_batch = sample_x(
                            problem.model,
                            cv[k - 1],
                            seeds.seed(Purpose::CrossValidation, k as u64),
                        )?;
                        selection.push(select_h_on_batch(
                            problem, &cv_batch, &current, beta, search, cur,
                        )?);
                        hs = vec![selection[0].h];
                    }
                    None if m >= 2 => {
                        // Cross-fit: each half is weighted with the h chosen
                        // on the other half, so no draw scores its own h.
                        let (a, b) = batch.split_at(m / 2);
                        let sa = select_h_on_batch(problem, &a, &current, beta, search, cur)?;
                        let sb = select_h_on_batch(problem, &b, &current, beta, search, cur)?;
                        hs = vec![sb.h, sa.h];
                        path = Some(SamplePath::concat(&[
                            build_path(problem, beta, Some(sb.h), a)?,
                            build_path(problem, beta, Some(sa.h), b)?,
                        ])?);
                        selection = vec![sa, sb];
                    }
                    None => {}
                }
                warning = selection.iter().find_map(|s| s.warning.clone());
                h = hs.first().copied().or(h);
            }
        }
        let path = match path {
            Some(p) => p,
            None => build_path(problem, beta, h, batch)?,
        };
        let stage_opts = if k == 0 {
            opts.clone()
        } else {
            SolverOptions {
                radius: opts.warm_radius,
                ..opts.clone()
            }
        };
        let report = solve(
            &path,
            problem.loss,
            &current,
            eps,
            problem.constraint,
            &stage_opts,
        )?;
        work += report.oracle_calls as f64 * m as f64;
        if !report.converged {
            let msg = format!(
                "stage {} stopped at gap {:.3e} > eps {:.3e}",
                k + 1,
                report.achieved_tol,
                eps
            );
            warn!("{msg}");
            warning = Some(msg);
        }
        info!(
            "stage {} m={m} eps={eps:.3e} iters={} value={:.6}",
            k + 1,
            report.iterations,
            report.objective_value
        );
        let record = StageRecord {
            stage: k + 1,
            m,
            eps,
            h: hs,
            start: current.clone(),
            report,
            work,
            selection,
            warning,
        };
        current = record.report.solution.clone();
        stages.push(record);
    }
    let last = stages.last().expect("at least one stage");
    Ok(RaTrace {
        beta,
        final_decision: last.report.solution.clone(),
        final_estimate: last.report.objective_value,
        all_converged: stages.iter().all(|s| s.report.converged),
        stages,
    })
}

/// Retrospective approximation with IS at a fixed `h`.
pub fn run_vanilla_ra(
    problem: &Problem,
    beta: f64,
    h: f64,
    schedule: &RaSchedule,
    seeds: &SeedStream,
    start: &Decision,
    opts: &SolverOptions,
) -> Result<RaTrace> {
    run(
        problem,
        beta,
        HPolicy::Fixed(h),
        schedule,
        seeds,
        start,
        opts,
    )
}

/// Retrospective approximation on untransformed samples; one stage is
/// plain SAA.
pub fn run_plain_ra(
    problem: &Problem,
    beta: f64,
    schedule: &RaSchedule,
    seeds: &SeedStream,
    start: &Decision,
    opts: &SolverOptions,
) -> Result<RaTrace> {
    run(problem, beta, HPolicy::Plain, schedule, seeds, start, opts)
}

/// Retrospective approximation that re-selects `h` before every stage after
/// the first, at the previous stage's solution.
#[allow(clippy::too_many_arguments)]
pub fn run_enhanced_ra(
    problem: &Problem,
    beta: f64,
    h0: f64,
    search: &HSearch,
    schedule: &RaSchedule,
    seeds: &SeedStream,
    start: &Decision,
    opts: &SolverOptions,
) -> Result<RaTrace> {
    run(
        problem,
        beta,
        HPolicy::Adaptive { h0, search },
        schedule,
        seeds,
        start,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_schedule_passes() {
        let s = RaSchedule::geometric(500, 6, 0.01).unwrap();
        let r = validate_schedule(&s, ConvergenceClass::Linear);
        assert!(r.passed, "{r}");
        assert!((r.conditions[0].statistic - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_sizes_fail() {
        let tols = (0..6).map(|k| 0.01 / 2f64.powi(k)).collect();
        let s = RaSchedule::new(vec![1000; 6], tols).unwrap();
        let r = validate_schedule(&s, ConvergenceClass::Linear);
        assert!(!r.passed);
        let failed: Vec<&str> = r
            .conditions
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(failed, vec![C1_LINEAR, C3]);
    }

    #[test]
    fn single_stage_is_vacuous() {
        let s = RaSchedule::new(vec![2500], vec![0.01]).unwrap();
        assert!(validate_schedule(&s, ConvergenceClass::Linear).passed);
        assert!(validate_schedule(&s, ConvergenceClass::Polynomial).passed);
    }

    #[test]
    fn schedule_shape_errors() {
        assert!(RaSchedule::new(vec![], vec![]).is_err());
        assert!(RaSchedule::new(vec![10, 20], vec![0.1]).is_err());
        assert!(RaSchedule::new(vec![10, 0], vec![0.1, 0.05]).is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.5, 8.0, 13);
        assert_eq!(g.len(), 13);
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[12] - 8.0).abs() < 1e-12);
        assert!((g[6] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn parabola_recovers_vertex() {
        let pts: Vec<(f64, f64)> = (0..7)
            .map(|i| {
                let t = i as f64 * 0.5;
                (t, 3.0 + 2.0 * (t - 1.3).powi(2))
            })
            .collect();
        assert!((parabola_argmin(&pts).unwrap() - 1.3).abs() < 1e-9);
        // Concave or monotone fits land on the better endpoint.
        let down: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, -(i as f64).powi(2))).collect();
        assert_eq!(parabola_argmin(&down), Some(4.0));
        assert_eq!(parabola_argmin(&pts[..2]), None);
    }
}
