//! Deterministic convex minimization of one sample-path objective.
//!
//! The sample CVaR objective is piecewise linear, so gradient-free stopping
//! rules based on step sizes are unreliable. The default method is the
//! central-cut ellipsoid method, whose subgradient cuts also give a lower
//! bound `f(c) - sqrt(g' P g)` on the minimum over the current ellipsoid;
//! the solve stops once the best value is certified within `eps` of that
//! bound. A projected subgradient method with Polyak steps is available as
//! an alternative.
//!
//! Both methods work on free coordinates `y`: for the CVaR problem `u` is
//! minimized out exactly and `theta = (y, 1 - sum(y))`, so the sum-one
//! constraint disappears and a return floor becomes a half-space in `y`.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{grad_to_free, project, theta_from_free, ConstraintSet, HalfSpace, LossModel};
use crate::objective::{Decision, SamplePath};

/// A convex function with subgradients.
pub trait Oracle {
    fn dim(&self) -> usize;
    /// Value at `x`; writes a subgradient into `grad`.
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ellipsoid,
    PolyakSubgradient,
}

/// Rate class of a method, which decides the schedule conditions that apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceClass {
    Linear,
    Polynomial,
}

impl Method {
    pub fn convergence_class(self) -> ConvergenceClass {
        match self {
            Method::Ellipsoid => ConvergenceClass::Linear,
            Method::PolyakSubgradient => ConvergenceClass::Polynomial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: Method,
    /// Cap on objective evaluations.
    pub max_iter: usize,
    /// Initial search radius around the start.
    pub radius: f64,
    /// Search radius when warm-started from a previous stage.
    pub warm_radius: f64,
    /// Times the radius may be doubled when the optimum is near its edge.
    pub max_restarts: usize,
    pub stall_window: usize,
    #[serde(skip)]
    pub time_limit: Option<Duration>,
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::Ellipsoid,
            max_iter: 20_000,
            radius: 1.0,
            warm_radius: 0.25,
            max_restarts: 12,
            stall_window: 25,
            time_limit: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub value: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Certified (ellipsoid) or estimated (Polyak) optimality gap.
    pub gap: f64,
    pub iterations: usize,
    pub oracle_calls: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

struct Run<'a> {
    oracle: &'a mut dyn Oracle,
    opts: &'a SolverOptions,
    started: Instant,
    iterations: usize,
    oracle_calls: usize,
    trace: Vec<TraceRow>,
    best_x: Vec<f64>,
    best_f: f64,
}

impl Run<'_> {
    fn out_of_budget(&self) -> bool {
        self.iterations >= self.opts.max_iter
            || self
                .opts
                .time_limit
                .is_some_and(|t| self.started.elapsed() > t)
    }

    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let f = self.oracle.eval(x, grad)?;
        self.iterations += 1;
        self.oracle_calls += 1;
        if !f.is_finite() {
            return Err(Error::Numerical(format!("objective {f} at {x:?}")));
        }
        if f < self.best_f {
            self.best_f = f;
            self.best_x.copy_from_slice(x);
        }
        Ok(f)
    }

    fn record(&mut self, value: f64, step: f64) {
        if self.opts.record_trace {
            self.trace.push(TraceRow {
                iteration: self.iterations,
                value,
                step,
            });
        }
    }
}

fn quad(p: &[f64], n: usize, g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += p[i * n + j] * g[j];
        }
        s += g[i] * row;
    }
    s
}

/// One ellipsoid pass of radius `radius` around `center`. Returns the
/// certified gap reached.
fn ellipsoid_pass(
    run: &mut Run,
    center: &[f64],
    radius: f64,
    eps: f64,
    cuts: &[HalfSpace],
) -> Result<(f64, bool)> {
    let n = center.len();
    let mut c = center.to_vec();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        p[i * n + i] = radius * radius;
    }
    let mut g = vec![0.0; n];
    let mut lower = f64::NEG_INFINITY;
    let mut feasibility_cuts = 0usize;
    let nf = n as f64;
    loop {
        if run.out_of_budget() || feasibility_cuts > 50 * run.opts.max_iter {
            return Ok((run.best_f - lower, false));
        }
        let violated = cuts.iter().find(|h| h.slack(&c) < -1e-12);
        let is_objective_cut = violated.is_none();
        if let Some(h) = violated {
            feasibility_cuts += 1;
            for (gi, ai) in g.iter_mut().zip(&h.a) {
                *gi = -ai;
            }
        } else {
            let f = run.eval(&c, &mut g)?;
            let width = quad(&p, n, &g).max(0.0).sqrt();
            lower = lower.max(f - width);
            run.record(f, width);
            if run.best_f - lower <= eps {
                return Ok((run.best_f - lower, true));
            }
        }
        let gpg = quad(&p, n, &g);
        if !(gpg > 0.0) {
            if is_objective_cut {
                // Zero subgradient: the center is optimal.
                return Ok((0.0, true));
            }
            return Err(Error::Numerical("degenerate feasibility cut".into()));
        }
        let root = gpg.sqrt();
        let mut pg = vec![0.0; n];
        for i in 0..n {
            pg[i] = (0..n).map(|j| p[i * n + j] * g[j]).sum::<f64>() / root;
        }
        if n == 1 {
            c[0] -= 0.5 * pg[0];
            p[0] *= 0.25;
        } else {
            for i in 0..n {
                c[i] -= pg[i] / (nf + 1.0);
            }
            let k = nf * nf / (nf * nf - 1.0);
            let two = 2.0 / (nf + 1.0);
            for i in 0..n {
                for j in 0..n {
                    p[i * n + j] = k * (p[i * n + j] - two * pg[i] * pg[j]);
                }
            }
        }
    }
}

fn project_halfspaces(y: &mut [f64], cuts: &[HalfSpace]) {
    for _ in 0..100 {
        let mut moved = false;
        for h in cuts {
            let s = h.slack(y);
            if s < 0.0 {
                let a2: f64 = h.a.iter().map(|v| v * v).sum();
                for (yi, ai) in y.iter_mut().zip(&h.a) {
                    *yi -= s * ai / a2;
                }
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

fn polyak(run: &mut Run, start: &[f64], eps: f64, cuts: &[HalfSpace]) -> Result<(f64, bool)> {
    let n = start.len();
    let mut y = start.to_vec();
    let mut g = vec![0.0; n];
    let window = run.opts.stall_window.max(1);
    let mut delta = f64::NAN;
    let mut history: Vec<f64> = Vec::new();
    let mut since_shrink = 0usize;
    loop {
        if run.out_of_budget() {
            return Ok((delta, false));
        }
        let f = run.eval(&y, &mut g)?;
        if delta.is_nan() {
            delta = 0.1 * f.abs().max(eps);
        }
        history.push(run.best_f);
        since_shrink += 1;
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2 == 0.0 {
            return Ok((0.0, true));
        }
        let improvement = if history.len() > window {
            history[history.len() - 1 - window] - run.best_f
        } else {
            f64::INFINITY
        };
        if delta < eps && improvement < eps {
            return Ok((delta, true));
        }
        if since_shrink >= window && improvement < delta {
            delta *= 0.5;
            since_shrink = 0;
        }
        let mut step = (f - run.best_f + delta) / g2;
        if !step.is_finite() || step <= 0.0 {
            step = run.opts.radius / ((run.iterations as f64).sqrt() * g2.sqrt());
        }
        run.record(f, step);
        for (yi, gi) in y.iter_mut().zip(&g) {
            *yi -= step * gi;
        }
        project_halfspaces(&mut y, cuts);
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Minimizes `oracle` over `{y : a.y >= b for every cut}` from a feasible
/// `start` to objective tolerance `eps`.
pub fn minimize(
    oracle: &mut dyn Oracle,
    start: &[f64],
    eps: f64,
    cuts: &[HalfSpace],
    opts: &SolverOptions,
) -> Result<MinimizeResult> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {eps}"
        )));
    }
    let n = oracle.dim();
    if start.len() != n {
        return Err(Error::Domain(format!(
            "start has {} coordinates, oracle {n}",
            start.len()
        )));
    }
    let mut run = Run {
        oracle,
        opts,
        started: Instant::now(),
        iterations: 0,
        oracle_calls: 0,
        trace: Vec::new(),
        best_x: start.to_vec(),
        best_f: f64::INFINITY,
    };
    let (gap, converged) = if n == 0 {
        let mut g = [];
        run.eval(start, &mut g)?;
        (0.0, true)
    } else {
        match opts.method {
            Method::Ellipsoid => {
                let mut center = start.to_vec();
                let mut radius = opts.radius;
                let mut restarts = 0;
                loop {
                    let (gap, ok) = ellipsoid_pass(&mut run, &center, radius, eps, cuts)?;
                    let near_edge = distance(&run.best_x, &center) > 0.5 * radius;
                    if !ok || !near_edge || restarts >= opts.max_restarts {
                        break (gap, ok);
                    }
                    center = run.best_x.clone();
                    radius *= 2.0;
                    restarts += 1;
                }
            }
            Method::PolyakSubgradient => polyak(&mut run, start, eps, cuts)?,
        }
    };
    Ok(MinimizeResult {
        x: run.best_x,
        value: run.best_f,
        gap,
        iterations: run.iterations,
        oracle_calls: run.oracle_calls,
        converged,
        trace: run.trace,
    })
}

/// The sample CVaR objective as a function of the free coordinates.
pub struct CvarOracle<'a> {
    path: &'a SamplePath,
    loss: &'a dyn LossModel,
    p: usize,
}

impl<'a> CvarOracle<'a> {
    pub fn new(path: &'a SamplePath, loss: &'a dyn LossModel) -> Self {
        Self {
            path,
            loss,
            p: loss.theta_dim(),
        }
    }
}

impl Oracle for CvarOracle<'_> {
    fn dim(&self) -> usize {
        self.p - 1
    }

    fn eval(&mut self, y: &[f64], grad: &mut [f64]) -> Result<f64> {
        let theta = theta_from_free(y);
        let fit = self.path.min_over_u(self.loss, &theta)?;
        grad.copy_from_slice(&grad_to_free(&fit.grad_theta));
        Ok(fit.value)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub solution: Decision,
    pub achieved_tol: f64,
    pub iterations: usize,
    pub oracle_calls: usize,
    pub objective_value: f64,
    pub converged: bool,
    pub method: Method,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Minimizes the sample CVaR objective of `path` over `(u, theta)` with
/// `theta` in `constraint`, warm-started from `start`.
pub fn solve(
    path: &SamplePath,
    loss: &dyn LossModel,
    start: &Decision,
    eps: f64,
    constraint: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let p = loss.theta_dim();
    if start.theta.len() != p {
        return Err(Error::Domain(format!(
            "start has {} weights, loss {p}",
            start.theta.len()
        )));
    }
    let theta0 = if constraint.is_feasible(&start.theta, 1e-12) {
        start.theta.clone()
    } else {
        project(&start.theta, constraint)?
    };
    let cuts = constraint.free_halfspaces(p);
    let mut oracle = CvarOracle::new(path, loss);
    let res = minimize(&mut oracle, &theta0[..p - 1], eps, &cuts, opts)?;
    let theta = theta_from_free(&res.x);
    let fit = path.min_over_u(loss, &theta)?;
    Ok(SolveReport {
        solution: Decision::new(fit.u, theta),
        achieved_tol: res.gap,
        iterations: res.iterations,
        oracle_calls: res.oracle_calls + 1,
        objective_value: fit.value,
        converged: res.converged,
        method: opts.method,
        trace: res.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        center: Vec<f64>,
    }

    impl Oracle for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
            let mut f = 0.0;
            for ((g, xi), ci) in grad.iter_mut().zip(x).zip(&self.center) {
                *g = 2.0 * (xi - ci);
                f += (xi - ci).powi(2);
            }
            Ok(f)
        }
    }

    #[test]
    fn scalar_quadratic_both_methods() {
        for method in [Method::Ellipsoid, Method::PolyakSubgradient] {
            let opts = SolverOptions {
                method,
                ..Default::default()
            };
            let mut q = Quadratic { center: vec![3.0] };
            let r = minimize(&mut q, &[0.0], 1e-6, &[], &opts).unwrap();
            assert!(r.converged, "{method:?}");
            assert!((r.x[0] - 3.0).abs() < 1e-3, "{method:?}: {:?}", r.x);
            assert!(r.oracle_calls >= r.iterations);
        }
    }

    #[test]
    fn halfspace_respected() {
        let mut q = Quadratic {
            center: vec![2.0, 2.0],
        };
        let cut = HalfSpace {
            a: vec![-1.0, -1.0],
            b: -1.0,
        };
        let r = minimize(
            &mut q,
            &[0.0, 0.0],
            1e-8,
            &[cut.clone()],
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(cut.slack(&r.x) >= -1e-12);
        assert!(
            (r.x[0] - 0.5).abs() < 1e-3 && (r.x[1] - 0.5).abs() < 1e-3,
            "{:?}",
            r.x
        );
    }
}
