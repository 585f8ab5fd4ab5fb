//! Desk-scale numerical studies: reference optima, error metrics and the
//! suites behind each results table.
//!
//! Out-of-sample values `c_beta(theta)` are all read off one large reference
//! sample, the same one that defines the reference optimum. Using common
//! draws makes regret differences far less noisy than independent
//! evaluation samples would.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    hex_digest, Config, CreditExperimentConfig, ExperimentConfig, ReferenceConfig,
};
use crate::error::{Error, Result};
use crate::loss::{ConstraintSet, CreditLoss, LinearLoss, LossModel};
use crate::models::{sample_x, CreditModelSpec};
use crate::objective::{Decision, SamplePath};
use crate::ra::{
    build_path, run_enhanced_ra, run_plain_ra, run_vanilla_ra, select_h, HSearch, HSelection,
    Problem, RaSchedule, RaTrace,
};
use crate::rng::{Purpose, SeedStream};
use crate::solver::{solve, SolverOptions};
use crate::transform::h_min;

/// Reference tail samples below which the reference optimum is refused.
pub const MIN_REFERENCE_TAIL: f64 = 50.0;

/// Reference optimum `(c_beta, u*, theta*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub beta: f64,
    pub c: f64,
    pub u: f64,
    pub theta: Vec<f64>,
    pub n: usize,
    pub h: Option<f64>,
    pub seed: u64,
    /// Content key of the cache entry.
    pub key: String,
}

/// Reference optimum together with the sample it was computed on.
pub struct Bench {
    pub reference: Reference,
    path: SamplePath,
}

impl Bench {
    pub fn decision(&self) -> Decision {
        Decision::new(self.reference.u, self.reference.theta.clone())
    }

    /// `c_beta(theta)` on the reference sample.
    pub fn value_at(&self, loss: &dyn LossModel, theta: &[f64]) -> Result<f64> {
        Ok(self.path.min_over_u(loss, theta)?.value)
    }

    /// Relative regret of `theta` in percent.
    pub fn regret_pct(&self, loss: &dyn LossModel, theta: &[f64]) -> Result<f64> {
        Ok(100.0 * (self.value_at(loss, theta)? / self.reference.c - 1.0))
    }

    pub fn path(&self) -> &SamplePath {
        &self.path
    }
}

/// High-precision solve on `cfg.n` draws, cached under `cfg.cache_dir`.
///
/// `fingerprint` must change whenever the model or loss changes; it enters
/// the cache key together with `beta`, the reference settings and the seed.
pub fn reference_solution(
    problem: &Problem,
    beta: f64,
    cfg: &ReferenceConfig,
    seed: u64,
    opts: &SolverOptions,
    fingerprint: &str,
) -> Result<Bench> {
    let tail = cfg.n as f64 * beta;
    if tail < MIN_REFERENCE_TAIL {
        return Err(Error::InsufficientTail {
            tail,
            required: MIN_REFERENCE_TAIL,
            n_required: (MIN_REFERENCE_TAIL / beta).ceil() as usize,
        });
    }
    let key = hex_digest(
        serde_json::to_string(&(fingerprint, beta, cfg.n, cfg.h, cfg.rel_eps, opts, seed))?
            .as_bytes(),
    );
    let batch = sample_x(problem.model, cfg.n, seed)?;
    let path = build_path(problem, beta, cfg.h, batch)?;
    let cache_file = cfg
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("reference-{}.json", &key[..16])));
    if let Some(f) = &cache_file {
        if let Ok(text) = std::fs::read_to_string(f) {
            if let Ok(r) = serde_json::from_str::<Reference>(&text) {
                if r.key == key {
                    return Ok(Bench { reference: r, path });
                }
            }
        }
    }
    let p = problem.loss.theta_dim();
    let start = Decision::uniform(p);
    let scale = path
        .min_over_u(problem.loss, &start.theta)
        .map(|f| f.value.abs())
        .unwrap_or(1.0);
    let eps = cfg.rel_eps * scale.max(f64::MIN_POSITIVE);
    let rep = solve(&path, problem.loss, &start, eps, problem.constraint, opts)?;
    let reference = Reference {
        beta,
        c: rep.objective_value,
        u: rep.solution.u,
        theta: rep.solution.theta,
        n: cfg.n,
        h: cfg.h,
        seed,
        key,
    };
    if let Some(f) = &cache_file {
        if let Some(dir) = f.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(f, serde_json::to_string_pretty(&reference)?)?;
    }
    Ok(Bench { reference, path })
}

/// `sqrt(mean((c_i / c - 1)^2))`.
pub fn relative_rmse(outputs: &[f64], c: f64) -> Result<f64> {
    if outputs.len() < 2 || !(c > 0.0) {
        return Err(Error::Domain(
            "relative RMSE needs c > 0 and at least two outputs".into(),
        ));
    }
    let k = outputs.len() as f64;
    Ok((outputs.iter().map(|o| (o / c - 1.0).powi(2)).sum::<f64>() / k).sqrt())
}

/// `100 * mean(c_i / c - 1)`, from out-of-sample values `c_i`.
pub fn relative_regret(values: &[f64], c: f64) -> Result<f64> {
    if values.is_empty() || !(c > 0.0) {
        return Err(Error::Domain(
            "relative regret needs c > 0 and at least one value".into(),
        ));
    }
    Ok(100.0 * values.iter().map(|v| v / c - 1.0).sum::<f64>() / values.len() as f64)
}

/// Mean, median and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub se: f64,
}

pub fn summarize(values: &[f64]) -> Stat {
    let n = values.len();
    if n == 0 {
        return Stat {
            n,
            mean: f64::NAN,
            median: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Stat {
        n,
        mean,
        median: median(values),
        se: (var / n as f64).sqrt(),
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Saa,
    VanillaRa,
    EnhancedRa,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [
        MethodKind::Saa,
        MethodKind::VanillaRa,
        MethodKind::EnhancedRa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Saa => "saa",
            MethodKind::VanillaRa => "vanilla-ra",
            MethodKind::EnhancedRa => "enhanced-ra",
        }
    }
}

/// Shared settings of the linear-portfolio studies.
pub struct Setup<'a> {
    pub problem: Problem<'a>,
    pub cfg: &'a ExperimentConfig,
    pub search: HSearch,
    pub opts: SolverOptions,
    pub master: SeedStream,
}

/// Splits `budget` across stages in the proportions of `split`.
pub fn split_budget(split: &[usize], budget: usize) -> Vec<usize> {
    let total: usize = split.iter().sum();
    let mut out: Vec<usize> = split[..split.len() - 1]
        .iter()
        .map(|&s| ((budget as f64 * s as f64 / total as f64).round() as usize).max(1))
        .collect();
    let used: usize = out.iter().sum();
    out.push(budget.saturating_sub(used).max(1));
    out
}

impl Setup<'_> {
    fn replication(&self, rep: usize) -> SeedStream {
        self.master.child(Purpose::Replication, rep as u64)
    }

    /// One run of `method` with total sample budget `budget`. Tolerances are
    /// relative to the reference value `c_ref`.
    pub fn run(
        &self,
        method: MethodKind,
        beta: f64,
        budget: usize,
        c_ref: f64,
        h0: f64,
        seeds: &SeedStream,
    ) -> Result<RaTrace> {
        let eps1 = self.cfg.eps1 * c_ref.abs();
        let start = Decision::uniform(self.problem.loss.theta_dim());
        match method {
            MethodKind::Saa => {
                let s = RaSchedule::with_sizes(vec![budget], eps1)?;
                run_plain_ra(&self.problem, beta, &s, seeds, &start, &self.opts)
            }
            MethodKind::VanillaRa => {
                let s = RaSchedule::with_sizes(split_budget(&self.cfg.split, budget), eps1)?;
                run_vanilla_ra(
                    &self.problem,
                    beta,
                    self.cfg.h,
                    &s,
                    seeds,
                    &start,
                    &self.opts,
                )
            }
            MethodKind::EnhancedRa => {
                let s = RaSchedule::with_sizes(split_budget(&self.cfg.split, budget), eps1)?;
                run_enhanced_ra(
                    &self.problem,
                    beta,
                    h0,
                    &self.search,
                    &s,
                    seeds,
                    &start,
                    &self.opts,
                )
            }
        }
    }

    /// Final estimates and regrets (percent) of `reps` replications.
    pub fn replicate(
        &self,
        bench: &Bench,
        method: MethodKind,
        budget: usize,
        h0: f64,
        reps: usize,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<RaTrace>)> {
        let beta = bench.reference.beta;
        let runs: Vec<(f64, f64, RaTrace)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let tr = self.run(
                    method,
                    beta,
                    budget,
                    bench.reference.c,
                    h0,
                    &self.replication(r),
                )?;
                let regret = bench.regret_pct(self.problem.loss, &tr.final_decision.theta)?;
                Ok((tr.final_estimate, regret, tr))
            })
            .collect::<Result<_>>()?;
        let mut est = Vec::with_capacity(reps);
        let mut reg = Vec::with_capacity(reps);
        let mut traces = Vec::with_capacity(reps);
        for (e, g, t) in runs {
            est.push(e);
            reg.push(g);
            traces.push(t);
        }
        Ok((est, reg, traces))
    }
}

/// Relative RMSE and regret of one method at one tail level.
#[derive(Debug, Clone, Serialize)]
pub struct MethodMetrics {
    pub beta: f64,
    pub method: MethodKind,
    pub budget: usize,
    pub rel_rmse: f64,
    /// Delta-method standard error of `rel_rmse`.
    pub rmse_se: f64,
    /// Relative regret in percent.
    pub regret: Stat,
    /// Mean `h` of the last stage (IS methods).
    pub final_h: Option<f64>,
    pub runtime_s: f64,
}

pub fn compare_methods(setup: &Setup, bench: &Bench, budget: usize) -> Result<Vec<MethodMetrics>> {
    let mut out = Vec::new();
    for method in MethodKind::ALL {
        let t = Instant::now();
        let (est, reg, traces) =
            setup.replicate(bench, method, budget, setup.cfg.h0, setup.cfg.replications)?;
        let c = bench.reference.c;
        let rel_rmse = relative_rmse(&est, c)?;
        let sq: Vec<f64> = est.iter().map(|e| (e / c - 1.0).powi(2)).collect();
        let sq_se = summarize(&sq).se;
        let hs: Vec<f64> = traces
            .iter()
            .filter_map(|t| {
                t.stages
                    .last()
                    .filter(|s| !s.h.is_empty())
                    .map(|s| s.h.iter().sum::<f64>() / s.h.len() as f64)
            })
            .collect();
        out.push(MethodMetrics {
            beta: bench.reference.beta,
            method,
            budget,
            rel_rmse,
            rmse_se: if rel_rmse > 0.0 {
                sq_se / (2.0 * rel_rmse)
            } else {
                0.0
            },
            regret: summarize(&reg),
            final_h: (!hs.is_empty()).then(|| hs.iter().sum::<f64>() / hs.len() as f64),
            runtime_s: t.elapsed().as_secs_f64(),
        });
        info!(
            "beta {} {}: rmse {:.4} median regret {:.3}%",
            bench.reference.beta,
            method.name(),
            rel_rmse,
            out.last().unwrap().regret.median
        );
    }
    Ok(out)
}

/// Worst relative standard error at one method over the box.
#[derive(Debug, Clone, Serialize)]
pub struct WorstPoint {
    /// `None` for plain sampling.
    pub h: Option<f64>,
    pub rel_se: f64,
    pub at: Decision,
    /// IS only: relative SE below the plain one at every grid point.
    pub dominates: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorstCase {
    pub beta: f64,
    pub r: f64,
    pub n: usize,
    pub points: usize,
    pub saa: WorstPoint,
    pub is: Vec<WorstPoint>,
}

/// Per-sample variance of the objective at `dec`, as (mean, sd).
fn term_moments(path: &SamplePath, loss: &dyn LossModel, dec: &Decision) -> (f64, f64) {
    let o = path.objective_at(loss, dec);
    let n = o.per_sample_terms.len() as f64;
    let b = path.beta();
    let terms = o.per_sample_terms.iter().map(|t| dec.u + t / b);
    let (mut s1, mut s2) = (0.0, 0.0);
    for t in terms {
        s1 += t;
        s2 += t * t;
    }
    let mean = s1 / n;
    (mean, (s2 / n - mean * mean).max(0.0).sqrt())
}

/// Worst-case relative standard error `sd / (sqrt(n) mean)` of the objective
/// estimator over the box `x*(1 - r) <= x <= x*(1 + r)` around the reference
/// `(u*, theta*)`, for plain sampling and each `h`. Variances come from a
/// pilot sample, scaled to `n` draws.
#[allow(clippy::too_many_arguments)]
pub fn worst_case_se(
    problem: &Problem,
    beta: f64,
    r: f64,
    n: usize,
    hs: &[f64],
    points: usize,
    pilot: usize,
    reference: &Decision,
    seed: u64,
) -> Result<WorstCase> {
    let batch = sample_x(problem.model, pilot, seed)?;
    let mut paths = vec![build_path(problem, beta, None, batch.clone())?];
    for &h in hs {
        paths.push(build_path(problem, beta, Some(h), batch.clone())?);
    }
    let levels: Vec<f64> = if points <= 1 || r == 0.0 {
        vec![1.0]
    } else {
        (0..points)
            .map(|i| 1.0 - r + 2.0 * r * i as f64 / (points - 1) as f64)
            .collect()
    };
    let axes = reference.theta.len() + 1;
    let total = levels.len().pow(axes as u32);
    let base = reference.as_vec();
    let at = |mut idx: usize| -> Decision {
        let mut v = base.clone();
        for x in v.iter_mut() {
            *x *= levels[idx % levels.len()];
            idx /= levels.len();
        }
        Decision::new(v[0], v[1..].to_vec())
    };
    let sqrt_n = (n as f64).sqrt();
    let rel: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let dec = at(idx);
            paths
                .iter()
                .map(|p| {
                    let (m, sd) = term_moments(p, problem.loss, &dec);
                    sd / (sqrt_n * m.abs())
                })
                .collect()
        })
        .collect();
    let worst = |j: usize| -> (f64, usize) {
        rel.iter()
            .enumerate()
            .map(|(i, v)| (v[j], i))
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
    };
    let (s, si) = worst(0);
    let saa = WorstPoint {
        h: None,
        rel_se: s,
        at: at(si),
        dominates: None,
    };
    let is = hs
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let (w, wi) = worst(k + 1);
            WorstPoint {
                h: Some(h),
                rel_se: w,
                at: at(wi),
                dominates: Some(rel.iter().all(|v| v[k + 1] < v[0])),
            }
        })
        .collect();
    Ok(WorstCase {
        beta,
        r,
        n,
        points: levels.len(),
        saa,
        is,
    })
}

/// Result of the budget search for a target regret.
#[derive(Debug, Clone, Serialize)]
pub struct RegretSearch {
    pub beta: f64,
    pub method: MethodKind,
    pub target_pct: f64,
    /// Smallest probed budget meeting the target, or the cap.
    pub budget: usize,
    pub achieved_pct: f64,
    pub capped: bool,
    /// `(budget, median regret %)` in probe order.
    pub trace: Vec<(usize, f64)>,
}

/// Doubling search over the total budget for the smallest one whose median
/// regret is at most `target_pct`, refined by bisection.
pub fn samples_to_regret(
    setup: &Setup,
    bench: &Bench,
    method: MethodKind,
    target_pct: f64,
    start: usize,
    cap: usize,
    refine_steps: usize,
) -> Result<RegretSearch> {
    if !(target_pct > 0.0) || start == 0 {
        return Err(Error::Config(
            "target must be positive and start budget nonzero".into(),
        ));
    }
    let reps = setup.cfg.replications;
    let mut trace = Vec::new();
    let probe = |b: usize, trace: &mut Vec<(usize, f64)>| -> Result<f64> {
        let (_, reg, _) = setup.replicate(bench, method, b, setup.cfg.h0, reps)?;
        let m = median(&reg);
        info!(
            "beta {} {} budget {b}: median regret {m:.3}%",
            bench.reference.beta,
            method.name()
        );
        trace.push((b, m));
        Ok(m)
    };
    let mut lo = 0;
    let mut hi = start;
    let mut at_hi = probe(hi, &mut trace)?;
    while at_hi > target_pct {
        if hi >= cap {
            return Ok(RegretSearch {
                beta: bench.reference.beta,
                method,
                target_pct,
                budget: hi,
                achieved_pct: at_hi,
                capped: true,
                trace,
            });
        }
        lo = hi;
        hi = (2 * hi).min(cap);
        at_hi = probe(hi, &mut trace)?;
    }
    if lo > 0 {
        for _ in 0..refine_steps {
            let mid = (lo + hi) / 2;
            if mid <= lo || mid >= hi {
                break;
            }
            let m = probe(mid, &mut trace)?;
            if m <= target_pct {
                hi = mid;
                at_hi = m;
            } else {
                lo = mid;
            }
        }
    }
    Ok(RegretSearch {
        beta: bench.reference.beta,
        method,
        target_pct,
        budget: hi,
        achieved_pct: at_hi,
        capped: false,
        trace,
    })
}

/// Regret of the enhanced algorithm for one starting `h_0`.
#[derive(Debug, Clone, Serialize)]
pub struct H0Point {
    pub beta: f64,
    pub h0: f64,
    pub regret: Stat,
    pub final_h: Stat,
}

pub fn h0_sweep(setup: &Setup, bench: &Bench, h0s: &[f64], budget: usize) -> Result<Vec<H0Point>> {
    let beta = bench.reference.beta;
    h0s.iter()
        .map(|&h0| {
            if h0 <= h_min(beta) {
                return Err(Error::StretchTooSmall {
                    stretch: h0 / h_min(beta),
                    h_min: h_min(beta),
                    beta,
                });
            }
            let (_, reg, traces) = setup.replicate(
                bench,
                MethodKind::EnhancedRa,
                budget,
                h0,
                setup.cfg.replications,
            )?;
            let hs: Vec<f64> = traces
                .iter()
                .map(|t| {
                    let s = t.stages.last().expect("stage");
                    s.h.iter().sum::<f64>() / s.h.len() as f64
                })
                .collect();
            Ok(H0Point {
                beta,
                h0,
                regret: summarize(&reg),
                final_h: summarize(&hs),
            })
        })
        .collect()
}

/// Spread of stage solutions across replications.
#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub beta: f64,
    pub sizes: Vec<usize>,
    /// Root total variance of `(u_k, theta_k)` across replications.
    pub sd: Vec<f64>,
    pub slope: f64,
    /// Median over replications of `W_k * |(u_k, theta_k) - (u*, theta*)|^2`.
    pub work_error: Vec<f64>,
    pub replications: usize,
}

pub fn clt_scaling(
    setup: &Setup,
    bench: &Bench,
    sizes: &[usize],
    reps: usize,
) -> Result<CltReport> {
    let beta = bench.reference.beta;
    let eps1 = setup.cfg.eps1 * bench.reference.c.abs();
    let schedule = RaSchedule::with_sizes(sizes.to_vec(), eps1)?;
    let start = Decision::uniform(setup.problem.loss.theta_dim());
    let runs: Vec<RaTrace> = (0..reps)
        .into_par_iter()
        .map(|r| {
            run_vanilla_ra(
                &setup.problem,
                beta,
                setup.cfg.h,
                &schedule,
                &setup.replication(r),
                &start,
                &setup.opts,
            )
        })
        .collect::<Result<_>>()?;
    let target = bench.decision().as_vec();
    let mut sd = Vec::new();
    let mut work_error = Vec::new();
    for k in 0..sizes.len() {
        let sols: Vec<Vec<f64>> = runs
            .iter()
            .map(|t| t.stages[k].report.solution.as_vec())
            .collect();
        let dim = sols[0].len();
        let mut total = 0.0;
        for j in 0..dim {
            let col: Vec<f64> = sols.iter().map(|s| s[j]).collect();
            let st = summarize(&col);
            total += st.se * st.se * st.n as f64;
        }
        sd.push(total.sqrt());
        let we: Vec<f64> = runs
            .iter()
            .zip(&sols)
            .map(|(t, s)| {
                t.stages[k].work
                    * s.iter()
                        .zip(&target)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
            })
            .collect();
        work_error.push(median(&we));
    }
    let xs: Vec<f64> = sizes.iter().map(|&m| m as f64).collect();
    Ok(CltReport {
        beta,
        sizes: sizes.to_vec(),
        slope: log_log_slope(&xs, &sd),
        sd,
        work_error,
        replications: reps,
    })
}

/// Relative errors of the optimal-CVaR estimate with and without IS.
#[derive(Debug, Clone, Serialize)]
pub struct CreditReport {
    pub beta: f64,
    pub n: usize,
    pub h: f64,
    pub h_selection: Option<HSelection>,
    pub reference: Reference,
    /// Absolute relative error in percent.
    pub plain: Stat,
    pub is: Stat,
    /// Median plain error over median IS error.
    pub ratio: f64,
    /// Largest violation of `sum(theta) = 1` or `theta . r >= q`.
    pub max_constraint_residual: f64,
}

fn constraint_residual(theta: &[f64], c: &ConstraintSet) -> f64 {
    let sum = (theta.iter().sum::<f64>() - 1.0).abs();
    match c {
        ConstraintSet::SimplexSum => sum,
        ConstraintSet::ReturnFloor {
            returns,
            min_return,
        } => {
            let r: f64 = theta.iter().zip(returns).map(|(t, r)| t * r).sum();
            sum.max(min_return - r)
        }
    }
}

/// Return-constrained loan-portfolio study: single-stage solves on `n`
/// draws, plain and with IS on the factors. The IS parameter is `cfg.h` or
/// else the criterion minimizer at the reference optimum on a pilot sample.
#[allow(clippy::too_many_arguments)]
pub fn run_credit_experiment(
    spec: &CreditModelSpec,
    beta: f64,
    cfg: &CreditExperimentConfig,
    reference: &ReferenceConfig,
    search: &HSearch,
    opts: &SolverOptions,
    master: &SeedStream,
    fingerprint: &str,
) -> Result<CreditReport> {
    let constraint = ConstraintSet::ReturnFloor {
        returns: spec.returns(),
        min_return: spec.min_return,
    };
    constraint.validate(spec.n_classes())?;
    let loss = CreditLoss::new(spec.clone());
    let problem = Problem {
        model: &spec.factors,
        loss: &loss,
        constraint: &constraint,
    };
    let bench = reference_solution(
        &problem,
        beta,
        reference,
        master.seed(Purpose::Reference, beta.to_bits()),
        opts,
        fingerprint,
    )?;
    let (h, h_selection) = match cfg.h {
        Some(h) => (h, None),
        None => {
            let sel = select_h(
                &problem,
                &bench.decision(),
                beta,
                search,
                cfg.pilot,
                master.seed(Purpose::Pilot, beta.to_bits()),
                reference.h.unwrap_or(2.5),
            )?;
            (sel.h, Some(sel))
        }
    };
    let c = bench.reference.c;
    let eps = cfg.rel_eps * c.abs();
    let schedule = RaSchedule::with_sizes(vec![cfg.n], eps)?;
    let start = Decision::uniform(spec.n_classes());
    let runs: Vec<(f64, f64, f64)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seeds = master.child(Purpose::Replication, r as u64);
            let p = run_plain_ra(&problem, beta, &schedule, &seeds, &start, opts)?;
            let i = run_vanilla_ra(&problem, beta, h, &schedule, &seeds, &start, opts)?;
            let resid = constraint_residual(&p.final_decision.theta, &constraint)
                .max(constraint_residual(&i.final_decision.theta, &constraint));
            Ok((
                100.0 * (p.final_estimate / c - 1.0).abs(),
                100.0 * (i.final_estimate / c - 1.0).abs(),
                resid,
            ))
        })
        .collect::<Result<_>>()?;
    let plain: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let is: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let plain = summarize(&plain);
    let is = summarize(&is);
    Ok(CreditReport {
        beta,
        n: cfg.n,
        h,
        h_selection,
        reference: bench.reference,
        ratio: plain.median / is.median,
        plain,
        is,
        max_constraint_residual: runs.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

/// The result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Suite {
    Fig1b,
    Fig2,
    Fig3a,
    Fig3b,
    Fig4,
    Clt,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Fig1b,
        Suite::Fig2,
        Suite::Fig3a,
        Suite::Fig3b,
        Suite::Fig4,
        Suite::Clt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Fig1b => "fig1b",
            Suite::Fig2 => "fig2",
            Suite::Fig3a => "fig3a",
            Suite::Fig3b => "fig3b",
            Suite::Fig4 => "fig4",
            Suite::Clt => "clt",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Identifies a run in output headers.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub git: Option<String>,
}

impl Provenance {
    pub fn new(cfg: &Config, git: Option<String>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            git,
        }
    }

    fn header(&self) -> String {
        format!(
            "# isra {} config {} seed {}",
            self.version, self.config_hash, self.seed
        )
    }
}

fn write_csv(path: &Path, prov: &Provenance, header: &str, rows: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", prov.header())?;
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Runs the linear-portfolio and credit suites from one configuration.
pub struct Runner<'a> {
    cfg: &'a Config,
    prov: Provenance,
    out: PathBuf,
    model: crate::models::ModelSpec,
    loss: LinearLoss,
    constraint: ConstraintSet,
    benches: BTreeMap<u64, Bench>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a Config, out: &Path, prov: Provenance) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(out)?;
        let model = cfg.model.build()?;
        let loss = LinearLoss::new(model.dim())?;
        Ok(Self {
            cfg,
            prov,
            out: out.to_path_buf(),
            model,
            loss,
            constraint: ConstraintSet::SimplexSum,
            benches: BTreeMap::new(),
        })
    }

    fn reference_cfg(&self) -> ReferenceConfig {
        let mut r = self.cfg.experiments.reference.clone();
        if r.cache_dir.is_none() {
            r.cache_dir = Some(self.out.join("cache"));
        }
        r
    }

    fn fingerprint(&self) -> String {
        format!(
            "linear {}",
            toml::to_string(&self.cfg.model).expect("model serializes")
        )
    }

    fn setup(&self) -> Result<Setup<'_>> {
        Ok(Setup {
            problem: Problem {
                model: &self.model,
                loss: &self.loss,
                constraint: &self.constraint,
            },
            cfg: &self.cfg.experiments,
            search: self.cfg.selection.search()?,
            opts: self.cfg.solver.clone(),
            master: SeedStream::new(self.cfg.seed),
        })
    }

    fn ensure_bench(&mut self, beta: f64) -> Result<()> {
        if self.benches.contains_key(&beta.to_bits()) {
            return Ok(());
        }
        let problem = Problem {
            model: &self.model,
            loss: &self.loss,
            constraint: &self.constraint,
        };
        let bench = reference_solution(
            &problem,
            beta,
            &self.reference_cfg(),
            SeedStream::new(self.cfg.seed).seed(Purpose::Reference, beta.to_bits()),
            &self.cfg.solver,
            &self.fingerprint(),
        )?;
        info!("reference beta {beta}: c = {:.6}", bench.reference.c);
        self.benches.insert(beta.to_bits(), bench);
        Ok(())
    }

    /// Reference optimum of the linear portfolio at `beta`.
    pub fn bench(&mut self, beta: f64) -> Result<&Bench> {
        self.ensure_bench(beta)?;
        Ok(&self.benches[&beta.to_bits()])
    }

    fn budget(&self) -> usize {
        self.cfg.experiments.split.iter().sum()
    }

    pub fn fig1b(&mut self) -> Result<WorstCase> {
        let w = self.cfg.experiments.worst_case.clone();
        self.ensure_bench(w.beta)?;
        let bench = &self.benches[&w.beta.to_bits()];
        let setup = self.setup()?;
        let wc = worst_case_se(
            &setup.problem,
            w.beta,
            w.r,
            w.n,
            &w.hs,
            w.points,
            w.pilot,
            &bench.decision(),
            setup.master.seed(Purpose::Pilot, w.beta.to_bits()),
        )?;
        let mut rows = vec![format!(
            "saa,,{},{},{},{},{},1,",
            wc.beta, wc.r, wc.n, wc.points, wc.saa.rel_se
        )];
        for p in &wc.is {
            rows.push(format!(
                "is,{},{},{},{},{},{},{},{}",
                opt(p.h),
                wc.beta,
                wc.r,
                wc.n,
                wc.points,
                p.rel_se,
                wc.saa.rel_se / p.rel_se,
                p.dominates.unwrap_or(false)
            ));
        }
        write_csv(
            &self.out.join("fig1b.csv"),
            &self.prov,
            "method,h,beta,r,n,points,worst_rel_se,saa_over_method,below_saa_everywhere",
            &rows,
        )?;
        Ok(wc)
    }

    pub fn fig2(&mut self) -> Result<Vec<MethodMetrics>> {
        let betas = self.cfg.experiments.betas.clone();
        for &b in &betas {
            self.ensure_bench(b)?;
        }
        let setup = self.setup()?;
        let mut all = Vec::new();
        for &b in &betas {
            all.extend(compare_methods(
                &setup,
                &self.benches[&b.to_bits()],
                self.budget(),
            )?);
        }
        let a: Vec<String> = all
            .iter()
            .map(|m| {
                format!(
                    "{},{},{},{},{},{}",
                    m.beta,
                    m.method.name(),
                    m.budget,
                    m.rel_rmse,
                    m.rmse_se,
                    m.regret.n
                )
            })
            .collect();
        write_csv(
            &self.out.join("fig2a.csv"),
            &self.prov,
            "beta,method,budget,rel_rmse,rel_rmse_se,replications",
            &a,
        )?;
        let b: Vec<String> = all
            .iter()
            .map(|m| {
                format!(
                    "{},{},{},{},{},{},{},{}",
                    m.beta,
                    m.method.name(),
                    m.budget,
                    m.regret.median,
                    m.regret.mean,
                    m.regret.se,
                    m.regret.n,
                    opt(m.final_h)
                )
            })
            .collect();
        write_csv(
            &self.out.join("fig2b.csv"),
            &self.prov,
            "beta,method,budget,median_regret_pct,mean_regret_pct,mean_regret_se,replications,mean_final_h",
            &b,
        )?;
        Ok(all)
    }

    pub fn fig3a(&mut self) -> Result<Vec<H0Point>> {
        let s = self.cfg.experiments.h0_sweep.clone();
        self.ensure_bench(s.beta)?;
        let setup = self.setup()?;
        let pts = h0_sweep(
            &setup,
            &self.benches[&s.beta.to_bits()],
            &s.h0s,
            self.budget(),
        )?;
        let rows: Vec<String> = pts
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{},{},{},{}",
                    p.h0,
                    p.beta,
                    p.regret.median,
                    p.regret.mean,
                    p.regret.se,
                    p.regret.n,
                    p.final_h.mean
                )
            })
            .collect();
        write_csv(
            &self.out.join("fig3a.csv"),
            &self.prov,
            "h0,beta,median_regret_pct,mean_regret_pct,mean_regret_se,replications,mean_final_h",
            &rows,
        )?;
        Ok(pts)
    }

    pub fn fig3b(&mut self) -> Result<Vec<RegretSearch>> {
        let s = self.cfg.experiments.regret_search.clone();
        for &b in &s.betas {
            self.ensure_bench(b)?;
        }
        let setup = self.setup()?;
        let mut out = Vec::new();
        for &b in &s.betas {
            for method in MethodKind::ALL {
                out.push(samples_to_regret(
                    &setup,
                    &self.benches[&b.to_bits()],
                    method,
                    s.target_pct,
                    s.start,
                    s.cap,
                    s.refine_steps,
                )?);
            }
        }
        let rows: Vec<String> = out
            .iter()
            .map(|r| format!("{},{},{}", r.beta, r.method.name(), r.budget))
            .collect();
        write_csv(
            &self.out.join("fig3b.csv"),
            &self.prov,
            "beta,method,samples_to_1pct",
            &rows,
        )?;
        let trace: Vec<String> = out
            .iter()
            .flat_map(|r| {
                r.trace
                    .iter()
                    .map(move |(b, m)| format!("{},{},{},{}", r.beta, r.method.name(), b, m))
            })
            .collect();
        write_csv(
            &self.out.join("fig3b_search.csv"),
            &self.prov,
            "beta,method,budget,median_regret_pct",
            &trace,
        )?;
        Ok(out)
    }

    pub fn fig4(&mut self) -> Result<Vec<CreditReport>> {
        let spec = self.cfg.credit.build()?;
        let c = &self.cfg.experiments.credit;
        let fingerprint = format!(
            "credit {}",
            toml::to_string(&self.cfg.credit).expect("credit serializes")
        );
        let search = self.cfg.selection.search()?;
        let master = SeedStream::new(self.cfg.seed);
        let reports: Vec<CreditReport> = c
            .betas
            .iter()
            .map(|&b| {
                run_credit_experiment(
                    &spec,
                    b,
                    c,
                    &self.reference_cfg(),
                    &search,
                    &self.cfg.solver,
                    &master,
                    &fingerprint,
                )
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for r in &reports {
            rows.push(format!(
                "{},plain,,{},{},{},{},{},{}",
                r.beta, r.n, r.plain.median, r.plain.mean, r.plain.se, r.plain.n, r.reference.c
            ));
            rows.push(format!(
                "{},is,{},{},{},{},{},{},{}",
                r.beta, r.h, r.n, r.is.median, r.is.mean, r.is.se, r.is.n, r.reference.c
            ));
        }
        write_csv(
            &self.out.join("fig4.csv"),
            &self.prov,
            "beta,method,h,n,median_rel_err_pct,mean_rel_err_pct,mean_rel_err_se,replications,reference_cvar",
            &rows,
        )?;
        Ok(reports)
    }

    pub fn clt(&mut self) -> Result<CltReport> {
        let c = self.cfg.experiments.clt.clone();
        self.ensure_bench(c.beta)?;
        let setup = self.setup()?;
        let rep = clt_scaling(
            &setup,
            &self.benches[&c.beta.to_bits()],
            &c.sizes,
            c.replications,
        )?;
        let rows: Vec<String> = rep
            .sizes
            .iter()
            .zip(&rep.sd)
            .zip(&rep.work_error)
            .map(|((m, s), w)| format!("{},{},{},{},{}", rep.beta, m, s, w, rep.replications))
            .collect();
        write_csv(
            &self.out.join("clt.csv"),
            &self.prov,
            "beta,m,solution_sd,median_work_error,replications",
            &rows,
        )?;
        Ok(rep)
    }

    /// Runs `suites` in order and writes `summary.json`.
    pub fn run(&mut self, suites: &[Suite]) -> Result<serde_json::Value> {
        let mut results = serde_json::Map::new();
        for &s in suites {
            let t = Instant::now();
            info!("running {}", s.name());
            let mut v = match s {
                Suite::Fig1b => serde_json::to_value(self.fig1b()?)?,
                Suite::Fig2 => serde_json::to_value(self.fig2()?)?,
                Suite::Fig3a => serde_json::to_value(self.fig3a()?)?,
                Suite::Fig3b => serde_json::to_value(self.fig3b()?)?,
                Suite::Fig4 => serde_json::to_value(self.fig4()?)?,
                Suite::Clt => serde_json::to_value(self.clt()?)?,
            };
            let mut obj = serde_json::Map::new();
            obj.insert("results".into(), std::mem::take(&mut v));
            obj.insert("runtime_s".into(), t.elapsed().as_secs_f64().into());
            results.insert(s.name().into(), obj.into());
        }
        let summary = serde_json::json!({
            "provenance": self.prov,
            "config": self.cfg,
            "suites": results,
        });
        std::fs::write(
            self.out.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        Ok(summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(relative_rmse(&[2.0, 2.0], 2.0).unwrap(), 0.0);
        assert!((relative_rmse(&[1.1, 0.9], 1.0).unwrap() - 0.1).abs() < 1e-12);
        assert!(relative_rmse(&[1.0], 1.0).is_err());
    }

    #[test]
    fn regret_examples() {
        assert!((relative_regret(&[1.02, 1.0], 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stats() {
        let s = summarize(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert!((log_log_slope(&[1.0, 4.0, 16.0], &[1.0, 0.5, 0.25]) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn budget_split() {
        assert_eq!(split_budget(&[500, 2000], 2500), vec![500, 2000]);
        assert_eq!(split_budget(&[500, 2000], 1000), vec![200, 800]);
        assert_eq!(split_budget(&[1], 7), vec![7]);
        assert_eq!(split_budget(&[1, 1], 1), vec![1, 1]);
    }

    #[test]
    fn suite_names_roundtrip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("fig9".parse::<Suite>().is_err());
    }
}
