//! The self-structuring transformation `T_h(x) = x * s_h^kappa(x)`.
//!
//! `kappa_i(x) = log(1 + |x_i|) / (rho * max_j log(1 + |x_j|))`, so the
//! largest coordinate is stretched by `s_h^(1/rho)` and smaller ones by
//! proportionally less. Transformed samples are weighted by the likelihood
//! ratio `L_h = f_X(Z) / f_X(X) * J_h(X)`, which is evaluated in log space.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{log_density, sample_x, ModelSpec, SampleBatch};
use crate::rng::{rng_from, Purpose, SeedStream};

/// `(h, beta, rho)`, with the stretch factor validated on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub h: f64,
    pub beta: f64,
    pub rho: f64,
}

impl TransformParams {
    pub fn new(h: f64, beta: f64, rho: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("h must be positive, got {h}")));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Domain(format!("rho must be positive, got {rho}")));
        }
        let p = Self { h, beta, rho };
        stretch_factor(&p)?;
        Ok(p)
    }

    /// `s_h`; parameters built through [`TransformParams::new`] are valid.
    pub fn stretch(&self) -> f64 {
        self.h * loglog(self.beta)
    }
}

fn loglog(beta: f64) -> f64 {
    (-beta.ln()).ln()
}

/// Smallest `h` with `s_h > 1` at this `beta`.
pub fn h_min(beta: f64) -> f64 {
    1.0 / loglog(beta)
}

/// `s_h = h * log(log(1/beta))`, required to exceed 1.
pub fn stretch_factor(params: &TransformParams) -> Result<f64> {
    let beta = params.beta;
    if !(beta > 0.0 && beta < (-1.0f64).exp()) {
        return Err(Error::Domain(format!(
            "beta must lie in (0, 1/e), got {beta}"
        )));
    }
    let s = params.stretch();
    if s <= 1.0 {
        return Err(Error::StretchTooSmall {
            stretch: s,
            h_min: h_min(beta),
            beta,
        });
    }
    Ok(s)
}

fn log_norm_inf(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs().ln_1p()).fold(0.0, f64::max)
}

/// Exponent vector; zero at `x = 0`.
pub fn kappa(x: &[f64], rho: f64) -> Vec<f64> {
    let m = log_norm_inf(x);
    if m == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| v.abs().ln_1p() / (rho * m)).collect()
}

fn transform_into(x: &[f64], log_s: f64, rho: f64, out: &mut [f64]) {
    let m = log_norm_inf(x);
    if m == 0.0 {
        out.copy_from_slice(x);
        return;
    }
    let c = log_s / (rho * m);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v * (c * v.abs().ln_1p()).exp();
    }
}

/// `T_h(x)`.
pub fn transform(x: &[f64], params: &TransformParams) -> Result<Vec<f64>> {
    let s = stretch_factor(params)?;
    let mut z = vec![0.0; x.len()];
    transform_into(x, s.ln(), params.rho, &mut z);
    Ok(z)
}

fn log_jacobian_with(x: &[f64], log_s: f64, rho: f64) -> f64 {
    let m = log_norm_inf(x);
    if m == 0.0 {
        return 0.0;
    }
    let c = log_s / (rho * m);
    let mut sum_tilde = 0.0;
    let mut max_tilde = f64::NEG_INFINITY;
    let mut sum_kappa = 0.0;
    for &v in x {
        let a = v.abs();
        let lt = (c * a / (1.0 + a)).ln_1p();
        sum_tilde += lt;
        max_tilde = max_tilde.max(lt);
        sum_kappa += a.ln_1p() / (rho * m);
    }
    sum_tilde - max_tilde + sum_kappa * log_s
}

/// `log J_h(x)`; zero at `x = 0`.
pub fn log_jacobian(x: &[f64], params: &TransformParams) -> Result<f64> {
    let s = stretch_factor(params)?;
    Ok(log_jacobian_with(x, s.ln(), params.rho))
}

/// Jacobian determinant of `T_h` at `x`.
pub fn jacobian(x: &[f64], params: &TransformParams) -> Result<f64> {
    log_jacobian(x, params).map(f64::exp)
}

const INVERSE_MAX_ITER: usize = 200;

/// Solves `t * exp(c * log(1 + t)) = target` for `t >= 0`.
fn invert_scalar(target: f64, c: f64) -> Result<f64> {
    if target == 0.0 {
        return Ok(0.0);
    }
    let log_target = target.ln();
    let g = |t: f64| t.ln() + c * t.ln_1p() - log_target;
    let (mut lo, mut hi) = (0.0, target);
    let mut t = target / (1.0 + target).powf(c).max(1.0);
    for it in 0..INVERSE_MAX_ITER {
        let r = g(t);
        if r.abs() <= 1e-15 {
            return Ok(t);
        }
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = 1.0 / t + c / (1.0 + t);
        let mut next = t.ln() - r / (t * slope);
        next = next.exp();
        if !(next > lo && next < hi) {
            next = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        }
        if (next - t).abs() <= 1e-16 * t {
            return Ok(next);
        }
        t = next;
        if it + 1 == INVERSE_MAX_ITER {
            break;
        }
    }
    Err(Error::InverseNotConverged {
        residual: g(t).abs(),
        iterations: INVERSE_MAX_ITER,
    })
}

/// `T_h^{-1}(z)`.
///
/// The transformation preserves the ordering of `|x_i|`, so the largest
/// coordinate is undone exactly by dividing by `s_h^(1/rho)`. That fixes the
/// normalizer `max_j log(1 + |x_j|)`, after which each remaining coordinate is
/// a monotone scalar equation solved by safeguarded Newton iteration.
pub fn inverse_transform(z: &[f64], params: &TransformParams) -> Result<Vec<f64>> {
    let s = stretch_factor(params)?;
    let rho = params.rho;
    let Some((jmax, zmax)) = z
        .iter()
        .map(|v| v.abs())
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
    else {
        return Ok(Vec::new());
    };
    if zmax == 0.0 {
        return Ok(vec![0.0; z.len()]);
    }
    let xmax = zmax / s.powf(1.0 / rho);
    let m = xmax.ln_1p();
    let c = s.ln() / (rho * m);
    let mut x = vec![0.0; z.len()];
    for (i, &zi) in z.iter().enumerate() {
        let t = if i == jmax {
            xmax
        } else {
            invert_scalar(zi.abs(), c)?
        };
        x[i] = t.copysign(zi);
    }
    let back = transform(&x, params)?;
    let resid = back
        .iter()
        .zip(z)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if resid > 1e-8 * (1.0 + zmax) {
        return Err(Error::InverseNotConverged {
            residual: resid,
            iterations: INVERSE_MAX_ITER,
        });
    }
    Ok(x)
}

/// `log L_h = log f_X(z) - log f_X(x) + log J_h(x)`.
pub fn log_likelihood_ratio(
    x: &[f64],
    z: &[f64],
    spec: &ModelSpec,
    params: &TransformParams,
) -> Result<f64> {
    Ok(log_density(spec, z)? - log_density(spec, x)? + log_jacobian(x, params)?)
}

/// Likelihood ratio `L_h` of the transformed sample `z = T_h(x)`.
pub fn likelihood_ratio(
    x: &[f64],
    z: &[f64],
    spec: &ModelSpec,
    params: &TransformParams,
) -> Result<f64> {
    log_likelihood_ratio(x, z, spec, params).map(f64::exp)
}

/// Raw draws paired with their images under `T_h` and likelihood ratios.
#[derive(Debug, Clone)]
pub struct TransformedBatch {
    raw: SampleBatch,
    transformed: Vec<f64>,
    lr: Vec<f64>,
    beta: f64,
    params: Option<TransformParams>,
}

impl TransformedBatch {
    pub fn new(raw: SampleBatch, spec: &ModelSpec, params: TransformParams) -> Result<Self> {
        let s = stretch_factor(&params)?;
        if raw.dim() != spec.dim() {
            return Err(Error::Domain(format!(
                "batch dimension {} does not match model dimension {}",
                raw.dim(),
                spec.dim()
            )));
        }
        let d = raw.dim();
        let (log_s, rho) = (s.ln(), params.rho);
        let rows: Vec<(Vec<f64>, f64)> = raw
            .as_slice()
            .par_chunks_exact(d)
            .map(|x| {
                let mut z = vec![0.0; d];
                transform_into(x, log_s, rho, &mut z);
                let log_lr = log_density(spec, &z)? - log_density(spec, x)?
                    + log_jacobian_with(x, log_s, rho);
                let lr = log_lr.exp();
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(Error::Numerical(format!("likelihood ratio {lr} at {x:?}")));
                }
                Ok((z, lr))
            })
            .collect::<Result<_>>()?;
        let mut transformed = Vec::with_capacity(raw.as_slice().len());
        let mut lr = Vec::with_capacity(raw.len());
        for (z, l) in rows {
            transformed.extend_from_slice(&z);
            lr.push(l);
        }
        Ok(Self {
            raw,
            transformed,
            lr,
            beta: params.beta,
            params: Some(params),
        })
    }

    /// The degenerate change of measure: `Z = X`, `L = 1`.
    pub fn identity(raw: SampleBatch, beta: f64) -> Self {
        let transformed = raw.as_slice().to_vec();
        let lr = vec![1.0; raw.len()];
        Self {
            raw,
            transformed,
            lr,
            beta,
            params: None,
        }
    }

    pub fn len(&self) -> usize {
        self.lr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lr.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.raw.dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn params(&self) -> Option<&TransformParams> {
        self.params.as_ref()
    }

    pub fn raw(&self) -> &SampleBatch {
        &self.raw
    }

    pub fn z(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.transformed[i * d..(i + 1) * d]
    }

    pub fn transformed(&self) -> &[f64] {
        &self.transformed
    }

    pub fn lr(&self) -> &[f64] {
        &self.lr
    }

    /// Writes `(x, z, L)` rows for auditing.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = self.dim();
        let header: Vec<String> = (0..d)
            .map(|i| format!("x{i}"))
            .chain((0..d).map(|i| format!("z{i}")))
            .chain(std::iter::once("lr".to_string()))
            .collect();
        writeln!(f, "{}", header.join(","))?;
        for i in 0..self.len() {
            let cells: Vec<String> = self
                .raw
                .row(i)
                .iter()
                .chain(self.z(i))
                .chain(std::iter::once(&self.lr[i]))
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(f, "{}", cells.join(","))?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Determinant of the central-difference Jacobian matrix of `T_h` at `x`.
pub fn numerical_jacobian_det(x: &[f64], params: &TransformParams) -> Result<f64> {
    let d = x.len();
    let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut xp = x.to_vec();
    for j in 0..d {
        let step = 1e-6 * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let up = transform(&xp, params)?;
        xp[j] = x[j] - step;
        let down = transform(&xp, params)?;
        xp[j] = x[j];
        for i in 0..d {
            m[(i, j)] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    Ok(m.determinant())
}

/// Outcome of one diagnostic check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs the transformation invariants on random points for the given model
/// and parameters: Jacobian against numerical determinants, monotone
/// stretching, inverse roundtrip, finite positive likelihood ratios, and the
/// change-of-measure identity for a tail indicator.
pub fn invariant_suite(
    spec: &ModelSpec,
    params: &TransformParams,
    n: usize,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    use rand::Rng;
    let seeds = SeedStream::new(seed);
    let mut rng = rng_from(seeds.seed(Purpose::Pilot, 0));
    let d = spec.dim();
    let points: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..d).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect();
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for x in &points {
        let a = jacobian(x, params)?;
        let b = numerical_jacobian_det(x, params)?;
        worst = worst.max(((a - b) / b).abs());
    }
    out.push(check(
        "jacobian_vs_numerical_determinant",
        worst <= 1e-4,
        format!("max relative error {worst:.3e}"),
    ));

    let mut stretched = true;
    let mut worst_rt = 0.0f64;
    for x in &points {
        let z = transform(x, params)?;
        stretched &= z.iter().zip(x).all(|(zi, xi)| zi >= xi);
        let back = inverse_transform(&z, params)?;
        for (b, v) in back.iter().zip(x) {
            worst_rt = worst_rt.max((b - v).abs() / v.abs().max(1e-300));
        }
    }
    out.push(check(
        "monotone_stretching",
        stretched,
        "T_h(x) >= x on 100 points".into(),
    ));
    out.push(check(
        "inverse_roundtrip",
        worst_rt <= 1e-7,
        format!("max relative error {worst_rt:.3e}"),
    ));

    let batch = sample_x(spec, n, seeds.seed(Purpose::StageSample, 0))?;
    let tb = TransformedBatch::new(batch, spec, *params)?;
    let finite = tb.lr().iter().all(|l| *l > 0.0 && l.is_finite());
    out.push(check(
        "likelihood_ratio_finite_positive",
        finite,
        format!("{} samples", tb.len()),
    ));

    // Change of measure on P(max_i X_i > c) with c near the beta-quantile of
    // a single coordinate; plain estimate from 20x as many draws.
    let alpha_min = spec.alphas().iter().cloned().fold(f64::INFINITY, f64::min);
    let c = (-params.beta.ln()).powf(1.0 / alpha_min);
    let hit = |x: &[f64]| x.iter().any(|v| *v > c);
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..tb.len() {
        let g = if hit(tb.z(i)) { tb.lr()[i] } else { 0.0 };
        s1 += g;
        s2 += g * g;
    }
    let nf = tb.len() as f64;
    let is_mean = s1 / nf;
    let is_var = (s2 / nf - is_mean * is_mean).max(0.0) / nf;
    let big = sample_x(spec, 20 * n, seeds.seed(Purpose::Reference, 0))?;
    let p_mc = big.rows().filter(|x| hit(x)).count() as f64 / big.len() as f64;
    let mc_var = p_mc * (1.0 - p_mc) / big.len() as f64;
    let z = (is_mean - p_mc).abs() / (is_var + mc_var).sqrt().max(1e-300);
    out.push(check(
        "change_of_measure_tail_probability",
        z <= 3.0,
        format!("IS {is_mean:.4e} vs plain {p_mc:.4e}, {z:.2} combined SE"),
    ));
    Ok(out)
}
