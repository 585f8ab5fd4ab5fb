//! The Rockafellar-Uryasev objective and its sample-path estimators.
//!
//! For weights `w_i` (all one for plain SAA, likelihood ratios under IS) the
//! sample objective is
//!
//! ```text
//! f(u, theta) = u + 1/(n beta) * sum_i (l(z_i, theta) - u)^+ w_i
//! ```
//!
//! Minimizing over `u` is a weighted quantile problem and is done exactly:
//! sorting losses in decreasing order and filling the tail mass `n beta`
//! with the weights gives the optimal value and a `theta`-subgradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::models::{sample_x, ModelSpec, SampleBatch};
use crate::rng::{Purpose, SeedStream};
use crate::transform::{TransformParams, TransformedBatch};

/// An optimization point `(u, theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub u: f64,
    pub theta: Vec<f64>,
}

impl Decision {
    pub fn new(u: f64, theta: Vec<f64>) -> Self {
        Self { u, theta }
    }

    /// Equal weights and `u = 0`.
    pub fn uniform(p: usize) -> Self {
        Self {
            u: 0.0,
            theta: vec![1.0 / p as f64; p],
        }
    }

    /// `(u, theta)` stacked into one vector.
    pub fn as_vec(&self) -> Vec<f64> {
        std::iter::once(self.u)
            .chain(self.theta.iter().cloned())
            .collect()
    }
}

/// Objective value, subgradient `(d/du, d/dtheta)` and per-sample terms.
#[derive(Debug, Clone)]
pub struct ObjectiveSample {
    pub value: f64,
    pub subgrad: Vec<f64>,
    pub per_sample_terms: Vec<f64>,
}

/// Features and weights of a fixed sample: the deterministic function that
/// one retrospective-approximation stage minimizes.
#[derive(Debug, Clone)]
pub struct SamplePath {
    features: Vec<f64>,
    fdim: usize,
    weights: Vec<f64>,
    beta: f64,
}

/// Result of minimizing the sample objective over `u` at fixed `theta`.
#[derive(Debug, Clone)]
pub struct TailFit {
    pub value: f64,
    /// Optimal `u`: the weighted upper `beta`-quantile of the losses.
    pub u: f64,
    pub grad_theta: Vec<f64>,
}

impl SamplePath {
    pub fn new(features: Vec<f64>, fdim: usize, weights: Vec<f64>, beta: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if features.len() != fdim * weights.len() {
            return Err(Error::Domain(
                "feature matrix does not match weight count".into(),
            ));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Domain(format!(
                "beta must lie in (0, 1), got {beta}"
            )));
        }
        Ok(Self {
            features,
            fdim,
            weights,
            beta,
        })
    }

    /// Features of the transformed points with likelihood-ratio weights.
    /// Scenario noise is keyed to the raw batch seed and row index.
    pub fn from_batch(tb: &TransformedBatch, loss: &dyn LossModel) -> Result<Self> {
        if tb.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if tb.dim() != loss.input_dim() {
            return Err(Error::Domain(format!(
                "batch dimension {} does not match loss input dimension {}",
                tb.dim(),
                loss.input_dim()
            )));
        }
        let fdim = loss.feature_dim();
        let mut features = vec![0.0; tb.len() * fdim];
        features
            .par_chunks_mut(fdim)
            .enumerate()
            .for_each(|(i, out)| {
                loss.features(tb.z(i), tb.raw().scenario_seed(i), out);
            });
        Self::new(features, fdim, tb.lr().to_vec(), tb.beta())
    }

    /// Unweighted path on raw draws.
    pub fn plain(batch: &SampleBatch, loss: &dyn LossModel, beta: f64) -> Result<Self> {
        Self::from_batch(&TransformedBatch::identity(batch.clone(), beta), loss)
    }

    /// Pools paths built from disjoint draws of one sample. Each part keeps
    /// its own weights, so parts may use different proposals.
    pub fn concat(parts: &[SamplePath]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        if parts
            .iter()
            .any(|p| p.fdim != first.fdim || p.beta != first.beta)
        {
            return Err(Error::Domain(
                "paths differ in feature dimension or beta".into(),
            ));
        }
        Self::new(
            parts
                .iter()
                .flat_map(|p| p.features.iter().cloned())
                .collect(),
            first.fdim,
            parts
                .iter()
                .flat_map(|p| p.weights.iter().cloned())
                .collect(),
            first.beta,
        )
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.fdim..(i + 1) * self.fdim]
    }

    /// Restricts to the rows in `range`, e.g. to split a stage budget.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let f = self.features[range.start * self.fdim..range.end * self.fdim].to_vec();
        Self::new(f, self.fdim, self.weights[range].to_vec(), self.beta)
    }

    fn losses(&self, loss: &dyn LossModel, theta: &[f64]) -> Vec<f64> {
        self.features
            .chunks_exact(self.fdim)
            .map(|f| loss.eval(f, theta))
            .collect()
    }

    /// `u + 1/(n beta) sum (l_i - u)^+ w_i` and its subgradient.
    pub fn objective_at(&self, loss: &dyn LossModel, dec: &Decision) -> ObjectiveSample {
        let n = self.len();
        let p = dec.theta.len();
        let scale = 1.0 / (n as f64 * self.beta);
        let mut terms = Vec::with_capacity(n);
        let mut tail_mass = 0.0;
        let mut grad = vec![0.0; p];
        let mut g = vec![0.0; p];
        for (f, &w) in self.features.chunks_exact(self.fdim).zip(&self.weights) {
            let l = loss.eval(f, &dec.theta);
            terms.push((l - dec.u).max(0.0) * w);
            if l >= dec.u {
                tail_mass += w;
                loss.grad_theta(f, &dec.theta, &mut g);
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += w * b;
                }
            }
        }
        let value = dec.u + scale * terms.iter().sum::<f64>();
        let mut subgrad = Vec::with_capacity(p + 1);
        subgrad.push(1.0 - scale * tail_mass);
        subgrad.extend(grad.iter().map(|v| v * scale));
        ObjectiveSample {
            value,
            subgrad,
            per_sample_terms: terms,
        }
    }

    /// Minimizes over `u` exactly at fixed `theta`.
    pub fn min_over_u(&self, loss: &dyn LossModel, theta: &[f64]) -> Result<TailFit> {
        let losses = self.losses(loss, theta);
        let n = losses.len();
        let tail = n as f64 * self.beta;
        let total: f64 = self.weights.iter().sum();
        if total < tail * (1.0 - 1e-12) {
            return Err(Error::InsufficientMass {
                mass: total,
                required: tail,
            });
        }
        let mut order: Vec<(f64, u32)> = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i as u32))
            .collect();
        let desc = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        let mut k = n.min(64.max(4 * tail.ceil() as usize));
        loop {
            if k < n {
                order.select_nth_unstable_by(k - 1, desc);
            }
            let top = &mut order[..k];
            top.sort_unstable_by(desc);
            let mut remaining = tail;
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            let mut u = top[k - 1].0;
            for &(l, i) in top.iter() {
                let w = self.weights[i as usize];
                if w <= 0.0 {
                    continue;
                }
                let c = w.min(remaining);
                coeffs.push((i as usize, c));
                remaining -= c;
                if remaining <= 0.0 {
                    u = l;
                    break;
                }
            }
            // Rounding in the weight total can leave a sliver of mass.
            let done = remaining <= 0.0 || (k == n && remaining <= tail * 1e-12);
            if done {
                let p = theta.len();
                let mut value = 0.0;
                let mut grad = vec![0.0; p];
                let mut g = vec![0.0; p];
                for &(i, c) in &coeffs {
                    value += c * losses[i];
                    loss.grad_theta(self.feature(i), theta, &mut g);
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += c * b;
                    }
                }
                if remaining > 0.0 {
                    value += remaining * u;
                }
                for v in grad.iter_mut() {
                    *v /= tail;
                }
                return Ok(TailFit {
                    value: value / tail,
                    u,
                    grad_theta: grad,
                });
            }
            if k == n {
                return Err(Error::InsufficientMass {
                    mass: total,
                    required: tail,
                });
            }
            k = n.min(4 * k);
        }
    }
}

/// Plain SAA objective on raw draws.
pub fn saa_objective(
    batch: &SampleBatch,
    dec: &Decision,
    beta: f64,
    loss: &dyn LossModel,
) -> Result<ObjectiveSample> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(SamplePath::plain(batch, loss, beta)?.objective_at(loss, dec))
}

/// Importance-sampling objective on a transformed batch.
pub fn is_objective(
    tb: &TransformedBatch,
    dec: &Decision,
    beta: f64,
    loss: &dyn LossModel,
) -> Result<ObjectiveSample> {
    if tb.beta() != beta {
        return Err(Error::BetaMismatch {
            batch: tb.beta(),
            call: beta,
        });
    }
    Ok(SamplePath::from_batch(tb, loss)?.objective_at(loss, dec))
}

/// VaR and CVaR estimates at a fixed decision.
#[derive(Debug, Clone, Serialize)]
pub struct CvarEstimate {
    pub var: f64,
    pub cvar: f64,
    /// Standard error of the CVaR estimate.
    pub se: f64,
    pub n: usize,
    pub warning: Option<String>,
}

/// VaR/CVaR of a fixed sample path at `theta`: the exact weighted tail
/// average, with a delta-method standard error from the per-sample terms.
pub fn cvar_of_path(
    path: &SamplePath,
    loss: &dyn LossModel,
    theta: &[f64],
) -> Result<CvarEstimate> {
    let fit = path.min_over_u(loss, theta)?;
    let obj = path.objective_at(loss, &Decision::new(fit.u, theta.to_vec()));
    let n = path.len() as f64;
    let mean = obj.per_sample_terms.iter().sum::<f64>() / n;
    let var = obj
        .per_sample_terms
        .iter()
        .map(|t| (t - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    Ok(CvarEstimate {
        var: fit.u,
        cvar: fit.value,
        se: (var / n).sqrt() / path.beta(),
        n: path.len(),
        warning: None,
    })
}

/// Estimates `(v_beta(theta), C_beta(theta))` from `n` fresh draws, with or
/// without the transformation at parameter `h`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cvar_at(
    theta: &[f64],
    beta: f64,
    model: &ModelSpec,
    loss: &dyn LossModel,
    n: usize,
    use_is: bool,
    h: f64,
    seed: u64,
) -> Result<CvarEstimate> {
    let batch = sample_x(model, n, SeedStream::new(seed).seed(Purpose::Evaluation, 0))?;
    let path = if use_is {
        let params = TransformParams::new(h, beta, loss.order())?;
        SamplePath::from_batch(&TransformedBatch::new(batch, model, params)?, loss)?
    } else {
        SamplePath::plain(&batch, loss, beta)?
    };
    let mut est = cvar_of_path(&path, loss, theta)?;
    if !use_is && (n as f64) * beta < 50.0 {
        est.warning = Some(format!(
            "only n*beta = {:.1} tail samples; plain estimate is unreliable",
            n as f64 * beta
        ));
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LinearLoss;

    fn path_1d(values: &[f64], beta: f64) -> SamplePath {
        SamplePath::new(values.to_vec(), 1, vec![1.0; values.len()], beta).unwrap()
    }

    #[test]
    fn hand_examples() {
        let loss = LinearLoss::new(1).unwrap();
        let p = path_1d(&[0.0, 4.0], 0.5);
        let o = p.objective_at(&loss, &Decision::new(2.0, vec![1.0]));
        assert_eq!(o.value, 4.0);
        let o = p.objective_at(&loss, &Decision::new(10.0, vec![1.0]));
        assert_eq!(o.value, 10.0);
        assert_eq!(o.subgrad[0], 1.0);
    }

    #[test]
    fn two_point_cvar() {
        let loss = LinearLoss::new(1).unwrap();
        let p = path_1d(&[0.0, 1.0, 0.0, 1.0], 0.5);
        let est = cvar_of_path(&p, &loss, &[1.0]).unwrap();
        assert_eq!(est.cvar, 1.0);
    }

    #[test]
    fn min_over_u_matches_brute_force() {
        let loss = LinearLoss::new(1).unwrap();
        let vals: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let w: Vec<f64> = (0..200)
            .map(|i| 0.5 + ((i * 13) % 7) as f64 * 0.1)
            .collect();
        let p = SamplePath::new(vals.clone(), 1, w, 0.03).unwrap();
        let fit = p.min_over_u(&loss, &[1.0]).unwrap();
        let best = vals
            .iter()
            .map(|&u| p.objective_at(&loss, &Decision::new(u, vec![1.0])).value)
            .fold(f64::INFINITY, f64::min);
        assert!((fit.value - best).abs() < 1e-12, "{} vs {best}", fit.value);
    }

    #[test]
    fn insufficient_mass() {
        let loss = LinearLoss::new(1).unwrap();
        let p = SamplePath::new(vec![1.0, 2.0], 1, vec![1e-3, 1e-3], 0.5).unwrap();
        assert!(matches!(
            p.min_over_u(&loss, &[1.0]),
            Err(Error::InsufficientMass { .. })
        ));
    }
}
