//! Parameterized losses `l(x, theta)` and the decision set.
//!
//! A loss first maps a scenario to a feature vector (the risk vector itself
//! for the linear portfolio, per-class default losses for the credit
//! portfolio) and is then evaluated against `theta`. Splitting the two lets
//! a sample-path problem precompute features once and reuse them for every
//! solver iteration, which also freezes any scenario noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{sample_class_losses, CreditModelSpec};
use crate::rng::rng_from;

pub trait LossModel: Send + Sync {
    /// Dimension of the scenario vector `x`.
    fn input_dim(&self) -> usize;
    fn theta_dim(&self) -> usize;
    /// Homogeneity order `rho` of the loss in `x`.
    fn order(&self) -> f64;
    fn feature_dim(&self) -> usize;
    /// Features of scenario `x`; `scenario_seed` drives any noise beyond `x`.
    fn features(&self, x: &[f64], scenario_seed: u64, out: &mut [f64]);
    fn eval(&self, features: &[f64], theta: &[f64]) -> f64;
    fn grad_theta(&self, features: &[f64], theta: &[f64], out: &mut [f64]);

    /// `l(x, theta)` in one call.
    fn loss(&self, x: &[f64], scenario_seed: u64, theta: &[f64]) -> f64 {
        let mut f = vec![0.0; self.feature_dim()];
        self.features(x, scenario_seed, &mut f);
        self.eval(&f, theta)
    }
}

/// `l(x, theta) = theta . x`.
#[derive(Debug, Clone)]
pub struct LinearLoss {
    dim: usize,
}

impl LinearLoss {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("linear loss needs d >= 1".into()));
        }
        Ok(Self { dim })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LossModel for LinearLoss {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn theta_dim(&self) -> usize {
        self.dim
    }
    fn order(&self) -> f64 {
        1.0
    }
    fn feature_dim(&self) -> usize {
        self.dim
    }
    fn features(&self, x: &[f64], _scenario_seed: u64, out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn eval(&self, features: &[f64], theta: &[f64]) -> f64 {
        dot(features, theta)
    }
    fn grad_theta(&self, features: &[f64], _theta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(features);
    }
}

/// Loan-portfolio loss: `theta . (class default losses)`, where defaults and
/// exposures are drawn from the scenario seed given the factors.
#[derive(Debug, Clone)]
pub struct CreditLoss {
    spec: CreditModelSpec,
}

impl CreditLoss {
    pub fn new(spec: CreditModelSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &CreditModelSpec {
        &self.spec
    }
}

impl LossModel for CreditLoss {
    fn input_dim(&self) -> usize {
        self.spec.factors.dim()
    }
    fn theta_dim(&self) -> usize {
        self.spec.n_classes()
    }
    fn order(&self) -> f64 {
        1.0
    }
    fn feature_dim(&self) -> usize {
        self.spec.n_classes()
    }
    fn features(&self, x: &[f64], scenario_seed: u64, out: &mut [f64]) {
        sample_class_losses(&self.spec, x, &mut rng_from(scenario_seed), out);
    }
    fn eval(&self, features: &[f64], theta: &[f64]) -> f64 {
        dot(features, theta)
    }
    fn grad_theta(&self, features: &[f64], _theta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(features);
    }
}

/// The decision set: the sum-one hyperplane, optionally with a return floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstraintSet {
    SimplexSum,
    ReturnFloor { returns: Vec<f64>, min_return: f64 },
}

/// Half-space `a . y >= b` in the free coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl HalfSpace {
    pub fn slack(&self, y: &[f64]) -> f64 {
        dot(&self.a, y) - self.b
    }
}

impl ConstraintSet {
    /// Checks the set is nonempty for a `p`-dimensional decision.
    pub fn validate(&self, p: usize) -> Result<()> {
        if p == 0 {
            return Err(Error::Config("decision dimension must be positive".into()));
        }
        if let ConstraintSet::ReturnFloor {
            returns,
            min_return,
        } = self
        {
            if returns.len() != p {
                return Err(Error::Config(format!(
                    "{} returns for {p} assets",
                    returns.len()
                )));
            }
            if !min_return.is_finite() || returns.iter().any(|r| !r.is_finite()) {
                return Err(Error::Config("non-finite return data".into()));
            }
            // Unbounded above unless all returns coincide.
            let spread = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - returns.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread == 0.0 && returns[0] < *min_return {
                return Err(Error::Config(format!(
                    "return floor {min_return} unreachable with constant return {}",
                    returns[0]
                )));
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self, theta: &[f64], tol: f64) -> bool {
        let sum_ok = (theta.iter().sum::<f64>() - 1.0).abs() <= tol;
        match self {
            ConstraintSet::SimplexSum => sum_ok,
            ConstraintSet::ReturnFloor {
                returns,
                min_return,
            } => sum_ok && dot(theta, returns) >= min_return - tol,
        }
    }

    /// Constraints on the free coordinates `y = theta[..p-1]` after
    /// eliminating `theta_p = 1 - sum(y)`.
    pub fn free_halfspaces(&self, p: usize) -> Vec<HalfSpace> {
        match self {
            ConstraintSet::SimplexSum => Vec::new(),
            ConstraintSet::ReturnFloor {
                returns,
                min_return,
            } => {
                let rp = returns[p - 1];
                let a: Vec<f64> = returns[..p - 1].iter().map(|r| r - rp).collect();
                if a.iter().all(|v| *v == 0.0) {
                    // Constant returns: feasibility does not depend on theta.
                    return Vec::new();
                }
                vec![HalfSpace {
                    a,
                    b: min_return - rp,
                }]
            }
        }
    }
}

/// Embeds free coordinates into the sum-one hyperplane.
pub fn theta_from_free(y: &[f64]) -> Vec<f64> {
    let mut theta = y.to_vec();
    theta.push(1.0 - y.iter().sum::<f64>());
    theta
}

/// Chain rule through `theta_from_free`.
pub fn grad_to_free(g: &[f64]) -> Vec<f64> {
    let last = g[g.len() - 1];
    g[..g.len() - 1].iter().map(|v| v - last).collect()
}

/// Euclidean projection onto the constraint set.
pub fn project(theta: &[f64], c: &ConstraintSet) -> Result<Vec<f64>> {
    let p = theta.len();
    c.validate(p)?;
    let pf = p as f64;
    let excess = (theta.iter().sum::<f64>() - 1.0) / pf;
    let mut out: Vec<f64> = theta.iter().map(|t| t - excess).collect();
    if let ConstraintSet::ReturnFloor {
        returns,
        min_return,
    } = c
    {
        if dot(&out, returns) < *min_return {
            // The floor binds: project onto {1.t = 1, r.t = q}. Removing the
            // mean of r gives a direction orthogonal to the sum constraint.
            let rbar = returns.iter().sum::<f64>() / pf;
            let rc: Vec<f64> = returns.iter().map(|r| r - rbar).collect();
            let norm2 = dot(&rc, &rc);
            if norm2 == 0.0 {
                return Err(Error::Config("return floor unreachable".into()));
            }
            let step = (min_return - dot(&out, returns)) / norm2;
            for (o, r) in out.iter_mut().zip(&rc) {
                *o += step * r;
            }
        }
    }
    Ok(out)
}
