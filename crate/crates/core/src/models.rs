//! Distribution of the risk vector and the loan-portfolio factor model.
//!
//! `X` has Weibull-type marginals `P(X_i > x) = exp(-x^alpha_i)` coupled by
//! a Gaussian copula with correlation matrix `R`. Sampling goes through
//! normal scores (`z -> x = (-log(1 - Phi(z)))^(1/alpha)`), and the joint
//! log-density is evaluated exactly so that likelihood ratios can be formed
//! in log space.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, rng_from, StreamRng};
use crate::special::{log_norm_sf, norm_quantile, norm_quantile_upper_log};

/// Weibull marginals joined by a Gaussian copula.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    alphas: Vec<f64>,
    corr: DMatrix<f64>,
    chol: DMatrix<f64>,
    // R^{-1} - I, the quadratic form of the copula density.
    precision_excess: DMatrix<f64>,
    log_det: f64,
    independent: bool,
}

impl ModelSpec {
    pub fn new(alphas: Vec<f64>, corr: DMatrix<f64>) -> Result<Self> {
        let d = alphas.len();
        if d == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidModel(format!(
                "Weibull shape must be positive, got {a}"
            )));
        }
        if corr.nrows() != d || corr.ncols() != d {
            return Err(Error::InvalidCorrelation(format!(
                "expected {d}x{d}, got {}x{}",
                corr.nrows(),
                corr.ncols()
            )));
        }
        for i in 0..d {
            if (corr[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidCorrelation(format!(
                    "diagonal entry {i} is {}, expected 1",
                    corr[(i, i)]
                )));
            }
            for j in 0..i {
                if !corr[(i, j)].is_finite() || (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidCorrelation(format!(
                        "not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = corr
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidCorrelation("not positive definite".into()))?;
        let lower = chol.l();
        let log_det = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision_excess = chol.inverse() - DMatrix::identity(d, d);
        let independent = (0..d).all(|i| (0..d).all(|j| i == j || corr[(i, j)] == 0.0));
        Ok(Self {
            alphas,
            corr,
            chol: lower,
            precision_excess,
            log_det,
            independent,
        })
    }

    /// Equicorrelated copula with off-diagonal `rho`.
    pub fn equicorrelated(alphas: Vec<f64>, rho: f64) -> Result<Self> {
        let d = alphas.len();
        let corr = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho });
        Self::new(alphas, corr)
    }

    pub fn independent(alphas: Vec<f64>) -> Result<Self> {
        Self::equicorrelated(alphas, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    /// True when every marginal has the same shape and the correlation is
    /// constant off the diagonal, so the law is invariant under permutation.
    pub fn is_exchangeable(&self) -> bool {
        let d = self.dim();
        let a0 = self.alphas[0];
        let c0 = if d > 1 { self.corr[(0, 1)] } else { 0.0 };
        self.alphas.iter().all(|a| *a == a0)
            && (0..d).all(|i| (0..d).all(|j| i == j || self.corr[(i, j)] == c0))
    }
}

/// Weibull quantile, `F^{-1}(u) = (-log(1 - u))^(1/alpha)`.
pub fn weibull_quantile(u: f64, alpha: f64) -> f64 {
    (-(-u).ln_1p()).powf(1.0 / alpha)
}

/// Maps a standard normal score to the Weibull marginal through the survival
/// function, which keeps full precision in the upper tail.
pub fn weibull_from_score(z: f64, alpha: f64) -> f64 {
    (-log_norm_sf(z)).powf(1.0 / alpha)
}

/// Normal score `Phi^{-1}(F(x))` of a Weibull coordinate.
pub fn weibull_score(x: f64, alpha: f64) -> f64 {
    let hazard = x.powf(alpha);
    if hazard > std::f64::consts::LN_2 {
        // log survival is exactly -hazard.
        norm_quantile_upper_log(-hazard)
    } else {
        norm_quantile(-(-hazard).exp_m1())
    }
}

/// `n` draws of `X`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    raw: Vec<f64>,
    seed: u64,
    /// Index of the first row within the batch it was split from.
    offset: usize,
}

impl SampleBatch {
    /// Wraps externally produced rows.
    pub fn from_rows(dim: usize, raw: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 || raw.is_empty() || !raw.len().is_multiple_of(dim) {
            return Err(Error::EmptyBatch);
        }
        Ok(Self {
            dim,
            raw,
            seed,
            offset: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.raw.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.raw.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.raw
    }

    /// The first `n` rows, keeping the seed so scenario noise lines up.
    pub fn head(&self, n: usize) -> SampleBatch {
        let n = n.min(self.len());
        SampleBatch {
            dim: self.dim,
            raw: self.raw[..n * self.dim].to_vec(),
            seed: self.seed,
            offset: self.offset,
        }
    }

    /// Rows `..n` and `n..`; both keep the scenario noise of the whole batch.
    pub fn split_at(&self, n: usize) -> (SampleBatch, SampleBatch) {
        let n = n.min(self.len());
        let tail = SampleBatch {
            dim: self.dim,
            raw: self.raw[n * self.dim..].to_vec(),
            seed: self.seed,
            offset: self.offset + n,
        };
        (self.head(n), tail)
    }

    /// Seed for the auxiliary noise attached to row `i` (e.g. loan defaults).
    pub fn scenario_seed(&self, i: usize) -> u64 {
        derive(self.seed, (self.offset + i) as u64)
    }
}

/// Draws `n` i.i.d. copies of `X`.
pub fn sample_x(spec: &ModelSpec, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let d = spec.dim();
    let mut rng = rng_from(seed);
    let mut raw = Vec::with_capacity(n * d);
    let mut eps = vec![0.0; d];
    for _ in 0..n {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let z = if spec.independent {
                eps[i]
            } else {
                (0..=i).map(|j| spec.chol[(i, j)] * eps[j]).sum()
            };
            raw.push(weibull_from_score(z, spec.alphas[i]));
        }
    }
    Ok(SampleBatch {
        dim: d,
        raw,
        seed,
        offset: 0,
    })
}

/// Joint log-density of `X` at `x`.
pub fn log_density(spec: &ModelSpec, x: &[f64]) -> Result<f64> {
    let d = spec.dim();
    if x.len() != d {
        return Err(Error::Domain(format!(
            "expected {d} coordinates, got {}",
            x.len()
        )));
    }
    let mut total = 0.0;
    for (&xi, &a) in x.iter().zip(&spec.alphas) {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::Domain(format!(
                "density needs positive coordinates, got {xi}"
            )));
        }
        let lx = xi.ln();
        total += a.ln() + (a - 1.0) * lx - (a * lx).exp();
    }
    if !spec.independent {
        let z = DVector::from_iterator(
            d,
            x.iter()
                .zip(&spec.alphas)
                .map(|(&xi, &a)| weibull_score(xi, a)),
        );
        let quad = z.dot(&(&spec.precision_excess * &z));
        total += -0.5 * spec.log_det - 0.5 * quad;
    }
    Ok(total)
}

/// One loan class of the credit portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanClass {
    /// Logistic intercept of the default probability.
    pub intercept: f64,
    /// Logistic loadings on the market factors.
    pub slopes: Vec<f64>,
    pub loans: u64,
    /// Support `[lo, hi]` of the uniform loss given default.
    pub exposure: (f64, f64),
    /// Return per unit of holding.
    pub ret: f64,
}

impl LoanClass {
    /// `p(x) = 1 / (1 + exp(-(a + b.x)))`.
    pub fn default_prob(&self, x: &[f64]) -> f64 {
        let eta = self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        1.0 / (1.0 + (-eta).exp())
    }
}

/// Loan portfolio driven by common market factors.
#[derive(Debug, Clone)]
pub struct CreditModelSpec {
    pub factors: ModelSpec,
    pub classes: Vec<LoanClass>,
    /// Minimum portfolio return `q` in `theta . r >= q`.
    pub min_return: f64,
}

impl CreditModelSpec {
    pub fn new(factors: ModelSpec, classes: Vec<LoanClass>, min_return: f64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidModel(
                "credit model needs at least one class".into(),
            ));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.slopes.len() != factors.dim() {
                return Err(Error::InvalidModel(format!(
                    "class {i}: {} slopes for {} factors",
                    c.slopes.len(),
                    factors.dim()
                )));
            }
            if c.loans == 0 {
                return Err(Error::InvalidModel(format!("class {i} has no loans")));
            }
            let (lo, hi) = c.exposure;
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "class {i}: bad exposure support [{lo}, {hi}]"
                )));
            }
            if !(c.intercept.is_finite()
                && c.ret.is_finite()
                && c.slopes.iter().all(|b| b.is_finite()))
            {
                return Err(Error::InvalidModel(format!(
                    "class {i}: non-finite coefficient"
                )));
            }
        }
        Ok(Self {
            factors,
            classes,
            min_return,
        })
    }

    /// Two classes of 5000 loans on four exponential factors (correlation
    /// 0.3). Intercepts put the unconditional default rates near 1% and 2%;
    /// each class loads 0.5 on three of the four factors.
    pub fn default_two_class() -> Self {
        let factors =
            ModelSpec::equicorrelated(vec![1.0; 4], 0.3).expect("valid default factor model");
        let classes = vec![
            LoanClass {
                intercept: -6.97,
                slopes: vec![0.5, 0.5, 0.5, 0.0],
                loans: 5000,
                exposure: (0.5, 1.5),
                ret: 0.04,
            },
            LoanClass {
                intercept: -6.17,
                slopes: vec![0.0, 0.5, 0.5, 0.5],
                loans: 5000,
                exposure: (0.5, 1.5),
                ret: 0.06,
            },
        ];
        Self::new(factors, classes, 0.05).expect("valid default credit model")
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.ret).collect()
    }
}

/// Per-class default losses given the factors: the number of defaults in a
/// class is `Binomial(n_i, p_i(x))` and each default loses an independent
/// uniform exposure. Same law as flipping every loan individually.
pub fn sample_class_losses(
    spec: &CreditModelSpec,
    x: &[f64],
    rng: &mut StreamRng,
    out: &mut [f64],
) {
    for (class, slot) in spec.classes.iter().zip(out.iter_mut()) {
        let p = class.default_prob(x).clamp(0.0, 1.0);
        let defaults = Binomial::new(class.loans, p)
            .expect("probability clamped to [0, 1]")
            .sample(rng);
        let (lo, hi) = class.exposure;
        let mut total = 0.0;
        if hi > lo {
            for _ in 0..defaults {
                total += rng.random_range(lo..hi);
            }
        } else {
            total = lo * defaults as f64;
        }
        *slot = total;
    }
}

/// Portfolio loss `sum_i theta_i * (class-i default losses)` for one scenario.
pub fn sample_credit_loss(spec: &CreditModelSpec, x: &[f64], theta: &[f64], seed: u64) -> f64 {
    let mut losses = vec![0.0; spec.n_classes()];
    sample_class_losses(spec, x, &mut rng_from(seed), &mut losses);
    theta.iter().zip(&losses).map(|(t, l)| t * l).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weibull_inverse_cdf_examples() {
        let u = 1.0 - (-1.0f64).exp();
        assert!((weibull_quantile(u, 1.0) - 1.0).abs() < 1e-14);
        let u = 1.0 - (-2.0f64).exp();
        assert!((weibull_quantile(u, 0.5) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn score_roundtrip() {
        for &a in &[0.5, 1.0, 2.0] {
            for &z in &[-4.0, -1.0, 0.0, 0.3, 2.0, 6.0, 15.0] {
                let x = weibull_from_score(z, a);
                assert!(
                    (weibull_score(x, a) - z).abs() < 1e-9 * (1.0 + z.abs()),
                    "a={a} z={z}"
                );
            }
        }
    }

    #[test]
    fn log_density_examples() {
        let one = ModelSpec::independent(vec![1.0]).unwrap();
        assert!((log_density(&one, &[1.0]).unwrap() + 1.0).abs() < 1e-14);
        let two = ModelSpec::independent(vec![1.0, 1.0]).unwrap();
        assert!((log_density(&two, &[1.0, 2.0]).unwrap() + 3.0).abs() < 1e-14);
    }

    #[test]
    fn log_density_rejects_nonpositive() {
        let one = ModelSpec::independent(vec![1.0]).unwrap();
        assert!(matches!(log_density(&one, &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(log_density(&one, &[-1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_correlation_rejected() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(matches!(
            ModelSpec::new(vec![1.0, 1.0], bad),
            Err(Error::InvalidCorrelation(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(matches!(
            ModelSpec::new(vec![1.0, 1.0], asym),
            Err(Error::InvalidCorrelation(_))
        ));
        assert!(matches!(
            ModelSpec::independent(vec![1.0, -0.5]),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_nonnegative() {
        let spec = ModelSpec::equicorrelated(vec![0.5, 1.0, 2.0], 0.3).unwrap();
        let a = sample_x(&spec, 500, 11).unwrap();
        let b = sample_x(&spec, 500, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        assert!(a.as_slice().iter().all(|v| *v >= 0.0 && v.is_finite()));
        assert!(matches!(sample_x(&spec, 0, 1), Err(Error::EmptyBatch)));
    }

    #[test]
    fn credit_loss_extremes() {
        let factors = ModelSpec::independent(vec![1.0; 2]).unwrap();
        let class = |intercept: f64| LoanClass {
            intercept,
            slopes: vec![0.0, 0.0],
            loans: 5000,
            exposure: (1.0, 1.0),
            ret: 0.05,
        };
        let never =
            CreditModelSpec::new(factors.clone(), vec![class(-800.0), class(-800.0)], 0.0).unwrap();
        assert_eq!(sample_credit_loss(&never, &[1.0, 1.0], &[0.5, 0.5], 3), 0.0);
        let always = CreditModelSpec::new(factors, vec![class(800.0), class(800.0)], 0.0).unwrap();
        assert_eq!(
            sample_credit_loss(&always, &[1.0, 1.0], &[0.5, 0.5], 3),
            5000.0
        );
    }

    #[test]
    fn credit_spec_validation() {
        let factors = ModelSpec::independent(vec![1.0; 2]).unwrap();
        let class = LoanClass {
            intercept: -4.0,
            slopes: vec![0.5],
            loans: 10,
            exposure: (0.0, 1.0),
            ret: 0.0,
        };
        assert!(CreditModelSpec::new(factors.clone(), vec![class.clone()], 0.0).is_err());
        let bad = LoanClass {
            slopes: vec![0.5, 0.5],
            exposure: (2.0, 1.0),
            ..class
        };
        assert!(CreditModelSpec::new(factors, vec![bad], 0.0).is_err());
        let default = CreditModelSpec::default_two_class();
        assert_eq!(default.n_classes(), 2);
        assert_eq!(default.factors.dim(), 4);
    }

    #[test]
    fn split_keeps_scenario_seeds() {
        let spec = ModelSpec::independent(vec![1.0, 2.0]).unwrap();
        let b = sample_x(&spec, 7, 11).unwrap();
        let (a, c) = b.split_at(3);
        assert_eq!((a.len(), c.len()), (3, 4));
        assert_eq!(c.row(0), b.row(3));
        assert_eq!(a.scenario_seed(2), b.scenario_seed(2));
        assert_eq!(c.scenario_seed(1), b.scenario_seed(4));
    }
}
