//! Run configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! See `docs/config.md` for the schema.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::ConstraintSet;
use crate::models::{CreditModelSpec, LoanClass, ModelSpec};
use crate::ra::{log_grid, HSearch, RaSchedule, SelectionRule};
use crate::solver::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    /// Shared Weibull shape, used when `alphas` is absent.
    pub alpha: f64,
    pub alphas: Option<Vec<f64>>,
    /// Constant off-diagonal copula correlation, used when `corr` is absent.
    pub corr_offdiag: f64,
    /// Full correlation matrix, row by row.
    pub corr: Option<Vec<Vec<f64>>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            alpha: 0.5,
            alphas: None,
            corr_offdiag: 0.3,
            corr: None,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        let alphas = match &self.alphas {
            Some(a) => {
                if a.len() != self.dim {
                    return Err(Error::Config(format!(
                        "{} alphas for dim {}",
                        a.len(),
                        self.dim
                    )));
                }
                a.clone()
            }
            None => vec![self.alpha; self.dim],
        };
        match &self.corr {
            Some(rows) => {
                if rows.len() != self.dim || rows.iter().any(|r| r.len() != self.dim) {
                    return Err(Error::Config(format!("corr must be {0}x{0}", self.dim)));
                }
                let m = DMatrix::from_fn(self.dim, self.dim, |i, j| rows[i][j]);
                ModelSpec::new(alphas, m)
            }
            None => ModelSpec::equicorrelated(alphas, self.corr_offdiag),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoanClassConfig {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub loans: u64,
    pub exposure: [f64; 2],
    #[serde(rename = "return")]
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreditConfig {
    pub factors: ModelConfig,
    pub classes: Vec<LoanClassConfig>,
    pub min_return: f64,
}

impl Default for CreditConfig {
    fn default() -> Self {
        let d = CreditModelSpec::default_two_class();
        Self {
            factors: ModelConfig {
                dim: 4,
                alpha: 1.0,
                alphas: None,
                corr_offdiag: 0.3,
                corr: None,
            },
            classes: d
                .classes
                .iter()
                .map(|c| LoanClassConfig {
                    intercept: c.intercept,
                    slopes: c.slopes.clone(),
                    loans: c.loans,
                    exposure: [c.exposure.0, c.exposure.1],
                    ret: c.ret,
                })
                .collect(),
            min_return: d.min_return,
        }
    }
}

impl CreditConfig {
    pub fn build(&self) -> Result<CreditModelSpec> {
        let classes = self
            .classes
            .iter()
            .map(|c| LoanClass {
                intercept: c.intercept,
                slopes: c.slopes.clone(),
                loans: c.loans,
                exposure: (c.exposure[0], c.exposure[1]),
                ret: c.ret,
            })
            .collect();
        let spec = CreditModelSpec::new(self.factors.build()?, classes, self.min_return)?;
        ConstraintSet::ReturnFloor {
            returns: spec.returns(),
            min_return: spec.min_return,
        }
        .validate(spec.n_classes())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// `theta . x` over `sum(theta) = 1`.
    Linear,
    /// Loan portfolio with a return floor.
    Credit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// No transformation.
    Plain,
    /// Fixed `h`.
    Vanilla,
    /// `h` re-selected between stages.
    Enhanced,
}

/// Candidate grid for `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Explicit grid; overrides `lo`, `hi`, `points`.
    pub grid: Option<Vec<f64>>,
    pub rule: SelectionRule,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            lo: 0.5,
            hi: 8.0,
            points: 13,
            grid: None,
            rule: SelectionRule::GridMin,
        }
    }
}

impl SelectionConfig {
    pub fn search(&self) -> Result<HSearch> {
        let grid = match &self.grid {
            Some(g) => g.clone(),
            None => {
                if !(self.lo > 0.0 && self.hi >= self.lo && self.points >= 1) {
                    return Err(Error::Config(
                        "h grid needs 0 < lo <= hi and points >= 1".into(),
                    ));
                }
                log_grid(self.lo, self.hi, self.points)
            }
        };
        if grid.is_empty() || grid.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Config("h grid must be nonempty and positive".into()));
        }
        Ok(HSearch::new(grid).with_rule(self.rule))
    }
}

/// One optimization run (the `solve` command).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub algorithm: Algorithm,
    pub beta: f64,
    /// `h` for the vanilla algorithm and `h_0` for the enhanced one.
    pub h: f64,
    /// Explicit stage sizes; when absent a geometric schedule is used.
    pub sizes: Option<Vec<usize>>,
    pub m1: usize,
    pub stages: usize,
    /// First-stage tolerance; later stages use `eps1 / sqrt(m_k / m_1)`.
    pub eps1: f64,
    /// Separate selection draws before stages 2..K (enhanced only).
    pub cv_sizes: Option<Vec<usize>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Linear,
            algorithm: Algorithm::Vanilla,
            beta: 0.037,
            h: 2.5,
            sizes: None,
            m1: 500,
            stages: 4,
            eps1: 0.01,
            cv_sizes: None,
        }
    }
}

impl RunConfig {
    pub fn schedule(&self) -> Result<RaSchedule> {
        let s = match &self.sizes {
            Some(sizes) => RaSchedule::with_sizes(sizes.clone(), self.eps1)?,
            None => RaSchedule::geometric(self.m1, self.stages, self.eps1)?,
        };
        match &self.cv_sizes {
            Some(cv) => s.with_cv(cv.clone()),
            None => Ok(s),
        }
    }
}

/// Settings of the transformation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformCheckConfig {
    pub h: f64,
    pub beta: f64,
    pub n: usize,
}

impl Default for TransformCheckConfig {
    fn default() -> Self {
        Self {
            h: 2.5,
            beta: 1e-3,
            n: 10_000,
        }
    }
}

/// Reference optimum used by all relative metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub n: usize,
    /// IS parameter of the reference sample; plain sampling when absent.
    pub h: Option<f64>,
    /// Solver tolerance relative to the optimal value.
    pub rel_eps: f64,
    /// Directory of cached reference solutions.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            n: 200_000,
            h: Some(2.5),
            rel_eps: 1e-5,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorstCaseConfig {
    pub beta: f64,
    pub r: f64,
    pub n: usize,
    pub hs: Vec<f64>,
    /// Grid points per axis of the box.
    pub points: usize,
    /// Draws used to estimate per-sample variances.
    pub pilot: usize,
}

impl Default for WorstCaseConfig {
    fn default() -> Self {
        Self {
            beta: 1e-3,
            r: 0.2,
            n: 2000,
            hs: vec![1.0, 2.5, 4.0],
            points: 5,
            pilot: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegretSearchConfig {
    pub betas: Vec<f64>,
    /// Target relative regret in percent.
    pub target_pct: f64,
    pub start: usize,
    pub cap: usize,
    /// Bisection steps after the doubling bracket is found.
    pub refine_steps: usize,
}

impl Default for RegretSearchConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.037, 0.003],
            target_pct: 1.0,
            start: 250,
            cap: 128_000,
            refine_steps: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct H0SweepConfig {
    pub beta: f64,
    pub h0s: Vec<f64>,
}

impl Default for H0SweepConfig {
    fn default() -> Self {
        Self {
            beta: 5e-4,
            h0s: vec![0.5, 1.0, 2.0, 4.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreditExperimentConfig {
    pub betas: Vec<f64>,
    pub n: usize,
    pub replications: usize,
    /// Draws for choosing `h` at the reference optimum.
    pub pilot: usize,
    /// Fixed IS parameter; chosen on the pilot when absent.
    pub h: Option<f64>,
    pub rel_eps: f64,
}

impl Default for CreditExperimentConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.01, 1e-3],
            n: 2000,
            replications: 20,
            pilot: 10_000,
            h: None,
            rel_eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltConfig {
    pub beta: f64,
    pub sizes: Vec<usize>,
    pub replications: usize,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            beta: 0.037,
            sizes: vec![500, 2000, 8000],
            replications: 50,
        }
    }
}

/// The experiment suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub betas: Vec<f64>,
    pub replications: usize,
    /// Stage sizes of both RA variants; plain SAA gets their sum in one stage.
    pub split: Vec<usize>,
    pub eps1: f64,
    /// `h` of the vanilla algorithm.
    pub h: f64,
    /// `h_0` of the enhanced algorithm.
    pub h0: f64,
    pub reference: ReferenceConfig,
    pub worst_case: WorstCaseConfig,
    pub regret_search: RegretSearchConfig,
    pub h0_sweep: H0SweepConfig,
    pub credit: CreditExperimentConfig,
    pub clt: CltConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.037, 0.01, 0.003, 0.001, 5e-4],
            replications: 50,
            split: vec![500, 2000],
            eps1: 0.01,
            h: 2.5,
            h0: 2.5,
            reference: ReferenceConfig::default(),
            worst_case: WorstCaseConfig::default(),
            regret_search: RegretSearchConfig::default(),
            h0_sweep: H0SweepConfig::default(),
            credit: CreditExperimentConfig::default(),
            clt: CltConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub credit: CreditConfig,
    pub solver: SolverOptions,
    pub selection: SelectionConfig,
    pub run: RunConfig,
    pub transform_check: TransformCheckConfig,
    pub experiments: ExperimentConfig,
}

fn check_beta(beta: f64, what: &str) -> Result<()> {
    if !(beta > 0.0 && beta < (-1.0f64).exp()) {
        return Err(Error::Config(format!(
            "{what}: beta = {beta} must lie in (0, 1/e)"
        )));
    }
    Ok(())
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form, seed excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        hex_digest(c.to_toml().as_bytes())
    }

    /// Checks everything that can be checked before sampling.
    pub fn validate(&self) -> Result<()> {
        self.model.build()?;
        self.credit.build()?;
        self.selection.search()?;
        check_beta(self.run.beta, "run")?;
        self.run.schedule()?;
        check_beta(self.transform_check.beta, "transform_check")?;
        let e = &self.experiments;
        for &b in &e.betas {
            check_beta(b, "experiments")?;
        }
        if e.replications < 2 || e.credit.replications < 2 || e.clt.replications < 2 {
            return Err(Error::Config(
                "replication counts must be at least 2".into(),
            ));
        }
        if e.split.is_empty() || e.split.contains(&0) {
            return Err(Error::Config(
                "experiments.split needs positive stage sizes".into(),
            ));
        }
        if e.reference.n == 0 || e.worst_case.n == 0 || e.worst_case.pilot == 0 || e.credit.n == 0 {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if e.worst_case.points == 0 || !(e.worst_case.r >= 0.0 && e.worst_case.r < 1.0) {
            return Err(Error::Config(
                "worst_case needs points >= 1 and 0 <= r < 1".into(),
            ));
        }
        if !(e.regret_search.target_pct > 0.0)
            || e.regret_search.start == 0
            || e.regret_search.cap < e.regret_search.start
        {
            return Err(Error::Config(
                "regret_search needs target > 0 and 0 < start <= cap".into(),
            ));
        }
        if e.clt.sizes.len() < 2 {
            return Err(Error::Config("clt.sizes needs at least two stages".into()));
        }
        for &b in e
            .credit
            .betas
            .iter()
            .chain([&e.worst_case.beta, &e.h0_sweep.beta, &e.clt.beta])
        {
            check_beta(b, "experiments")?;
        }
        for &b in &e.regret_search.betas {
            check_beta(b, "regret_search")?;
        }
        Ok(())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.model.build().unwrap().dim(), 5);
    }

    #[test]
    fn roundtrip_and_hash() {
        let c = Config::default();
        let back = Config::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let mut d = c.clone();
        d.seed = 99;
        assert_eq!(d.hash(), c.hash());
        d.experiments.reference.n = 1000;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Config::from_toml("bogus = 1"),
            Err(Error::Config(_))
        ));
        assert!(Config::from_toml("[run]\nbeta = 0.5").is_err());
        assert!(Config::from_toml("[model]\ndim = 2\nalphas = [1.0]").is_err());
        assert!(Config::from_toml("[credit]\nclasses = []").is_err());
    }

    #[test]
    fn sections_override() {
        let c = Config::from_toml(
            "seed = 7\n[model]\ndim = 2\ncorr = [[1.0, 0.5], [0.5, 1.0]]\n[run]\nsizes = [100, 400]\n[selection]\nrule = \"smoothed\"",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.run.schedule().unwrap().sample_sizes, vec![100, 400]);
        assert_eq!(c.selection.search().unwrap().rule, SelectionRule::Smoothed);
    }
}
