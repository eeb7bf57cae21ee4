//! Experiment configuration: a TOML file with dotted sections describing the
//! model, environment, lattice sweep, solver knobs, and seeds.  Unknown keys
//! are hard errors so typos cannot silently change a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentSpec;
use crate::solver::{Scheme, SolveParams};
use crate::{HomogError, Result};

/// What quantity the run measures and which bands it is judged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// sup-in-time L2 distance between lattice and limiting solutions vs k
    HomogenizationRate,
    /// normalized corrector size Q(m) across dyadic box levels
    CorrectorScaling,
    /// deterministic and random operator gaps vs k
    OperatorGaps,
    /// good-vertex fractions and empirical Poincare constants across scales
    PoincareSuite,
    /// L2 defect of truncating the limiting operator input by a cutoff vs R
    CutoffLemma,
    /// solution identity under reparametrizing time by the mean profile
    TimeChangeCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::HomogenizationRate,
        ExperimentKind::CorrectorScaling,
        ExperimentKind::OperatorGaps,
        ExperimentKind::PoincareSuite,
        ExperimentKind::CutoffLemma,
        ExperimentKind::TimeChangeCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::HomogenizationRate => "homogenization-rate",
            ExperimentKind::CorrectorScaling => "corrector-scaling",
            ExperimentKind::OperatorGaps => "operator-gaps",
            ExperimentKind::PoincareSuite => "poincare-suite",
            ExperimentKind::CutoffLemma => "cutoff-lemma",
            ExperimentKind::TimeChangeCheck => "time-change-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub d: usize,
    pub alpha: f64,
    pub t_horizon: f64,
    /// spatial decay exponent of the manufactured source; omit for a
    /// compactly supported construction
    #[serde(default)]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    /// half-width of the box (-R, R]^d
    pub r: f64,
    /// dyadic scale factors, strictly increasing
    pub k_list: Vec<u32>,
}

fn default_cfl() -> f64 {
    0.5
}

fn default_snapshots() -> usize {
    33
}

fn default_scheme() -> Scheme {
    Scheme::Euler
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_cfl")]
    pub cfl_fraction: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default)]
    pub dt_override: Option<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            cfl_fraction: default_cfl(),
            snapshots: default_snapshots(),
            dt_override: None,
            scheme: default_scheme(),
        }
    }
}

impl SolverBlock {
    pub fn params(&self, t_horizon: f64) -> SolveParams {
        SolveParams {
            t_horizon,
            cfl_fraction: self.cfl_fraction,
            snapshots: self.snapshots,
            dt_override: self.dt_override,
            scheme: self.scheme,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_threads() -> usize {
    1
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelBlock,
    pub environment: EnvironmentSpec,
    pub lattice: LatticeBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    /// offsets added to the environment seed, one task stream per entry
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.alpha > 0.0 && m.alpha < 2.0) {
            return Err(HomogError::Config(format!("alpha must lie in (0, 2), got {}", m.alpha)));
        }
        if m.alpha == m.d as f64 {
            return Err(HomogError::Config(format!(
                "alpha must not equal the dimension (boundary case excluded), got alpha = d = {}",
                m.d
            )));
        }
        if !(m.t_horizon > 0.0) {
            return Err(HomogError::Config(format!("t_horizon must be positive, got {}", m.t_horizon)));
        }
        if let Some(b) = m.beta {
            if !(b > 0.0) {
                return Err(HomogError::Config(format!("beta must be positive, got {b}")));
            }
        }
        self.environment.validate()?;
        if self.lattice.k_list.is_empty() {
            return Err(HomogError::Config("k_list must be non-empty".into()));
        }
        for &k in &self.lattice.k_list {
            if k == 0 || !k.is_power_of_two() {
                return Err(HomogError::Config(format!("k_list entries must be dyadic, got {k}")));
            }
        }
        for w in self.lattice.k_list.windows(2) {
            if w[1] <= w[0] {
                return Err(HomogError::Config(format!(
                    "k_list must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !(self.lattice.r > 0.0) {
            return Err(HomogError::Config(format!("box half-width must be positive, got {}", self.lattice.r)));
        }
        if self.seeds.is_empty() {
            return Err(HomogError::Config("seeds must be non-empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(HomogError::Config("seeds must be distinct".into()));
        }
        if !(self.solver.cfl_fraction > 0.0 && self.solver.cfl_fraction <= 1.0) {
            return Err(HomogError::Config(format!(
                "cfl_fraction must lie in (0, 1], got {}",
                self.solver.cfl_fraction
            )));
        }
        if self.solver.snapshots < 2 {
            return Err(HomogError::Config("snapshots must be at least 2".into()));
        }
        if self.threads == 0 {
            return Err(HomogError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical serialized form echoed into the run report.
    pub fn echo(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HomogError::Config(format!("config echo failed: {e}")))
    }
}

/// Reads and fully validates a config file, resolving defaults.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HomogError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| HomogError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
