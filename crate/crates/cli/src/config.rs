use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sddelab::estimates::{BetaProcess, GronwallGenerator, MomentVariant, RadiiLadder};
use sddelab::model::PathRole;

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    VerifyBound,
    Stability,
    Zvonkin,
    Maximal,
    Gronwall,
    Krylov,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::VerifyBound => "verify-bound",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Zvonkin => "zvonkin",
            ExperimentKind::Maximal => "maximal",
            ExperimentKind::Gronwall => "gronwall",
            ExperimentKind::Krylov => "krylov",
        }
    }
}

/// One run. Sections not used by `experiment` must be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zvonkin: Option<ZvonkinConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maximal: Option<MaximalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gronwall: Option<GronwallConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub krylov: Option<KrylovConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    pub delay: f64,
    pub horizon: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub drift: DriftConfig,
    pub diffusion: DiffusionConfig,
    pub functional: FunctionalConfig,
    /// Value of the constant initial segment.
    pub initial: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_cutoff_level: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_level: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftConfig {
    Zero,
    Ou { rate: f64 },
    Constant { value: Vec<f64> },
    Singular { beta: f64, amplitude: f64, p: f64, q: f64 },
    BoxIndicator { lo: f64, hi: f64, t0: f64, t1: f64, p: f64, q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionConfig {
    /// Degenerate `sigma = 0`; simulate only.
    Zero,
    Identity,
    Scalar { s: f64 },
    Diag { values: Vec<f64>, kappa: f64 },
    HolderSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    Zero,
    DiscreteDelay { c: f64 },
    SqrtDelay { c: f64 },
    DistributedDelay { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleConfig {
    Solution,
    Driftless,
}

impl From<RoleConfig> for PathRole {
    fn from(r: RoleConfig) -> Self {
        match r {
            RoleConfig::Solution => PathRole::Solution,
            RoleConfig::Driftless => PathRole::Driftless,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundConfig {
    ExpSupMoment {
        alpha: f64,
        variant: MomentVariant,
    },
    Khasminskii {
        beta: BetaProcess,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
    /// Direct against reweighted estimate of `X(T)` (first component).
    Girsanov { checkpoints: usize, tolerance_se: f64 },
    Novikov {},
    Holder {
        alphas: Vec<f64>,
        levels: usize,
        factor: usize,
        role: RoleConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub gamma: f64,
    pub epsilons: Vec<f64>,
    /// Constant perturbation direction.
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZvonkinConfig {
    pub halfwidth: f64,
    pub nx: usize,
    pub n_times: usize,
    pub theta: f64,
    /// Candidate window lengths for the contraction search.
    pub ladder: Vec<f64>,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sandwich: Option<SandwichConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandwichConfig {
    pub n_pairs: usize,
    /// Constant offset of the second initial segment.
    pub offset: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaximalFunctionConfig {
    /// Indicator of `[-a, a]^d`.
    Interval { a: f64 },
    LinearCore,
    GaussianBump,
    Constant { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaximalConfig {
    pub function: MaximalFunctionConfig,
    pub d: usize,
    pub halfwidth: f64,
    pub nx: usize,
    pub ladder: RadiiLadder,
    /// Pairs for the gradient inequality; smooth functions only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub given_c: Option<f64>,
    #[serde(default)]
    pub lp_exponents: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallConfig {
    pub generator: GronwallGenerator,
    pub p: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub scale: f64,
    #[serde(default)]
    pub growth_horizons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrylovConfig {
    pub p_prime: f64,
    pub q_prime: f64,
    /// Support half-widths of the shrinking indicator family.
    pub epsilons: Vec<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// The master seed of the run, if the experiment has one.
    pub fn seed(&self) -> Option<u64> {
        match self.experiment {
            ExperimentKind::Maximal => self.maximal.as_ref().and_then(|m| m.seed),
            _ => self.mc.map(|m| m.master_seed),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(mc) = self.mc.as_mut() {
            mc.master_seed = seed;
        }
        if let Some(m) = self.maximal.as_mut() {
            m.seed = Some(seed);
        }
        self
    }
}
