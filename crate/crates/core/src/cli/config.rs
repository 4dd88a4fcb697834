//! TOML experiment configuration and its translation into library objects.

use serde::{Deserialize, Serialize};

use crate::noise::{NoiseKind, NoiseModel, ScaleRule};
use crate::operators::{
    kernel_contraction, linear_contraction, pointwise_monotone, MonotoneBounds, RootProblem,
};
use crate::sa::{ClippedNormGain, ConstantGain, MeanNormGain, NoiseGain};
use crate::schedule::StepSchedule;
use crate::space::{GridFunction, SpaceDescriptor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceSpec,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub schedule: StepSchedule,
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSpec {
    Sup,
    Lp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub norm: NormSpec,
    /// Exponent for `norm = "lp"`.
    pub p: Option<f64>,
    /// Number of grid nodes.
    pub grid: usize,
    #[serde(default = "one")]
    pub dim: usize,
    /// Declared smoothness constant `D` (with exponent `min(p, 2)`).
    pub smoothness: Option<f64>,
}

fn one() -> usize {
    1
}

/// A scalar profile applied to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude sin(2 pi frequency t + phase)`.
    Sine {
        amplitude: f64,
        #[serde(default = "unit")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `intercept + slope t`.
    Ramp {
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl FunctionSpec {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { value } => value,
            Self::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin(),
            Self::Ramp { slope, intercept } => intercept + slope * t,
        }
    }

    pub fn build(&self, space: &SpaceDescriptor) -> Result<GridFunction, String> {
        GridFunction::from_scalar_fn(space.m(), space.d(), |t| self.eval(t))
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `F(x) = gamma x + offset`, `G = I - F`.
    LinearContraction {
        gamma: f64,
        #[serde(default)]
        offset: FunctionSpec,
    },
    /// `F(x) = gamma K x + offset` with a Gaussian smoothing kernel `K`.
    KernelContraction {
        gamma: f64,
        bandwidth: f64,
        #[serde(default)]
        offset: FunctionSpec,
    },
    /// `G(x)(t) = slope (x(t) - target(t))`.
    PointwiseLinear {
        slope: f64,
        #[serde(default)]
        target: FunctionSpec,
    },
    /// `G(x)(t) = linear x(t) + arctan_weight atan(x(t)) - target(t)`.
    PointwiseArctan {
        linear: f64,
        arctan_weight: f64,
        #[serde(default)]
        target: FunctionSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
#[serde(tag = "rule")]
pub enum ScaleSpec {
    Fixed {
        scale: f64,
        #[serde(default)]
        growth: f64,
    },
    /// Calibrated against the configured schedule so that the truncated
    /// second moment at step `n` equals `n`.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    #[default]
    None,
    GaussianIid {
        sigma: f64,
    },
    Martingale {
        sigma: f64,
    },
    HeavyTailedGlobal {
        tail: f64,
        scale: ScaleSpec,
    },
    HeavyTailedPointwise {
        tail: f64,
        scale: ScaleSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineSpec {
    Stochastic,
    Controlled,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSpec {
    Constant { value: f64 },
    ClippedNorm,
    MeanNorm,
}

impl GainSpec {
    pub fn build(&self) -> Box<dyn NoiseGain> {
        match *self {
            Self::Constant { value } => Box::new(ConstantGain(value)),
            Self::ClippedNorm => Box::new(ClippedNormGain),
            Self::MeanNorm => Box::new(MeanNormGain),
        }
    }
}

/// Deterministic noise sequences for the deterministic engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SequenceSpec {
    Zero,
    /// `z_k = ((-1)^k / alpha_k) h / (k + 1)^2`.
    Summable {
        h: FunctionSpec,
    },
    /// `z_k = h`.
    Constant {
        h: FunctionSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_engine")]
    pub engine: EngineSpec,
    pub n_steps: usize,
    pub seeds: Option<Vec<u64>>,
    pub seed_count: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub x0: FunctionSpec,
    /// Also write the iterate at every dyadic checkpoint.
    #[serde(default = "yes")]
    pub checkpoints: bool,
    pub gain: Option<GainSpec>,
    #[serde(default = "unit")]
    pub c_bound: f64,
    pub sequence: Option<SequenceSpec>,
    #[serde(default = "yes")]
    pub psi: bool,
}

fn default_engine() -> EngineSpec {
    EngineSpec::Stochastic
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: String,
}

fn default_dir() -> String {
    "runs/latest".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeSpec {
    /// Gaussian noise.
    Gaussian,
    /// Martingale noise.
    Martingale,
    /// Heavy tails in norm, `p`-uniformly smooth space.
    SmoothSpace,
    /// Heavy tails node by node, `L^p` space.
    Lebesgue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsSpec {
    /// Analytic bounds of the configured noise model.
    Model,
    /// `delta_n = mu_n = 1 / ln(n + 2)`, `sigma_n^2 = n`.
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub regime: Option<RegimeSpec>,
    #[serde(default = "default_terms")]
    pub series_terms: usize,
    #[serde(default = "default_r2")]
    pub r2_samples: usize,
    pub r2_radius: Option<f64>,
    #[serde(default = "default_bounds")]
    pub bounds: BoundsSpec,
    #[serde(default = "default_pairs")]
    pub smoothness_pairs: usize,
    #[serde(default = "default_reps")]
    pub doob_replications: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_terms() -> usize {
    1 << 20
}

fn default_r2() -> usize {
    2000
}

fn default_bounds() -> BoundsSpec {
    BoundsSpec::Model
}

fn default_pairs() -> usize {
    2000
}

fn default_reps() -> usize {
    10_000
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            regime: None,
            series_terms: default_terms(),
            r2_samples: default_r2(),
            r2_radius: None,
            bounds: default_bounds(),
            smoothness_pairs: default_pairs(),
            doob_replications: default_reps(),
            seed: 0,
        }
    }
}

/// Configuration errors carry a message naming the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{key}: {e}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: toml::Value) -> Result<Self, ConfigError> {
        let cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that every section resolves to a constructible object.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run.n_steps == 0 {
            return Err(bad("run.n_steps", "must be at least 1"));
        }
        if self.seeds().is_empty() {
            return Err(bad("run.seeds", "need at least one seed"));
        }
        let space = self.build_space()?;
        self.build_problem(&space)?;
        self.build_schedule()?;
        self.build_noise(&space)?;
        self.run.x0.build(&space).map_err(|e| bad("run.x0", e))?;
        if self.run.engine == EngineSpec::Deterministic && self.run.sequence.is_none() {
            return Err(bad("run.sequence", "required by the deterministic engine"));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match (&self.run.seeds, self.run.seed_count) {
            (Some(s), _) => s.clone(),
            (None, Some(c)) => (0..c as u64).map(|i| self.run.base_seed + i).collect(),
            (None, None) => vec![self.run.base_seed],
        }
    }

    pub fn build_space(&self) -> Result<SpaceDescriptor, ConfigError> {
        let s = &self.space;
        let mut space = match s.norm {
            NormSpec::Sup => SpaceDescriptor::sup(s.grid, s.dim).map_err(|e| bad("space", e))?,
            NormSpec::Lp => {
                let p =
                    s.p.ok_or_else(|| bad("space.p", "required for norm = \"lp\""))?;
                SpaceDescriptor::lp(p, s.grid, s.dim).map_err(|e| bad("space.p", e))?
            }
        };
        if let Some(d) = s.smoothness {
            let p = s.p.unwrap_or(2.0).min(2.0);
            space = space
                .with_smoothness(p, d)
                .map_err(|e| bad("space.smoothness", e))?;
        }
        Ok(space)
    }

    pub fn build_problem(&self, space: &SpaceDescriptor) -> Result<RootProblem, ConfigError> {
        let key = "problem";
        match self.problem {
            ProblemSpec::LinearContraction { gamma, offset } => {
                let b = offset.build(space).map_err(|e| bad("problem.offset", e))?;
                linear_contraction(gamma, b, *space).map_err(|e| bad(key, e))
            }
            ProblemSpec::KernelContraction {
                gamma,
                bandwidth,
                offset,
            } => {
                let b = offset.build(space).map_err(|e| bad("problem.offset", e))?;
                kernel_contraction(gamma, bandwidth, b, *space).map_err(|e| bad(key, e))
            }
            ProblemSpec::PointwiseLinear { slope, target } => {
                let bounds =
                    MonotoneBounds::new(slope, slope).map_err(|e| bad("problem.slope", e))?;
                pointwise_monotone(move |t, v| slope * (v - target.eval(t)), bounds, *space)
                    .map_err(|e| bad(key, e))
            }
            ProblemSpec::PointwiseArctan {
                linear,
                arctan_weight,
                target,
            } => {
                if !(arctan_weight >= 0.0) {
                    return Err(bad("problem.arctan_weight", "must be non-negative"));
                }
                let bounds = MonotoneBounds::new(linear, linear + arctan_weight)
                    .map_err(|e| bad("problem.linear", e))?;
                pointwise_monotone(
                    move |t, v| linear * v + arctan_weight * v.atan() - target.eval(t),
                    bounds,
                    *space,
                )
                .map_err(|e| bad(key, e))
            }
        }
    }

    pub fn build_schedule(&self) -> Result<StepSchedule, ConfigError> {
        self.schedule
            .clone()
            .validated()
            .map_err(|e| bad("schedule", e))
    }

    /// `None` when the configured noise is `none`.
    pub fn build_noise(&self, space: &SpaceDescriptor) -> Result<Option<NoiseModel>, ConfigError> {
        let scale = |s: ScaleSpec| -> Result<ScaleRule, ConfigError> {
            Ok(match s {
                ScaleSpec::Fixed { scale, growth } => ScaleRule::Fixed { scale, growth },
                ScaleSpec::Calibrated => ScaleRule::Calibrated {
                    schedule: self.build_schedule()?,
                },
            })
        };
        let kind = match self.noise {
            NoiseSpec::None => return Ok(None),
            NoiseSpec::GaussianIid { sigma } => NoiseKind::GaussianIid { sigma },
            NoiseSpec::Martingale { sigma } => NoiseKind::IndependentMartingale { sigma },
            NoiseSpec::HeavyTailedGlobal { tail, scale: s } => NoiseKind::HeavyTailedGlobal {
                tail,
                scale: scale(s)?,
            },
            NoiseSpec::HeavyTailedPointwise { tail, scale: s } => NoiseKind::HeavyTailedPointwise {
                tail,
                scale: scale(s)?,
            },
        };
        NoiseModel::new(kind, *space)
            .map(Some)
            .map_err(|e| bad("noise", e))
    }
}
