//! Run configuration: JSON parsing with unknown-key rejection, validation,
//! and resolution into the runtime components.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::increment::{tau_from_magnitude, IncrementProfile};
use crate::nn::Activation;
use crate::schedule::{ScheduleSpec, ScheduleTable};
use crate::strategy::{SamplerKind, TimeStepSampler, WeightKind, WeightTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Boost factor for steps `t <= tau`.
    #[serde(default = "default_k")]
    pub k: f64,
    /// Explicit threshold step; when absent it is derived from `r`.
    #[serde(default)]
    pub tau: Option<usize>,
    /// Magnitude used both for the profile's convergence boundary and for
    /// deriving `tau` when it is not given.
    #[serde(default = "default_r")]
    pub r: f64,
}

fn default_k() -> f64 {
    5.0
}
fn default_r() -> f64 {
    10.0
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Asymmetric,
            k: default_k(),
            tau: None,
            r: default_r(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingConfig {
    pub kind: WeightKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Weight value used by the constant kind.
    #[serde(default = "default_constant")]
    pub constant: f64,
}

fn default_lambda() -> f64 {
    0.6
}
fn default_constant() -> f64 {
    1.0
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig {
            kind: WeightKind::Caw,
            lambda: default_lambda(),
            constant: default_constant(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub dataset: Dataset,
    pub n_points: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub lr: f64,
    pub ema_decay: f64,
    pub hidden_dims: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            dataset: Dataset::Ring8,
            n_points: 8192,
            batch_size: 256,
            iterations: 5000,
            eval_every: 250,
            eval_samples: 500,
            lr: 1e-4,
            ema_decay: 0.999,
            hidden_dims: vec![128, 128],
            time_embed_dim: 32,
            activation: Activation::Silu,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || self.batch_size == 0 || self.eval_samples == 0 {
            return Err(Error::Config(
                "n_points, batch_size and eval_samples must be positive".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.iterations > 0 && self.eval_every > self.iterations {
            return Err(Error::Config(format!(
                "eval_every ({}) must be <= iterations ({})",
                self.eval_every, self.iterations
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!(
                "ema_decay must lie in [0, 1], got {}",
                self.ema_decay
            )));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time_embed_dim must be even and >= 2, got {}",
                self.time_embed_dim
            )));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("hidden_dims must be positive".into()));
        }
        Ok(())
    }

    /// Full layer dimension chain: 2 spatial inputs plus the time features
    /// in, 2 noise components out.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(2 + self.time_embed_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(2);
        dims
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Squared norm of the data mean multiplying the reported mean bound.
    pub mean_sq_norm: f64,
    /// Grid size for the continuous-schedule dump.
    pub sde_points: usize,
    pub sde_t_end: f64,
    /// Increment width; defaults to the grid spacing.
    pub sde_dt: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            mean_sq_norm: 1.0,
            sde_points: 1000,
            sde_t_end: 1.0,
            sde_dt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Metric level both runs race toward; when absent it is taken from
    /// the first run's value at `threshold_fraction` of its iterations.
    pub threshold: Option<f64>,
    pub threshold_fraction: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            threshold: None,
            threshold_fraction: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub label: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub schedule: ScheduleSpec,
    pub sampler: SamplerConfig,
    pub weighting: WeightingConfig,
    pub train: TrainParams,
    pub analysis: AnalysisConfig,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            label: "run".into(),
            seed: 0,
            out_dir: PathBuf::from("runs"),
            schedule: ScheduleSpec::default(),
            sampler: SamplerConfig::default(),
            weighting: WeightingConfig::default(),
            train: TrainParams::default(),
            analysis: AnalysisConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column()))
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// A baseline twin: uniform sampling with unit constant weights.
    pub fn as_baseline(&self) -> RunConfig {
        let mut cfg = self.clone();
        cfg.sampler.kind = SamplerKind::Uniform;
        cfg.weighting.kind = WeightKind::Constant;
        cfg.weighting.constant = 1.0;
        cfg.label = format!("{}-baseline", self.label);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.train.validate()?;
        if !(self.sampler.r > 1.0) {
            return Err(Error::Config(format!(
                "sampler.r must be > 1, got {}",
                self.sampler.r
            )));
        }
        if !(self.compare.threshold_fraction > 0.0 && self.compare.threshold_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "compare.threshold_fraction must lie in (0, 1], got {}",
                self.compare.threshold_fraction
            )));
        }
        Ok(())
    }

    /// Canonical serialization hash; names run directories and ties
    /// checkpoints to the configuration that produced them.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Runtime components resolved from a validated config.
pub struct Resolved {
    pub table: ScheduleTable<f64>,
    pub profile: IncrementProfile<f64>,
    pub sampler: TimeStepSampler<f64>,
    pub weights: WeightTable<f64>,
    /// Real-valued threshold the integer `tau` was rounded from (equal to
    /// it when `tau` was given explicitly).
    pub tau_real: f64,
}

pub fn resolve(cfg: &RunConfig) -> Result<Resolved> {
    cfg.validate()?;
    let table: ScheduleTable<f64> = ScheduleTable::build(&cfg.schedule)?;
    let profile = IncrementProfile::build(&table, cfg.sampler.r)?;

    let (tau, tau_real) = match cfg.sampler.tau {
        Some(t) => (t, t as f64),
        None => {
            let real = tau_from_magnitude(&table, cfg.sampler.r)?;
            (real.round() as usize, real)
        }
    };

    let sampler = match cfg.sampler.kind {
        SamplerKind::Uniform => TimeStepSampler::uniform(table.t_total())?,
        SamplerKind::Asymmetric => TimeStepSampler::asymmetric(table.t_total(), cfg.sampler.k, tau)?,
    };

    let weights = match cfg.weighting.kind {
        WeightKind::Constant => WeightTable::constant(table.t_total(), cfg.weighting.constant)?,
        WeightKind::Caw => WeightTable::change_aware(&profile, cfg.weighting.lambda)?,
    };

    Ok(Resolved {
        table,
        profile,
        sampler,
        weights,
        tau_real,
    })
}
