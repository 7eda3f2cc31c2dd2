//! Run configuration documents and the artifacts written from them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{SimConfig, SplitSizes};
use crate::dynamics::{DynamicsConfig, SolverConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::analysis::RobustnessConfig;
use crate::model::ModelConfig;
use crate::objective::Metrics;
use crate::train::{EpochRecord, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Probe settings of the Lipschitz diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticConfig {
    /// Random probes drawn from the latent bounding box.
    pub probes: usize,
    /// Training examples whose initial states span the box.
    pub box_samples: usize,
    /// Relative widening of the box on each side.
    pub margin: f64,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self {
            probes: 2000,
            box_samples: 100,
            margin: 0.1,
        }
    }
}

/// Everything a run needs besides paths. Unknown keys are rejected and
/// missing ones take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub sim: SimConfig,
    pub splits: SplitSizes,
    pub condition_len: usize,
    pub prediction_len: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub robustness: RobustnessConfig,
    pub diagnostic: DiagnosticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            sim: SimConfig::default(),
            splits: SplitSizes::default(),
            condition_len: 12,
            prediction_len: 12,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            robustness: RobustnessConfig::default(),
            diagnostic: DiagnosticConfig::default(),
        }
    }
}

impl RunConfig {
    /// Small spring benchmark that trains in about a minute per model on
    /// one core: five particles, 200/50/50 examples, 12 + 12 frames.
    pub fn desk() -> Self {
        Self {
            sim: SimConfig {
                n_particles: 5,
                n_timesteps: 24,
                ..SimConfig::default()
            },
            splits: SplitSizes {
                train: 200,
                valid: 50,
                test: 50,
            },
            model: ModelConfig {
                latent_dim: 16,
                encoder: EncoderConfig {
                    hidden_dim: 32,
                    randnets: 2,
                    random_hidden: 32,
                    fusion_hidden: 32,
                    head_hidden: 32,
                    dropout: 0.0,
                    ..EncoderConfig::default()
                },
                dynamics: DynamicsConfig {
                    bases: 3,
                    basis_hidden: 32,
                    weight_hidden: 32,
                    aggregator_hidden: 32,
                    ..DynamicsConfig::default()
                },
                decoder_hidden: 32,
                solver: SolverConfig {
                    step: 0.1,
                    ..SolverConfig::default()
                },
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 40,
                batch_size: 4,
                learning_rate: 2e-3,
                ..TrainConfig::default()
            },
            diagnostic: DiagnosticConfig {
                probes: 500,
                box_samples: 50,
                margin: 0.1,
            },
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.condition_len == 0 || self.prediction_len == 0 {
            return Err(Error::Config("condition_len and prediction_len must be positive".into()));
        }
        self.sim.validate()?;
        self.train.validate()?;
        self.robustness.validate()?;
        Ok(())
    }
}

/// `metrics.json` contents.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub tool_version: String,
    pub seed: u64,
    pub variant: String,
    pub prediction_len: usize,
    pub mse: f64,
    pub mae: f64,
    pub copy_last_mse: f64,
    pub copy_last_mae: f64,
    pub best_epoch: Option<usize>,
    pub config: RunConfig,
}

impl MetricsRecord {
    pub fn new(cfg: &RunConfig, variant: &str, prediction_len: usize, model: Metrics, baseline: Metrics) -> Self {
        Self {
            tool_version: crate::VERSION.to_string(),
            seed: cfg.seed,
            variant: variant.to_string(),
            prediction_len,
            mse: model.mse,
            mae: model.mae,
            copy_last_mse: baseline.mse,
            copy_last_mae: baseline.mae,
            best_epoch: None,
            config: cfg.clone(),
        }
    }
}

/// JSON document wrapping `body` with the tool version and resolved config.
pub fn with_echo<T: Serialize>(cfg: &RunConfig, body: &T) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "tool_version": crate::VERSION,
        "seed": cfg.seed,
        "config": cfg,
        "result": body,
    }))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn loss_curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train,valid\n");
    for r in curve {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.valid_mse));
    }
    out
}
