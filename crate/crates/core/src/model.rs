//! The full forecaster: encoder, latent dynamics and decoder sharing one
//! parameter store.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::TrajectorySet;
use crate::dynamics::{ode_solve, ode_solve_values, Dynamics, DynamicsConfig, FieldMode, PairSet, SolverConfig};
use crate::encoder::{sample_initial_state, window_features, Encoded, Encoder, EncoderConfig, GaussianPosterior, TemporalGraph};
use crate::error::{Error, Result};
use crate::numeric::{checkpoint, ParamStore, Tape, Tensor, Var};
use crate::objective::{elbo_loss, Decoder, LossBreakdown};
use crate::seed::{tagged_rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Observation features per node; taken from the data when training.
    pub features: usize,
    pub latent_dim: usize,
    pub encoder: EncoderConfig,
    pub dynamics: DynamicsConfig,
    /// Hidden width of the decoder; 0 for a single affine layer.
    pub decoder_hidden: usize,
    /// Fixed observation noise variance in the reconstruction term.
    pub obs_variance: f64,
    /// Latent time elapsed per observation step.
    pub time_scale: f64,
    pub solver: SolverConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            features: 4,
            latent_dim: 16,
            encoder: EncoderConfig::default(),
            dynamics: DynamicsConfig::default(),
            decoder_hidden: 64,
            obs_variance: 0.01,
            time_scale: 0.1,
            solver: SolverConfig::default(),
        }
    }
}

/// Ablations of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Interaction weights fixed to 1.
    NoW,
    /// No random networks in the encoder.
    NoR,
    /// A single basis function.
    NoO,
    /// One shared interaction function without weights.
    Unified,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoW => "no_w",
            Variant::NoR => "no_r",
            Variant::NoO => "no_o",
            Variant::Unified => "unified",
        }
    }
}

impl ModelConfig {
    /// The configuration of `variant` derived from this one.
    pub fn variant(&self, variant: Variant) -> Self {
        let mut cfg = self.clone();
        match variant {
            Variant::Full => {}
            Variant::NoW => cfg.dynamics.mode = FieldMode::NoW,
            Variant::NoR => cfg.encoder.randnets = 0,
            Variant::NoO => cfg.dynamics.bases = 1,
            Variant::Unified => {
                cfg.dynamics.mode = FieldMode::Unified;
                cfg.dynamics.bases = 1;
            }
        }
        cfg
    }
}

/// One forecasting example: the condition window and its targets.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[T_h * N, d]` window features.
    pub window: Tensor,
    pub graph: TemporalGraph,
    pub pairs: PairSet,
    /// `[N, d]` frame per predicted step.
    pub targets: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub dynamics: Dynamics,
    pub decoder: Decoder,
}

impl Model {
    /// Builds and initializes a model from `seed`.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if !(cfg.obs_variance > 0.0) {
            return Err(Error::Config("obs_variance must be positive".into()));
        }
        if !(cfg.time_scale > 0.0 && cfg.time_scale.is_finite()) {
            return Err(Error::Config("time_scale must be positive".into()));
        }
        let mut rng = tagged_rng(seed, "init", 0);
        let mut store = ParamStore::new();
        let encoder = Encoder::build(&mut store, &cfg.encoder, cfg.features, cfg.latent_dim, &mut rng)?;
        let dynamics = Dynamics::build(&mut store, &cfg.dynamics, cfg.latent_dim, &mut rng)?;
        let decoder = Decoder::build(&mut store, cfg.latent_dim, cfg.decoder_hidden, cfg.features, &mut rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            encoder,
            dynamics,
            decoder,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, &self.store, serde_json::to_value(&self.cfg)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, manifest) = checkpoint::load(dir)?;
        let cfg: ModelConfig = serde_json::from_value(manifest.model)?;
        let mut model = Self::new(&cfg, 0)?;
        checkpoint::restore_into(&mut model.store, &store)?;
        Ok(model)
    }

    /// Builds the example for sample `s` of `set`: frames `0..cond` form the
    /// window, frames `cond..cond + pred` the targets.
    pub fn sample(&self, set: &TrajectorySet, s: usize, cond: usize, pred: usize) -> Result<Sample> {
        if cond == 0 || cond + pred > set.timesteps {
            return Err(Error::Usage(format!(
                "window of {cond} + {pred} frames exceeds {} available",
                set.timesteps
            )));
        }
        if set.features != self.cfg.features {
            return Err(Error::Shape(format!(
                "model expects {} features, data has {}",
                self.cfg.features, set.features
            )));
        }
        let graph = TemporalGraph::from_window(set, s, cond)?;
        let d = &self.cfg.dynamics;
        let pairs = PairSet::from_adjacency(set.nodes, set.adjacency_at(s, cond - 1), d.mask, d.self_loops)?;
        let targets = (cond..cond + pred)
            .map(|t| Tensor::from_rows_flat(set.nodes, set.features, set.frame(s, t)))
            .collect();
        Ok(Sample {
            window: window_features(set, s, cond),
            graph,
            pairs,
            targets,
        })
    }

    pub fn encode(&self, tape: &mut Tape, sample: &Sample, rng: Option<&mut Rng>) -> Result<Encoded> {
        let x = tape.constant(sample.window.clone());
        self.encoder.encode(tape, &self.store, x, &sample.graph, rng)
    }

    /// Latent times of observation offsets `1..=horizon`.
    pub fn eval_times(&self, horizon: usize) -> Vec<f64> {
        (1..=horizon).map(|t| t as f64 * self.cfg.time_scale).collect()
    }

    /// Latent states at observation offsets `1..=horizon` on `tape`.
    pub fn solve(&self, tape: &mut Tape, z0: Var, pairs: &PairSet, horizon: usize) -> Result<Vec<Var>> {
        let times = self.eval_times(horizon);
        ode_solve(
            tape,
            |tp, z, t| self.dynamics.field(tp, &self.store, z, t, pairs),
            z0,
            &self.cfg.solver,
            &times,
        )
    }

    /// Negated ELBO of one example. With `rng`, dropout is active and the
    /// initial state is sampled; without it the posterior mean is used.
    pub fn loss(&self, tape: &mut Tape, sample: &Sample, mut rng: Option<&mut Rng>) -> Result<(Var, LossBreakdown)> {
        let enc = self.encode(tape, sample, rng.as_deref_mut())?;
        let z0 = match rng {
            Some(r) => sample_initial_state(tape, enc.refined, r),
            None => enc.refined.mean,
        };
        let states = self.solve(tape, z0, &sample.pairs, sample.targets.len())?;
        let preds = states
            .into_iter()
            .map(|z| self.decoder.decode(tape, &self.store, z))
            .collect::<Result<Vec<_>>>()?;
        elbo_loss(tape, &sample.targets, &preds, enc.refined, self.cfg.obs_variance)
    }

    /// Refined posterior of the example (deterministic).
    pub fn posterior(&self, sample: &Sample) -> Result<GaussianPosterior> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, sample, None)?;
        Ok(enc.refined.value(&tape))
    }

    /// Latent trajectory from `z0` at offsets `1..=horizon`.
    pub fn latent_trajectory(&self, z0: &Tensor, pairs: &PairSet, horizon: usize) -> Result<Vec<Tensor>> {
        let times = self.eval_times(horizon);
        ode_solve_values(
            |tp, z, t| self.dynamics.field(tp, &self.store, z, t, pairs),
            z0,
            &self.cfg.solver,
            &times,
        )
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.decode_value(&self.store, z)
    }

    /// Deterministic forecast in normalized units for `horizon` steps.
    pub fn predict(&self, sample: &Sample, horizon: usize) -> Result<Vec<Tensor>> {
        let post = self.posterior(sample)?;
        self.latent_trajectory(&post.mean, &sample.pairs, horizon)?
            .iter()
            .map(|z| self.decode(z))
            .collect()
    }
}
