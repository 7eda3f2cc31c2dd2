//! Particle-system datasets and their on-disk format.

mod io;
mod sim;

pub use io::{load_dataset, write_dataset, DATASET_FORMAT_VERSION};
pub use sim::{
    simulate, simulate_charged, simulate_springs, Interaction, Particles, SimConfig, System,
    FEATURES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::sub_seed;

/// Interaction weights per sample, either fixed or one matrix per frame.
#[derive(Clone, Debug, PartialEq)]
pub enum Adjacency {
    /// `[S, N, N]`.
    Static(Vec<f64>),
    /// `[S, T, N, N]`.
    TimeVarying(Vec<f64>),
}

/// A batch of dynamic-graph trajectories, `[S, T, N, d]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    pub samples: usize,
    pub timesteps: usize,
    pub nodes: usize,
    pub features: usize,
    data: Vec<f64>,
    adjacency: Adjacency,
}

impl TrajectorySet {
    pub fn new(
        samples: usize,
        timesteps: usize,
        nodes: usize,
        features: usize,
        data: Vec<f64>,
        adjacency: Adjacency,
    ) -> Result<Self> {
        if data.len() != samples * timesteps * nodes * features {
            return Err(Error::Shape(format!(
                "trajectory blob has {} values, expected [{samples}, {timesteps}, {nodes}, {features}]",
                data.len()
            )));
        }
        let (adj, frames) = match &adjacency {
            Adjacency::Static(a) => (a, samples),
            Adjacency::TimeVarying(a) => (a, samples * timesteps),
        };
        if adj.len() != frames * nodes * nodes {
            return Err(Error::Shape(format!(
                "adjacency blob has {} values, expected {frames} matrices of {nodes}x{nodes}",
                adj.len()
            )));
        }
        if let Some(p) = data.iter().chain(adj).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dataset entry {p}")));
        }
        for (m, a) in adj.chunks(nodes * nodes).enumerate() {
            for i in 0..nodes {
                if a[i * nodes + i] != 0.0 {
                    return Err(Error::Format(format!("adjacency {m} has a self loop at {i}")));
                }
                for j in (i + 1)..nodes {
                    if a[i * nodes + j] != a[j * nodes + i] {
                        return Err(Error::Format(format!("adjacency {m} is not symmetric")));
                    }
                }
            }
        }
        Ok(Self {
            samples,
            timesteps,
            nodes,
            features,
            data,
            adjacency,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    /// Node features of sample `s` at frame `t`, `[N, d]` row-major.
    pub fn frame(&self, s: usize, t: usize) -> &[f64] {
        let len = self.nodes * self.features;
        let start = (s * self.timesteps + t) * len;
        &self.data[start..start + len]
    }

    /// Adjacency of sample `s` at frame `t`, `[N, N]` row-major.
    pub fn adjacency_at(&self, s: usize, t: usize) -> &[f64] {
        let nn = self.nodes * self.nodes;
        let m = match &self.adjacency {
            Adjacency::Static(_) => s,
            Adjacency::TimeVarying(_) => s * self.timesteps + t,
        };
        let a = match &self.adjacency {
            Adjacency::Static(a) | Adjacency::TimeVarying(a) => a,
        };
        &a[m * nn..(m + 1) * nn]
    }

    fn map_features(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let d = self.features;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % d, v))
            .collect();
        Self {
            data,
            ..self.clone()
        }
    }
}

/// Per-dimension affine transform fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub const STD_FLOOR: f64 = 1e-8;

    pub fn fit(set: &TrajectorySet) -> Self {
        let d = set.features;
        let count = (set.data.len() / d.max(1)) as f64;
        let mut mean = vec![0.0; d];
        for row in set.data.chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for row in set.data.chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| (s / count).sqrt().max(Self::STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn normalize_value(&self, dim: usize, v: f64) -> f64 {
        (v - self.mean[dim]) / self.std[dim]
    }

    pub fn denormalize_value(&self, dim: usize, v: f64) -> f64 {
        v * self.std[dim] + self.mean[dim]
    }

    pub fn normalize(&self, set: &TrajectorySet) -> TrajectorySet {
        set.map_features(|d, v| self.normalize_value(d, v))
    }

    pub fn denormalize(&self, set: &TrajectorySet) -> TrajectorySet {
        set.map_features(|d, v| self.denormalize_value(d, v))
    }
}

/// Train, validation and test trajectories plus the forecasting window.
///
/// `raw` holds the splits exactly as simulated or read from disk; `train`,
/// `valid` and `test` are normalized with statistics of the raw training
/// split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub condition_len: usize,
    pub prediction_len: usize,
    pub sim: Option<SimConfig>,
    pub normalizer: Normalizer,
    pub train: TrajectorySet,
    pub valid: TrajectorySet,
    pub test: TrajectorySet,
    pub raw: [TrajectorySet; 3],
}

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

impl Dataset {
    /// Wraps raw splits, validating the window and fitting the normalizer.
    pub fn from_raw(
        condition_len: usize,
        prediction_len: usize,
        sim: Option<SimConfig>,
        raw: [TrajectorySet; 3],
    ) -> Result<Self> {
        if condition_len < 1 || prediction_len < 1 {
            return Err(Error::Usage(
                "condition and prediction lengths must be positive".into(),
            ));
        }
        let first = &raw[0];
        for (name, set) in SPLITS.iter().zip(&raw) {
            if set.timesteps < condition_len + prediction_len {
                return Err(Error::Usage(format!(
                    "{name} split has {} frames, fewer than condition {condition_len} + prediction {prediction_len}",
                    set.timesteps
                )));
            }
            if set.nodes != first.nodes || set.features != first.features {
                return Err(Error::Shape(format!("{name} split disagrees in node/feature shape")));
            }
        }
        if first.samples == 0 {
            return Err(Error::Usage("training split is empty".into()));
        }
        let normalizer = Normalizer::fit(first);
        let [a, b, c] = &raw;
        Ok(Self {
            condition_len,
            prediction_len,
            sim,
            train: normalizer.normalize(a),
            valid: normalizer.normalize(b),
            test: normalizer.normalize(c),
            normalizer,
            raw,
        })
    }

    /// Normalized and raw trajectories of `split`.
    pub fn split(&self, split: Split) -> (&TrajectorySet, &TrajectorySet) {
        match split {
            Split::Train => (&self.train, &self.raw[0]),
            Split::Valid => (&self.valid, &self.raw[1]),
            Split::Test => (&self.test, &self.raw[2]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Sample counts for the three splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 1000,
            valid: 200,
            test: 200,
        }
    }
}

/// Simulates all three splits, each from its own seed stream.
pub fn generate_dataset(
    cfg: &SimConfig,
    sizes: SplitSizes,
    condition_len: usize,
    prediction_len: usize,
) -> Result<Dataset> {
    let counts = [sizes.train, sizes.valid, sizes.test];
    let mut sets = Vec::with_capacity(3);
    for (i, (&name, &n)) in SPLITS.iter().zip(&counts).enumerate() {
        let split_cfg = SimConfig {
            n_samples: n,
            seed: sub_seed(cfg.seed, name, i as u64),
            ..cfg.clone()
        };
        sets.push(simulate(&split_cfg)?);
    }
    let raw: [TrajectorySet; 3] = sets.try_into().expect("three splits");
    Dataset::from_raw(condition_len, prediction_len, Some(cfg.clone()), raw)
}
