//! Dataset directory format: `meta.json` plus one little-endian `f64` blob
//! per split for trajectories and another for adjacency.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adjacency, Dataset, SimConfig, TrajectorySet, SPLITS};
use crate::error::{Error, Result};
use crate::numeric::checkpoint::{read_f64_le, write_f64_le};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const META_FILE: &str = "meta.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitMeta {
    name: String,
    /// `[S, T, N, d]`.
    traj_shape: [usize; 4],
    /// `[S, N, N]` or `[S, T, N, N]`.
    adj_shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    tool_version: String,
    condition_len: usize,
    prediction_len: usize,
    seed: Option<u64>,
    sim: Option<SimConfig>,
    splits: Vec<SplitMeta>,
}

/// Writes the raw (unnormalized) splits of `ds` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut splits = Vec::new();
    for (name, set) in SPLITS.iter().zip(&ds.raw) {
        write_f64_le(&dir.join(format!("{name}_traj.f64")), set.data())?;
        let (adj, adj_shape) = match set.adjacency() {
            Adjacency::Static(a) => (a, vec![set.samples, set.nodes, set.nodes]),
            Adjacency::TimeVarying(a) => (
                a,
                vec![set.samples, set.timesteps, set.nodes, set.nodes],
            ),
        };
        write_f64_le(&dir.join(format!("{name}_adj.f64")), adj)?;
        splits.push(SplitMeta {
            name: name.to_string(),
            traj_shape: [set.samples, set.timesteps, set.nodes, set.features],
            adj_shape,
        });
    }
    let meta = Meta {
        format_version: DATASET_FORMAT_VERSION,
        tool_version: crate::VERSION.to_string(),
        condition_len: ds.condition_len,
        prediction_len: ds.prediction_len,
        seed: ds.sim.as_ref().map(|s| s.seed),
        sim: ds.sim.clone(),
        splits,
    };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn read_split(dir: &Path, m: &SplitMeta) -> Result<TrajectorySet> {
    let [s, t, n, d] = m.traj_shape;
    let data = read_f64_le(&dir.join(format!("{}_traj.f64", m.name)))?;
    if data.len() != s * t * n * d {
        return Err(Error::Format(format!(
            "{}_traj.f64 holds {} values but meta.json declares {:?}",
            m.name,
            data.len(),
            m.traj_shape
        )));
    }
    let adj = read_f64_le(&dir.join(format!("{}_adj.f64", m.name)))?;
    let adjacency = match m.adj_shape.as_slice() {
        [s2, n1, n2] if *s2 == s && *n1 == n && *n2 == n => Adjacency::Static(adj),
        [s2, t2, n1, n2] if *s2 == s && *t2 == t && *n1 == n && *n2 == n => {
            Adjacency::TimeVarying(adj)
        }
        other => {
            return Err(Error::Format(format!(
                "{} adjacency shape {other:?} does not match trajectories {:?}",
                m.name, m.traj_shape
            )))
        }
    };
    TrajectorySet::new(s, t, n, d, data, adjacency).map_err(|e| match e {
        Error::Shape(msg) => Error::Format(format!("{}: {msg}", m.name)),
        other => other,
    })
}

/// Reads a dataset directory and normalizes it with training statistics.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(META_FILE))?;
    let meta: Meta = serde_json::from_str(&text)?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} is not supported",
            meta.format_version
        )));
    }
    let mut sets = Vec::with_capacity(3);
    for name in SPLITS {
        let m = meta
            .splits
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Format(format!("meta.json has no {name} split")))?;
        sets.push(read_split(dir, m)?);
    }
    let raw: [TrajectorySet; 3] = sets.try_into().expect("three splits");
    Dataset::from_raw(meta.condition_len, meta.prediction_len, meta.sim, raw)
}
