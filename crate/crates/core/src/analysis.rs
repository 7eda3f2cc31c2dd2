//! Perturbation robustness of trained models and Lipschitz constants of
//! their latent fields.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Split};
use crate::dynamics::{FieldMode, PairSet};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::nn::{time_encoding, Fnn};
use crate::numeric::Tensor;
use crate::seed::{tagged_rng, Rng};

/// Shape of the initial-state perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `±noise` per coordinate with random signs.
    Fixed,
    /// Uniform on `[-noise, noise]` per coordinate.
    Uniform,
    /// Normal with standard deviation `noise` per coordinate.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub noise: f64,
    pub horizon: usize,
    pub noise_kind: NoiseKind,
    /// Test examples to average over; 0 means all.
    pub samples: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            noise: 0.01,
            horizon: 36,
            noise_kind: NoiseKind::Fixed,
            samples: 0,
        }
    }
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("robustness noise must be finite and non-negative".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("robustness horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Draws a `[rows, cols]` perturbation.
pub fn perturbation(kind: NoiseKind, noise: f64, rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| match kind {
            NoiseKind::Fixed => {
                if rng.gen::<bool>() {
                    noise
                } else {
                    -noise
                }
            }
            NoiseKind::Uniform => rng.gen_range(-1.0..=1.0) * noise,
            NoiseKind::Gaussian => {
                let g: f64 = StandardNormal.sample(rng);
                noise * g
            }
        })
        .collect();
    Tensor::from_rows_flat(rows, cols, &data)
}

/// Clean and perturbed latent states at `times` (index 0 is the initial
/// state at time 0).
#[derive(Clone, Debug)]
pub struct LatentTrajectory {
    pub times: Vec<f64>,
    pub clean: Vec<Tensor>,
    pub perturbed: Vec<Tensor>,
    pub eps: Tensor,
    pub pairs: PairSet,
}

impl LatentTrajectory {
    /// Solves `model` from `z0` and `z0 + eps` over `horizon` observation steps.
    pub fn solve(model: &Model, z0: &Tensor, eps: &Tensor, pairs: &PairSet, horizon: usize) -> Result<Self> {
        let z1 = z0.zip_map(eps, |a, b| a + b);
        let mut clean = vec![z0.clone()];
        clean.extend(model.latent_trajectory(z0, pairs, horizon)?);
        let mut perturbed = vec![z1.clone()];
        perturbed.extend(model.latent_trajectory(&z1, pairs, horizon)?);
        let mut times = vec![0.0];
        times.extend(model.eval_times(horizon));
        Ok(Self {
            times,
            clean,
            perturbed,
            eps: eps.clone(),
            pairs: pairs.clone(),
        })
    }

    /// `mean |z̃ - z|` per recorded step; the first entry is taken from the
    /// perturbation itself so it is free of rounding.
    pub fn latent_error(&self) -> Vec<f64> {
        let mut out = vec![mean_abs_diff(self.eps.data(), &vec![0.0; self.eps.len()])];
        out.extend(
            self.clean
                .iter()
                .zip(&self.perturbed)
                .skip(1)
                .map(|(a, b)| mean_abs_diff(a.data(), b.data())),
        );
        out
    }
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

/// Error series of one model, averaged over examples. Index 0 is the
/// initial perturbation; the cumulative sums cover steps `1..=horizon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub model: String,
    pub latent: Vec<f64>,
    pub latent_cumulative: f64,
    /// Mean absolute difference of the decoded forecasts in data units.
    pub observation: Vec<f64>,
    pub observation_cumulative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub config: RobustnessConfig,
    pub samples: usize,
    pub series: Vec<ErrorSeries>,
}

impl RobustnessReport {
    /// CSV with one row per step and latent, latent-cumulative and
    /// observation columns per model.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step");
        for s in &self.series {
            out.push_str(&format!(",{0}_latent,{0}_latent_cumulative,{0}_observation", s.model));
        }
        out.push('\n');
        let steps = self.series.first().map_or(0, |s| s.latent.len());
        let mut cum = vec![0.0; self.series.len()];
        for t in 0..steps {
            out.push_str(&t.to_string());
            for (k, s) in self.series.iter().enumerate() {
                if t > 0 {
                    cum[k] += s.latent[t];
                }
                out.push_str(&format!(",{},{},{}", s.latent[t], cum[k], s.observation[t]));
            }
            out.push('\n');
        }
        out
    }
}

/// Perturbs the posterior-mean initial state of each test example with one
/// shared draw and measures how far clean and perturbed solutions of every
/// model drift apart. Returns the trajectories as well, indexed
/// `[model][example]`.
pub fn robustness_experiment(
    models: &[(&str, &Model)],
    ds: &Dataset,
    cfg: &RobustnessConfig,
    seed: u64,
) -> Result<(RobustnessReport, Vec<Vec<LatentTrajectory>>)> {
    cfg.validate()?;
    let Some((_, first)) = models.first() else {
        return Err(Error::Usage("robustness experiment needs at least one model".into()));
    };
    let d = first.cfg.latent_dim;
    if models.iter().any(|(_, m)| m.cfg.latent_dim != d) {
        return Err(Error::Usage("compared models must share the latent dimension".into()));
    }
    let (set, _) = ds.split(Split::Test);
    let count = match cfg.samples {
        0 => set.samples,
        k => k.min(set.samples),
    };
    if count == 0 {
        return Err(Error::Usage("test split is empty".into()));
    }
    let cond = ds.condition_len;
    let eps: Vec<Tensor> = (0..count)
        .map(|s| perturbation(cfg.noise_kind, cfg.noise, set.nodes, d, &mut tagged_rng(seed, "robustness", s as u64)))
        .collect();
    let steps = cfg.horizon + 1;
    let mut series = Vec::with_capacity(models.len());
    let mut trajectories = Vec::with_capacity(models.len());
    for (name, model) in models {
        let mut latent = vec![0.0; steps];
        let mut observation = vec![0.0; steps];
        let mut trajs = Vec::with_capacity(count);
        for (s, e) in eps.iter().enumerate() {
            let sample = model.sample(set, s, cond, 0)?;
            let z0 = model.posterior(&sample)?.mean;
            let traj = LatentTrajectory::solve(model, &z0, e, &sample.pairs, cfg.horizon)?;
            for (t, v) in traj.latent_error().into_iter().enumerate() {
                latent[t] += v / count as f64;
            }
            for t in 0..steps {
                let a = model.decode(&traj.clean[t])?;
                let b = model.decode(&traj.perturbed[t])?;
                let f = set.features;
                let diff: f64 = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .enumerate()
                    .map(|(i, (x, y))| ds.normalizer.std[i % f] * (x - y).abs())
                    .sum();
                observation[t] += diff / a.len() as f64 / count as f64;
            }
            trajs.push(traj);
        }
        series.push(ErrorSeries {
            model: name.to_string(),
            latent_cumulative: latent[1..].iter().sum(),
            observation_cumulative: observation[1..].iter().sum(),
            latent,
            observation,
        });
        trajectories.push(trajs);
    }
    Ok((
        RobustnessReport {
            config: cfg.clone(),
            samples: count,
            series,
        },
        trajectories,
    ))
}

/// Interaction inputs `(z_i, z_j, t)` at which bounds are probed.
#[derive(Clone, Debug, Default)]
pub struct Probes {
    pub zi: Vec<Vec<f64>>,
    pub zj: Vec<Vec<f64>>,
    pub t: Vec<f64>,
}

impl Probes {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, zi: &[f64], zj: &[f64], t: f64) {
        self.zi.push(zi.to_vec());
        self.zj.push(zj.to_vec());
        self.t.push(t);
    }

    /// `count` uniform draws from `[lo, hi]` per coordinate with times in
    /// `[0, t_max]`.
    pub fn uniform_box(lo: &[f64], hi: &[f64], t_max: f64, count: usize, rng: &mut Rng) -> Self {
        let mut p = Self::default();
        let draw = |rng: &mut Rng| -> Vec<f64> { lo.iter().zip(hi).map(|(&a, &b)| a + (b - a) * rng.gen::<f64>()).collect() };
        for _ in 0..count {
            let zi = draw(rng);
            let zj = draw(rng);
            let t = t_max * rng.gen::<f64>();
            p.push(&zi, &zj, t);
        }
        p
    }

    /// Every interacting pair of every clean and perturbed state.
    pub fn from_trajectory(traj: &LatentTrajectory) -> Self {
        let mut p = Self::default();
        for (k, &t) in traj.times.iter().enumerate() {
            for z in [&traj.clean[k], &traj.perturbed[k]] {
                for (&i, &j) in traj.pairs.i.iter().zip(traj.pairs.j.iter()) {
                    p.push(z.row_slice(i), z.row_slice(j), t);
                }
            }
        }
        p
    }

    pub fn extend(&mut self, other: &Probes) {
        self.zi.extend(other.zi.iter().cloned());
        self.zj.extend(other.zj.iter().cloned());
        self.t.extend(other.t.iter().copied());
    }
}

/// Probes drawn from the bounding box of the posterior-mean initial states
/// of `samples` training examples, widened by `margin` times its extent.
pub fn latent_probes(model: &Model, ds: &Dataset, samples: usize, count: usize, margin: f64, rng: &mut Rng) -> Result<Probes> {
    let d = model.cfg.latent_dim;
    let (set, _) = ds.split(Split::Train);
    let n = samples.max(1).min(set.samples);
    if n == 0 {
        return Err(Error::Usage("training split is empty".into()));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for s in 0..n {
        let sample = model.sample(set, s, ds.condition_len, 0)?;
        let z = model.posterior(&sample)?.mean;
        for r in 0..z.rows() {
            for (c, &v) in z.row_slice(r).iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
    }
    for c in 0..d {
        let w = (hi[c] - lo[c]) * margin;
        lo[c] -= w;
        hi[c] += w;
    }
    let t_max = model.eval_times(ds.prediction_len).last().copied().unwrap_or(0.0);
    Ok(Probes::uniform_box(&lo, &hi, t_max, count, rng))
}

/// Constants of one basis term `w_k ⊙ f_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisConstants {
    /// Lipschitz bound of `f_k`.
    pub l_r: f64,
    /// Lipschitz bound of the receiver and sender weight nets.
    pub l_w_receiver: f64,
    pub l_w_sender: f64,
    /// Lipschitz bound of the pair weight `w̄_i ⊙ ŵ_j` in `(z_i, z_j)`.
    pub l_w: f64,
    /// Largest `|f_k|` entry over the probes.
    pub c_r: f64,
    /// Largest weight entry over the probes.
    pub c_w: f64,
    pub l_k: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub mode: FieldMode,
    pub nodes: usize,
    pub latent_dim: usize,
    pub probes: usize,
    /// Lipschitz bound of the aggregator.
    pub l_a: f64,
    pub bases: Vec<BasisConstants>,
    pub sum_l_k: f64,
    pub sum_alpha: f64,
    /// Lipschitz bound of the reference model's shared interaction function.
    pub reference_l_r: Option<f64>,
    /// Whether `Σ L^k ≤ L_r` against the reference.
    pub verdict: Option<bool>,
    pub note: Option<String>,
}

fn rows_with_time(rows: &[Vec<f64>], t: &[f64], d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * d);
    for (r, &tt) in rows.iter().zip(t) {
        let te = time_encoding(tt, d)?;
        data.extend(r.iter().zip(te.data()).map(|(a, b)| a + b));
    }
    Ok(Tensor::from_rows_flat(rows.len(), d, &data))
}

fn concat_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Tensor {
    let d = a.first().map_or(0, Vec::len);
    let data: Vec<f64> = a.iter().zip(b).flat_map(|(x, y)| x.iter().chain(y).copied()).collect();
    Tensor::from_rows_flat(a.len(), 2 * d, &data)
}

fn lipschitz(net: &Fnn, model: &Model) -> Result<f64> {
    net.lipschitz_bound(&model.store)
}

/// Spectral-norm Lipschitz bounds of the field's networks, probe-based
/// output bounds, and the growth constants assembled from them. The verdict
/// compares against `reference`, which must be a unified-interaction model.
pub fn lipschitz_diagnostic(
    model: &Model,
    nodes: usize,
    probes: &Probes,
    reference: Option<&Model>,
) -> Result<DiagnosticReport> {
    let dy = &model.dynamics;
    let d = dy.latent_dim;
    if probes.is_empty() {
        return Err(Error::Usage("lipschitz diagnostic needs at least one probe".into()));
    }
    if probes.zi.iter().chain(&probes.zj).any(|r| r.len() != d) {
        return Err(Error::Shape(format!("probe rows must have {d} entries")));
    }
    let l_a = lipschitz(&dy.aggregator, model)?;
    let pairs_in = concat_rows(&probes.zi, &probes.zj);
    let (recv_in, send_in) = if dy.uses_weights() {
        (
            Some(rows_with_time(&probes.zi, &probes.t, d)?),
            Some(rows_with_time(&probes.zj, &probes.t, d)?),
        )
    } else {
        (None, None)
    };
    let sqrt_d = (d as f64).sqrt();
    let n = nodes as f64;
    let mut bases = Vec::with_capacity(dy.bases.len());
    for (k, f) in dy.bases.iter().enumerate() {
        let l_r = lipschitz(f, model)?;
        let c_r = f.apply(&model.store, &pairs_in, None)?.max_abs();
        let (l_w_receiver, l_w_sender, c_w) = match (&recv_in, &send_in) {
            (Some(ri), Some(si)) => {
                let wr = dy.response[k].apply(&model.store, ri, None)?;
                let ws = dy.activation[k].apply(&model.store, si, None)?;
                let c_w = wr.zip_map(&ws, |a, b| a * b).max_abs();
                (
                    lipschitz(&dy.response[k], model)?,
                    lipschitz(&dy.activation[k], model)?,
                    c_w,
                )
            }
            _ => (0.0, 0.0, 1.0),
        };
        // Both factors lie in (0, 1), so the product is Lipschitz in the
        // concatenated input with the Euclidean norm of the two constants.
        let l_w = l_w_receiver.hypot(l_w_sender);
        let l_k = d as f64 * c_r * l_w + sqrt_d * c_w * l_r;
        bases.push(BasisConstants {
            l_r,
            l_w_receiver,
            l_w_sender,
            l_w,
            c_r,
            c_w,
            l_k,
            alpha: 2.0 * n * l_a * l_k,
        });
    }
    let sum_l_k = bases.iter().map(|b| b.l_k).sum();
    let sum_alpha = bases.iter().map(|b| b.alpha).sum();
    let (reference_l_r, verdict, note) = match reference {
        None => (None, None, Some("no unified reference model supplied; verdict omitted".to_string())),
        Some(r) if r.dynamics.mode != FieldMode::Unified => {
            return Err(Error::Usage("reference model must use the unified interaction field".into()))
        }
        Some(r) => {
            let l_r = lipschitz(&r.dynamics.bases[0], r)?;
            (Some(l_r), Some(sum_l_k <= l_r), None)
        }
    };
    Ok(DiagnosticReport {
        mode: dy.mode,
        nodes,
        latent_dim: d,
        probes: probes.len(),
        l_a,
        bases,
        sum_l_k,
        sum_alpha,
        reference_l_r,
        verdict,
        note,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCheck {
    pub passed: bool,
    pub steps: usize,
    pub violations: usize,
    /// Smallest `bound - dV/dt` over the checked steps.
    pub worst_margin: f64,
}

/// Absolute slack allowed on the derivative bound.
pub const LYAPUNOV_SLACK: f64 = 1e-6;

/// Checks `dV/dt = <e, F(z̃) - F(z)> ≤ |e|² √N Σα_k` at every recorded step
/// of `traj`, with `V = |e|²/2`.
pub fn empirical_lyapunov_check(model: &Model, traj: &LatentTrajectory, report: &DiagnosticReport) -> Result<LyapunovCheck> {
    let n = traj.pairs.nodes as f64;
    let rate = n.sqrt() * report.sum_alpha;
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    for (k, &t) in traj.times.iter().enumerate() {
        let (z, zt) = (&traj.clean[k], &traj.perturbed[k]);
        let f = model.dynamics.field_value(&model.store, z, t, &traj.pairs)?;
        let ft = model.dynamics.field_value(&model.store, zt, t, &traj.pairs)?;
        let mut dv = 0.0;
        let mut e2 = 0.0;
        for (((a, b), fa), fb) in z.data().iter().zip(zt.data()).zip(f.data()).zip(ft.data()) {
            let e = b - a;
            dv += e * (fb - fa);
            e2 += e * e;
        }
        let margin = e2 * rate - dv;
        worst = worst.min(margin);
        if margin < -LYAPUNOV_SLACK {
            violations += 1;
        }
    }
    Ok(LyapunovCheck {
        passed: violations == 0,
        steps: traj.times.len(),
        violations,
        worst_margin: worst,
    })
}
