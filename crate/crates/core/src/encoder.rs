//! Spatio-temporal attention encoder producing a per-node Gaussian
//! posterior over the initial latent state.
//!
//! The condition window is unrolled into a temporal graph whose vertices are
//! node-time instances. Attention layers run over that graph, a gated pooling
//! step collapses each node's instances into one vector, and two heads map it
//! to a mean and a standard deviation. Frozen random networks produce extra
//! candidate posteriors that a trainable fusion net mixes into the primary
//! one.

use std::rc::Rc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::nn::{dropout, init_weight};
use crate::numeric::{time_encoding, Activation, Fnn, FnnSpec, ParamId, ParamStore, Segments, Tape, Tensor, Var};
use crate::seed::Rng;

/// Lower bound on every posterior standard deviation.
pub const SIGMA_MIN: f64 = 1e-4;

/// One directed edge between node-time instances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Graph over the `N * T_h` instances of a condition window. Instance
/// `t * N + i` is node `i` at window step `t` (0-based).
#[derive(Clone, Debug)]
pub struct TemporalGraph {
    pub nodes: usize,
    pub steps: usize,
    pub edges: Vec<Edge>,
    src: Rc<[usize]>,
    dst_segments: Rc<Segments>,
    dst: Rc<[usize]>,
    node_of: Rc<Segments>,
    node_index: Rc<[usize]>,
}

impl TemporalGraph {
    /// `adjacency[t]` is the `[N, N]` matrix of step `t`. Every nonzero
    /// `A^t_ij` yields a spatial edge `j^t → i^t` with that weight; each node
    /// also gets a unit-weight edge `i^t → i^(t+1)`.
    pub fn build(nodes: usize, adjacency: &[&[f64]]) -> Result<Self> {
        let steps = adjacency.len();
        if steps == 0 {
            return Err(Error::Usage("condition window must have at least one step".into()));
        }
        let mut edges = Vec::new();
        for (t, a) in adjacency.iter().enumerate() {
            if a.len() != nodes * nodes {
                return Err(Error::Shape(format!(
                    "adjacency at step {t} has {} entries, expected {}",
                    a.len(),
                    nodes * nodes
                )));
            }
            for i in 0..nodes {
                for j in 0..nodes {
                    let w = a[i * nodes + j];
                    if i != j && w != 0.0 {
                        edges.push(Edge {
                            src: t * nodes + j,
                            dst: t * nodes + i,
                            weight: w,
                        });
                    }
                }
            }
        }
        for t in 0..steps.saturating_sub(1) {
            for i in 0..nodes {
                edges.push(Edge {
                    src: t * nodes + i,
                    dst: (t + 1) * nodes + i,
                    weight: 1.0,
                });
            }
        }
        let instances = nodes * steps;
        let src: Rc<[usize]> = edges.iter().map(|e| e.src).collect();
        let dst: Rc<[usize]> = edges.iter().map(|e| e.dst).collect();
        let dst_segments = Rc::new(Segments::new(dst.to_vec(), instances));
        let node_index: Rc<[usize]> = (0..instances).map(|m| m % nodes).collect();
        let node_of = Rc::new(Segments::new(node_index.to_vec(), nodes));
        Ok(Self {
            nodes,
            steps,
            edges,
            src,
            dst_segments,
            dst,
            node_of,
            node_index,
        })
    }

    /// Graph of the first `steps` frames of sample `s`.
    pub fn from_window(set: &crate::datagen::TrajectorySet, s: usize, steps: usize) -> Result<Self> {
        let adj: Vec<&[f64]> = (0..steps).map(|t| set.adjacency_at(s, t)).collect();
        Self::build(set.nodes, &adj)
    }

    pub fn instances(&self) -> usize {
        self.nodes * self.steps
    }

    /// Time of the source minus time of the destination for each edge.
    fn edge_offsets(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges
            .iter()
            .map(move |e| (e.src / self.nodes) as f64 - (e.dst / self.nodes) as f64)
    }
}

/// Node features of the condition window of sample `s`, shaped
/// `[T_h * N, d]` in instance order.
pub fn window_features(set: &crate::datagen::TrajectorySet, s: usize, steps: usize) -> Tensor {
    let mut data = Vec::with_capacity(steps * set.nodes * set.features);
    for t in 0..steps {
        data.extend_from_slice(set.frame(s, t));
    }
    Tensor::from_raw(vec![steps * set.nodes, set.features], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    /// Number of frozen random networks.
    pub randnets: usize,
    pub random_hidden: usize,
    pub fusion_hidden: usize,
    pub head_hidden: usize,
    /// Dropout on attention outputs during training.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            layers: 2,
            randnets: 4,
            random_hidden: 64,
            fusion_hidden: 64,
            head_hidden: 64,
            dropout: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
struct AttentionLayer {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
}

/// Handles to the encoder's blocks inside a shared [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub input: Fnn,
    layers: Vec<AttentionLayer>,
    pub w_a: ParamId,
    pub mean_head: Fnn,
    pub std_head: Fnn,
    pub randnets: Vec<Fnn>,
    pub fusion: Fnn,
}

/// Diagonal Gaussian over per-node latent states.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Tensor,
    pub std: Tensor,
}

/// Tape nodes of a posterior.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorVars {
    pub mean: Var,
    pub std: Var,
}

impl PosteriorVars {
    pub fn value(&self, tape: &Tape) -> GaussianPosterior {
        GaussianPosterior {
            mean: tape.value(self.mean).clone(),
            std: tape.value(self.std).clone(),
        }
    }
}

/// Everything the encoder computes for one window.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub u: Var,
    pub primary: PosteriorVars,
    pub refined: PosteriorVars,
}

impl Encoder {
    pub fn build(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        features: usize,
        latent_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = cfg.hidden_dim;
        if cfg.layers == 0 {
            return Err(Error::Config("encoder needs at least one attention layer".into()));
        }
        if d == 0 || d % 2 != 0 {
            return Err(Error::Config(format!("encoder hidden_dim must be even, got {d}")));
        }
        let input = Fnn::build(
            store,
            "encoder.input",
            &FnnSpec::uniform(&[features, d], Activation::Identity),
            true,
            rng,
        )?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut mat = |name: &str| {
                store.add(
                    format!("encoder.attention{l}.{name}"),
                    init_weight(rng, d, d),
                    true,
                    None,
                )
            };
            layers.push(AttentionLayer {
                w_q: mat("w_q"),
                w_k: mat("w_k"),
                w_v: mat("w_v"),
            });
        }
        let w_a = store.add("encoder.w_a", init_weight(rng, d, d), true, None);
        let head = FnnSpec::new(&[d, cfg.head_hidden, latent_dim], Activation::Relu, Activation::Identity);
        let mean_head = Fnn::build(store, "encoder.mean_head", &head, true, rng)?;
        let std_head = Fnn::build(store, "encoder.std_head", &head, true, rng)?;
        let random = FnnSpec::new(&[d, cfg.random_hidden, d], Activation::Relu, Activation::Identity);
        let randnets = (0..cfg.randnets)
            .map(|k| Fnn::build(store, &format!("encoder.randnet{k}"), &random, false, rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = Fnn::build(
            store,
            "encoder.fusion",
            &FnnSpec::new(&[2 * d, cfg.fusion_hidden, 1], Activation::Relu, Activation::Identity),
            true,
            rng,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            input,
            layers,
            w_a,
            mean_head,
            std_head,
            randnets,
            fusion,
        })
    }

    pub fn attention_params(&self, layer: usize) -> (ParamId, ParamId, ParamId) {
        let l = &self.layers[layer];
        (l.w_q, l.w_k, l.w_v)
    }

    /// One attention layer: for each instance, messages from in-neighbours
    /// `ĥ_j = h_j + TE(t_j - t_i)` are scored by `A/√d · (ĥ_j W_K)·(h_i W_Q)`
    /// without normalization, and `h_i + relu(Σ α ĥ_j W_V)` is returned.
    pub fn attention_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        tg: &TemporalGraph,
        layer: usize,
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let d = self.cfg.hidden_dim;
        let (rows, cols) = tape.shape(h);
        if rows != tg.instances() || cols != d {
            return Err(Error::Shape(format!(
                "attention input [{rows}, {cols}], expected [{}, {d}]",
                tg.instances()
            )));
        }
        if tg.edges.is_empty() {
            return Ok(h);
        }
        let l = &self.layers[layer];
        let (wq, wk, wv) = (tape.param(store, l.w_q), tape.param(store, l.w_k), tape.param(store, l.w_v));
        let mut te = Vec::with_capacity(tg.edges.len() * d);
        for dt in tg.edge_offsets() {
            te.extend_from_slice(time_encoding(dt, d)?.data());
        }
        let te = tape.constant(Tensor::from_raw(vec![tg.edges.len(), d], te));
        let h_src = tape.gather_rows(h, tg.src.clone());
        let h_src = tape.add(h_src, te);
        let keys = tape.matmul(h_src, wk);
        let queries = tape.matmul(h, wq);
        let queries = tape.gather_rows(queries, tg.dst.clone());
        let kq = tape.mul(keys, queries);
        let scores = tape.row_sum(kq);
        let scale = 1.0 / (d as f64).sqrt();
        let weights: Vec<f64> = tg.edges.iter().map(|e| e.weight * scale).collect();
        let weights = tape.constant(Tensor::from_raw(vec![tg.edges.len(), 1], weights));
        let alpha = tape.mul(scores, weights);
        let values = tape.matmul(h_src, wv);
        let messages = tape.mul_col(values, alpha);
        let agg = tape.segment_sum(messages, tg.dst_segments.clone());
        let mut update = tape.relu(agg);
        if let Some(r) = rng {
            if self.cfg.dropout > 0.0 {
                update = dropout(tape, update, self.cfg.dropout, r);
            }
        }
        Ok(tape.add(h, update))
    }

    /// Gated temporal pooling to one `[N, d_hid]` row per node. With
    /// `ĥ = h + TE(t)` (1-based `t`) and `q_i = mean_t(ĥ_i) W_a`, each
    /// instance is scaled by the scalar gate `tanh(q_i · ĥ)` before a relu
    /// and a mean over the window.
    pub fn sequence_representation(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        tg: &TemporalGraph,
    ) -> Result<Var> {
        let d = self.cfg.hidden_dim;
        if tg.steps == 0 {
            return Err(Error::Usage("empty condition window".into()));
        }
        let mut te = Vec::with_capacity(tg.instances() * d);
        for t in 0..tg.steps {
            let row = time_encoding((t + 1) as f64, d)?;
            for _ in 0..tg.nodes {
                te.extend_from_slice(row.data());
            }
        }
        let te = tape.constant(Tensor::from_raw(vec![tg.instances(), d], te));
        let hh = tape.add(h, te);
        let inv = 1.0 / tg.steps as f64;
        let pooled = tape.segment_sum(hh, tg.node_of.clone());
        let pooled = tape.scale(pooled, inv);
        let wa = tape.param(store, self.w_a);
        let q = tape.matmul(pooled, wa);
        let q = tape.gather_rows(q, tg.node_index.clone());
        let qh = tape.mul(q, hh);
        let gate = tape.row_sum(qh);
        let gate = tape.tanh(gate);
        let gated = tape.mul_col(hh, gate);
        let gated = tape.relu(gated);
        let u = tape.segment_sum(gated, tg.node_of.clone());
        Ok(tape.scale(u, inv))
    }

    fn heads(&self, tape: &mut Tape, store: &ParamStore, u: Var) -> Result<PosteriorVars> {
        let mean = self.mean_head.forward(tape, store, u, None)?;
        let raw = self.std_head.forward(tape, store, u, None)?;
        let sp = tape.softplus(raw);
        let floor = tape.constant(Tensor::filled(&[1, tape.shape(sp).1], SIGMA_MIN));
        let std = tape.add_row(sp, floor);
        Ok(PosteriorVars { mean, std })
    }

    /// Mean `φ^m(u)` and standard deviation `softplus(φ^v(u)) + σ_min`.
    pub fn primary_posterior(&self, tape: &mut Tape, store: &ParamStore, u: Var) -> Result<PosteriorVars> {
        self.heads(tape, store, u)
    }

    /// Fuses the candidates `(φ^m, φ^v)(φ_k^r(u))` of every frozen random net
    /// into `primary` with weights `tanh(φ^a[u ‖ φ_k^r(u)])`.
    pub fn randnet_refine(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        u: Var,
        primary: PosteriorVars,
    ) -> Result<PosteriorVars> {
        let mut candidates = Vec::with_capacity(self.randnets.len());
        for net in &self.randnets {
            let ur = net.forward(tape, store, u, None)?;
            let cand = self.heads(tape, store, ur)?;
            let joined = tape.concat_cols(u, ur);
            let a = self.fusion.forward(tape, store, joined, None)?;
            candidates.push((cand, tape.tanh(a)));
        }
        Ok(fuse_posteriors(tape, primary, &candidates))
    }

    /// Full encoder pass. `rng` enables training-mode dropout.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        tg: &TemporalGraph,
        mut rng: Option<&mut Rng>,
    ) -> Result<Encoded> {
        let mut h = self.input.forward(tape, store, x, None)?;
        for l in 0..self.layers.len() {
            h = self.attention_layer(tape, store, h, tg, l, rng.as_deref_mut())?;
        }
        let u = self.sequence_representation(tape, store, h, tg)?;
        let primary = self.primary_posterior(tape, store, u)?;
        let refined = self.randnet_refine(tape, store, u, primary)?;
        Ok(Encoded { u, primary, refined })
    }
}

/// `μ̂ = μ + Σ a_k μ_k`, `σ̂ = max(σ + Σ a_k σ_k, σ_min)` with one `[N, 1]`
/// weight column per candidate.
pub fn fuse_posteriors(
    tape: &mut Tape,
    primary: PosteriorVars,
    candidates: &[(PosteriorVars, Var)],
) -> PosteriorVars {
    if candidates.is_empty() {
        return primary;
    }
    let (mut mean, mut std) = (primary.mean, primary.std);
    for &(cand, a) in candidates {
        let dm = tape.mul_col(cand.mean, a);
        let ds = tape.mul_col(cand.std, a);
        mean = tape.add(mean, dm);
        std = tape.add(std, ds);
    }
    let std = tape.clamp_min(std, SIGMA_MIN);
    PosteriorVars { mean, std }
}

/// Reparameterized draw `μ + σ ⊙ ε` with `ε ~ N(0, I)` from `rng`.
pub fn sample_initial_state(tape: &mut Tape, post: PosteriorVars, rng: &mut Rng) -> Var {
    let shape = tape.value(post.mean).shape().to_vec();
    let n: usize = shape.iter().product();
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let eps = tape.constant(Tensor::from_raw(shape, eps));
    let noise = tape.mul(post.std, eps);
    tape.add(post.mean, noise)
}
