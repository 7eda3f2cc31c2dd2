//! Latent vector field with time-weighted basis interactions, and the
//! fixed-step solvers that integrate it.
//!
//! For every node `i` the field is
//!
//! ```text
//! dz_i/dt = f^a( Σ_j Σ_k w_ijk(t) ⊙ f_k([z_i ‖ z_j]) ) − z_i
//! w_ijk(t) = σ(FNN_k^r(z_j + TE(t))) ⊙ σ(FNN_k^a(z_i + TE(t)))
//! ```
//!
//! where `j` ranges over the neighbour mask. The unified baseline replaces
//! the weighted basis sum with one shared interaction function.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{time_encoding, Activation, Fnn, FnnSpec, ParamStore, Segments, Tape, Tensor, Var};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    /// Weighted sum over `K` bases.
    TiOde,
    /// One interaction function, no weights.
    Unified,
    /// `K` bases with every weight fixed to 1.
    NoW,
}

/// Which pairs `(i, j)` enter the interaction sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborMask {
    /// Nonzero entries of the last observed adjacency.
    Adjacency,
    /// Every ordered pair.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub mode: FieldMode,
    pub bases: usize,
    pub basis_hidden: usize,
    pub weight_hidden: usize,
    pub aggregator_hidden: usize,
    pub mask: NeighborMask,
    /// Include `j = i` in every node's neighbourhood.
    pub self_loops: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            mode: FieldMode::TiOde,
            bases: 5,
            basis_hidden: 128,
            weight_hidden: 128,
            aggregator_hidden: 128,
            mask: NeighborMask::Adjacency,
            self_loops: true,
        }
    }
}

/// Ordered pair list with the receiving node of each pair.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub nodes: usize,
    pub i: Rc<[usize]>,
    pub j: Rc<[usize]>,
    by_receiver: Rc<Segments>,
}

impl PairSet {
    pub fn new(nodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= nodes || *j >= nodes) {
            return Err(Error::Shape(format!("pair ({i}, {j}) outside {nodes} nodes")));
        }
        let i: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
        let j: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
        let by_receiver = Rc::new(Segments::new(i.to_vec(), nodes));
        Ok(Self { nodes, i, j, by_receiver })
    }

    /// Pairs selected by `mask` and the `[N, N]` adjacency.
    pub fn from_adjacency(
        nodes: usize,
        adjacency: &[f64],
        mask: NeighborMask,
        self_loops: bool,
    ) -> Result<Self> {
        if adjacency.len() != nodes * nodes {
            return Err(Error::Shape(format!(
                "adjacency has {} entries for {nodes} nodes",
                adjacency.len()
            )));
        }
        let mut pairs = Vec::new();
        for i in 0..nodes {
            for j in 0..nodes {
                let keep = if i == j {
                    self_loops
                } else {
                    mask == NeighborMask::Full || adjacency[i * nodes + j] != 0.0
                };
                if keep {
                    pairs.push((i, j));
                }
            }
        }
        Self::new(nodes, &pairs)
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }
}

/// Handles to the field's networks inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub mode: FieldMode,
    pub latent_dim: usize,
    /// `f_k`; a single entry in unified mode.
    pub bases: Vec<Fnn>,
    /// Receiver-side weight nets `FNN_k^a`.
    pub response: Vec<Fnn>,
    /// Sender-side weight nets `FNN_k^r`.
    pub activation: Vec<Fnn>,
    pub aggregator: Fnn,
}

impl Dynamics {
    pub fn build(
        store: &mut ParamStore,
        cfg: &DynamicsConfig,
        latent_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = latent_dim;
        if d == 0 || d % 2 != 0 {
            return Err(Error::Config(format!("latent_dim must be even, got {d}")));
        }
        if cfg.bases == 0 {
            return Err(Error::Config("at least one basis function is required".into()));
        }
        let basis = FnnSpec::new(&[2 * d, cfg.basis_hidden, d], Activation::Relu, Activation::Identity);
        let (bases, response, activation) = if cfg.mode == FieldMode::Unified {
            let f = Fnn::build(store, "dynamics.interaction", &basis, true, rng)?;
            (vec![f], Vec::new(), Vec::new())
        } else {
            let weight = FnnSpec::new(&[d, cfg.weight_hidden, d], Activation::Relu, Activation::Sigmoid);
            let mut b = Vec::new();
            let mut r = Vec::new();
            let mut a = Vec::new();
            for k in 0..cfg.bases {
                b.push(Fnn::build(store, &format!("dynamics.basis{k}"), &basis, true, rng)?);
                r.push(Fnn::build(store, &format!("dynamics.response{k}"), &weight, true, rng)?);
                a.push(Fnn::build(store, &format!("dynamics.activation{k}"), &weight, true, rng)?);
            }
            (b, r, a)
        };
        let aggregator = Fnn::build(
            store,
            "dynamics.aggregator",
            &FnnSpec::new(&[d, cfg.aggregator_hidden, d], Activation::Relu, Activation::Identity),
            true,
            rng,
        )?;
        Ok(Self {
            mode: cfg.mode,
            latent_dim: d,
            bases,
            response,
            activation,
            aggregator,
        })
    }

    pub fn uses_weights(&self) -> bool {
        self.mode == FieldMode::TiOde
    }

    /// Receiver and sender weights `(w̄_k, ŵ_k)`, each `[N, d_z]`, for every
    /// basis at time `t`.
    pub fn basis_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        t: f64,
    ) -> Result<Vec<(Var, Var)>> {
        let te = tape.constant(time_encoding(t, self.latent_dim)?);
        let zt = tape.add_row(z, te);
        self.response
            .iter()
            .zip(&self.activation)
            .map(|(ra, rr)| {
                Ok((
                    ra.forward(tape, store, zt, None)?,
                    rr.forward(tape, store, zt, None)?,
                ))
            })
            .collect()
    }

    /// `dZ/dt` at `(Z, t)` for `Z` of shape `[N, d_z]`.
    pub fn field(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        t: f64,
        pairs: &PairSet,
    ) -> Result<Var> {
        let (n, d) = tape.shape(z);
        if n != pairs.nodes || d != self.latent_dim {
            return Err(Error::Shape(format!(
                "field input [{n}, {d}], expected [{}, {}]",
                pairs.nodes, self.latent_dim
            )));
        }
        let agg = if pairs.is_empty() {
            tape.constant(Tensor::zeros(&[n, d]))
        } else {
            let zi = tape.gather_rows(z, pairs.i.clone());
            let zj = tape.gather_rows(z, pairs.j.clone());
            let zz = tape.concat_cols(zi, zj);
            let weights = if self.uses_weights() {
                Some(self.basis_weights(tape, store, z, t)?)
            } else {
                None
            };
            let mut acc: Option<Var> = None;
            for (k, f) in self.bases.iter().enumerate() {
                let mut term = f.forward(tape, store, zz, None)?;
                if let Some(w) = &weights {
                    let (wbar, what) = w[k];
                    let recv = tape.gather_rows(wbar, pairs.i.clone());
                    let send = tape.gather_rows(what, pairs.j.clone());
                    let wk = tape.mul(send, recv);
                    term = tape.mul(term, wk);
                }
                acc = Some(match acc {
                    Some(a) => tape.add(a, term),
                    None => term,
                });
            }
            let acc = acc.expect("at least one basis");
            tape.segment_sum(acc, pairs.by_receiver.clone())
        };
        let out = self.aggregator.forward(tape, store, agg, None)?;
        Ok(tape.sub(out, z))
    }

    /// Field evaluated on plain tensors.
    pub fn field_value(&self, store: &ParamStore, z: &Tensor, t: f64, pairs: &PairSet) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let f = self.field(&mut tape, store, zv, t, pairs)?;
        Ok(tape.value(f).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: Method,
    /// Sub-step length in latent time units (one observation interval = 1).
    pub step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            step: 0.025,
        }
    }
}

const GRID_TOL: f64 = 1e-9;

impl SolverConfig {
    /// Number of sub-steps between consecutive evaluation times, starting
    /// from `t = 0`.
    pub fn schedule(&self, eval_times: &[f64]) -> Result<Vec<usize>> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("solver step must be positive, got {}", self.step)));
        }
        let mut prev = 0.0;
        let mut counts = Vec::with_capacity(eval_times.len());
        for (k, &t) in eval_times.iter().enumerate() {
            let gap = t - prev;
            if !(gap > 0.0 || (k == 0 && gap == 0.0)) {
                return Err(Error::Config(format!(
                    "evaluation times must be strictly increasing from 0, got {t} after {prev}"
                )));
            }
            let steps = gap / self.step;
            let rounded = steps.round();
            if (steps - rounded).abs() > GRID_TOL {
                return Err(Error::Config(format!(
                    "gap {gap} before t = {t} is not a multiple of step {}",
                    self.step
                )));
            }
            counts.push(rounded as usize);
            prev = t;
        }
        Ok(counts)
    }
}

/// Integrates `dz/dt = f(z, t)` from `t = 0` on `tape`, returning the state
/// at each of `eval_times`. Gradients flow through every step.
pub fn ode_solve(
    tape: &mut Tape,
    mut f: impl FnMut(&mut Tape, Var, f64) -> Result<Var>,
    z0: Var,
    cfg: &SolverConfig,
    eval_times: &[f64],
) -> Result<Vec<Var>> {
    let counts = cfg.schedule(eval_times)?;
    let h = cfg.step;
    let mut z = z0;
    let mut step = 0usize;
    let mut out = Vec::with_capacity(eval_times.len());
    for n in counts {
        for _ in 0..n {
            let t = step as f64 * h;
            z = match cfg.method {
                Method::Euler => {
                    let k1 = f(tape, z, t)?;
                    let dz = tape.scale(k1, h);
                    tape.add(z, dz)
                }
                Method::Rk4 => rk4_step(tape, &mut f, z, t, h)?,
            };
            step += 1;
            if !tape.value(z).is_finite() {
                return Err(Error::Divergence {
                    step,
                    time: step as f64 * h,
                });
            }
        }
        out.push(z);
    }
    Ok(out)
}

fn rk4_step(
    tape: &mut Tape,
    f: &mut impl FnMut(&mut Tape, Var, f64) -> Result<Var>,
    z: Var,
    t: f64,
    h: f64,
) -> Result<Var> {
    let k1 = f(tape, z, t)?;
    let d1 = tape.scale(k1, 0.5 * h);
    let z1 = tape.add(z, d1);
    let k2 = f(tape, z1, t + 0.5 * h)?;
    let d2 = tape.scale(k2, 0.5 * h);
    let z2 = tape.add(z, d2);
    let k3 = f(tape, z2, t + 0.5 * h)?;
    let d3 = tape.scale(k3, h);
    let z3 = tape.add(z, d3);
    let k4 = f(tape, z3, t + h)?;
    let k23 = tape.add(k2, k3);
    let k23 = tape.scale(k23, 2.0);
    let s = tape.add(k1, k23);
    let s = tape.add(s, k4);
    let ds = tape.scale(s, h / 6.0);
    Ok(tape.add(z, ds))
}

/// Same as [`ode_solve`] but on plain tensors, with a fresh tape per step so
/// memory stays flat over long horizons.
pub fn ode_solve_values(
    mut f: impl FnMut(&mut Tape, Var, f64) -> Result<Var>,
    z0: &Tensor,
    cfg: &SolverConfig,
    eval_times: &[f64],
) -> Result<Vec<Tensor>> {
    let counts = cfg.schedule(eval_times)?;
    let h = cfg.step;
    let mut z = z0.clone();
    let mut step = 0usize;
    let mut out = Vec::with_capacity(eval_times.len());
    for n in counts {
        for _ in 0..n {
            let mut tape = Tape::new();
            let zv = tape.constant(z);
            let single = SolverConfig {
                method: cfg.method,
                step: h,
            };
            let t0 = step as f64 * h;
            let next = ode_solve(
                &mut tape,
                |tp, x, t| f(tp, x, t0 + t),
                zv,
                &single,
                &[h],
            )
            .map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence {
                    step: step + 1,
                    time: t0 + h,
                },
                other => other,
            })?;
            z = tape.value(next[0]).clone();
            step += 1;
        }
        out.push(z.clone());
    }
    Ok(out)
}
