//! Parameter storage, feed-forward networks, activations and the sinusoidal
//! time encoding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::tape::{sigmoid, Tape, Var};
use crate::numeric::tensor::Tensor;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at input `x` given the forward output `y`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    /// Global Lipschitz constant (supremum of |σ'|).
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            Activation::Relu | Activation::Tanh | Activation::Identity => 1.0,
        }
    }
}

/// Index of a block inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamBlock {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    /// Activation that follows this block in its network, recorded in the
    /// checkpoint manifest.
    pub activation: Option<Activation>,
}

/// Ordered collection of named parameter blocks.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        trainable: bool,
        activation: Option<Activation>,
    ) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate block {name}");
        self.blocks.push(ParamBlock {
            name,
            value,
            trainable,
            activation,
        });
        ParamId(self.blocks.len() - 1)
    }

    pub fn block(&self, id: ParamId) -> &ParamBlock {
        &self.blocks[id.0]
    }

    pub fn block_mut(&mut self, id: ParamId) -> &mut ParamBlock {
        &mut self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.blocks.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    /// Combined checksum of the blocks whose name starts with `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        self.blocks
            .iter()
            .filter(|b| b.name.starts_with(prefix))
            .fold(0u64, |acc, b| {
                acc.rotate_left(7) ^ b.value.checksum()
            })
    }
}

/// Weights uniform in ±1/√fan_in, shape `[fan_in, fan_out]`.
pub fn init_weight(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::from_raw(vec![fan_in, fan_out], data)
}

/// Handle to a feed-forward network whose layers live in a [`ParamStore`].
///
/// Computes `x ↦ σ_L(… σ_1(x W_1 + b_1) … W_L + b_L)` with row-vector inputs
/// and `W_l` of shape `[in, out]`. Hidden layers use `hidden`, the last
/// layer uses `output`. Dropout is applied to hidden activations only.
#[derive(Clone, Debug)]
pub struct Fnn {
    pub layers: Vec<(ParamId, ParamId)>,
    pub hidden: Activation,
    pub output: Activation,
    pub dropout: f64,
    dims: Vec<usize>,
}

/// Layout of an [`Fnn`] before its parameters are allocated.
#[derive(Clone, Debug)]
pub struct FnnSpec {
    pub dims: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub dropout: f64,
}

impl FnnSpec {
    /// Every layer, including the last, uses `act`.
    pub fn uniform(dims: &[usize], act: Activation) -> Self {
        Self {
            dims: dims.to_vec(),
            hidden: act,
            output: act,
            dropout: 0.0,
        }
    }

    pub fn new(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        Self {
            dims: dims.to_vec(),
            hidden,
            output,
            dropout: 0.0,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }
}

impl Fnn {
    /// Allocates and initializes the layers under `prefix.layer{l}.{w,b}`.
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        spec: &FnnSpec,
        trainable: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if spec.dims.len() < 2 || spec.dims.contains(&0) {
            return Err(Error::Config(format!(
                "{prefix}: network dims {:?} need at least two positive widths",
                spec.dims
            )));
        }
        if !(0.0..1.0).contains(&spec.dropout) {
            return Err(Error::Config(format!(
                "{prefix}: dropout {} outside [0, 1)",
                spec.dropout
            )));
        }
        let n = spec.dims.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let act = if l + 1 == n { spec.output } else { spec.hidden };
            let (fi, fo) = (spec.dims[l], spec.dims[l + 1]);
            let w = store.add(
                format!("{prefix}.layer{l}.w"),
                init_weight(rng, fi, fo),
                trainable,
                Some(act),
            );
            let b = store.add(
                format!("{prefix}.layer{l}.b"),
                Tensor::zeros(&[1, fo]),
                trainable,
                Some(act),
            );
            layers.push((w, b));
        }
        Ok(Self {
            layers,
            hidden: spec.hidden,
            output: spec.output,
            dropout: spec.dropout,
            dims: spec.dims.clone(),
        })
    }

    /// Reattaches to blocks already present in `store` (checkpoint load).
    pub fn attach(store: &ParamStore, prefix: &str, spec: &FnnSpec) -> Result<Self> {
        let n = spec.dims.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let find = |suffix: &str| {
                let name = format!("{prefix}.layer{l}.{suffix}");
                store
                    .find(&name)
                    .ok_or_else(|| Error::Format(format!("missing block {name}")))
            };
            let (w, b) = (find("w")?, find("b")?);
            let ws = store.block(w).value.shape();
            if ws != [spec.dims[l], spec.dims[l + 1]] {
                return Err(Error::Format(format!(
                    "{prefix}.layer{l}.w has shape {ws:?}, expected [{}, {}]",
                    spec.dims[l],
                    spec.dims[l + 1]
                )));
            }
            layers.push((w, b));
        }
        Ok(Self {
            layers,
            hidden: spec.hidden,
            output: spec.output,
            dropout: spec.dropout,
            dims: spec.dims.clone(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Forward pass on a tape. `rng` switches on training-mode dropout.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mut rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let (_, cols) = tape.shape(x);
        if cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects width {}, got {cols}",
                self.input_dim()
            )));
        }
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let z = tape.matmul(h, wv);
            let z = tape.add_row(z, bv);
            h = tape.activation(z, self.activation_of(l));
            let hidden = l + 1 < self.layers.len();
            if hidden && self.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    h = dropout(tape, h, self.dropout, r);
                }
            }
        }
        Ok(h)
    }

    /// Evaluates on a plain tensor through a throwaway tape.
    pub fn apply(&self, store: &ParamStore, x: &Tensor, rng: Option<&mut Rng>) -> Result<Tensor> {
        let x = match x.shape().len() {
            1 => x.clone().reshape(vec![1, x.len()])?,
            2 => x.clone(),
            _ => return Err(Error::Shape(format!("fnn input {:?}", x.shape()))),
        };
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = self.forward(&mut tape, store, xv, rng)?;
        Ok(tape.value(y).clone())
    }

    /// Product of layer spectral norms and activation Lipschitz constants.
    pub fn lipschitz_bound(&self, store: &ParamStore) -> Result<f64> {
        let mut bound = 1.0;
        for (l, &(w, _)) in self.layers.iter().enumerate() {
            bound *= crate::numeric::spectral::spectral_norm(&store.block(w).value, 1000, 1e-12)?;
            bound *= self.activation_of(l).lipschitz();
        }
        Ok(bound)
    }
}

/// Inverted dropout: keeps each entry with probability `1 - p` and rescales
/// by `1 / (1 - p)`.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut Rng) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let keep = 1.0 / (1.0 - p);
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    let m = tape.constant(Tensor::from_raw(shape, mask));
    tape.mul(x, m)
}

/// Sinusoidal encoding of a time offset: entry `2i` is
/// `sin(Δt / 10000^(2i/d))` and entry `2i+1` the matching cosine.
pub fn time_encoding(dt: f64, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!(
            "time encoding width must be even and positive, got {dim}"
        )));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf((2 * i) as f64 / dim as f64);
        let a = dt / freq;
        out.push(a.sin());
        out.push(a.cos());
    }
    Tensor::new(vec![1, dim], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn single_layer(w: Tensor, b: Tensor, act: Activation) -> (ParamStore, Fnn) {
        let mut store = ParamStore::new();
        let wi = store.add("net.layer0.w", w, true, Some(act));
        let bi = store.add("net.layer0.b", b, true, Some(act));
        let fi = store.block(wi).value.rows();
        let fo = store.block(wi).value.cols();
        let net = Fnn {
            layers: vec![(wi, bi)],
            hidden: act,
            output: act,
            dropout: 0.0,
            dims: vec![fi, fo],
        };
        (store, net)
    }

    #[test]
    fn zero_network_gives_zero() {
        let mut rng = rng_from_seed(0);
        let mut store = ParamStore::new();
        let net = Fnn::build(
            &mut store,
            "z",
            &FnnSpec::uniform(&[3, 5, 2], Activation::Relu),
            true,
            &mut rng,
        )
        .unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.block(id).value.shape().to_vec();
            store.block_mut(id).value = Tensor::zeros(&shape);
        }
        let y = net.apply(&store, &Tensor::row(&[1.0, -2.0, 3.0]), None).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let (store, net) = single_layer(Tensor::identity(2), Tensor::zeros(&[1, 2]), Activation::Identity);
        let y = net.apply(&store, &Tensor::row(&[1.0, 2.0]), None).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn tanh_layer_reference_value() {
        let (store, net) = single_layer(Tensor::scalar(2.0), Tensor::scalar(0.5), Activation::Tanh);
        let y = net.apply(&store, &Tensor::row(&[1.0]), None).unwrap();
        assert_close(y.data()[0], 2.5f64.tanh(), 1e-15);
        assert_close(y.data()[0], 0.98661, 1e-5);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let (store, net) = single_layer(Tensor::identity(2), Tensor::zeros(&[1, 2]), Activation::Relu);
        assert!(matches!(
            net.apply(&store, &Tensor::row(&[1.0, 2.0, 3.0]), None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn eval_mode_ignores_rng_and_train_mode_scales() {
        let mut rng = rng_from_seed(5);
        let mut store = ParamStore::new();
        let net = Fnn::build(
            &mut store,
            "d",
            &FnnSpec::new(&[4, 64, 3], Activation::Relu, Activation::Identity).with_dropout(0.5),
            true,
            &mut rng,
        )
        .unwrap();
        let x = Tensor::row(&[0.3, -0.1, 0.7, 0.2]);
        let a = net.apply(&store, &x, None).unwrap();
        let b = net.apply(&store, &x, None).unwrap();
        assert_eq!(a, b);
        let mut r1 = rng_from_seed(1);
        let mut r2 = rng_from_seed(2);
        let t1 = net.apply(&store, &x, Some(&mut r1)).unwrap();
        let t2 = net.apply(&store, &x, Some(&mut r2)).unwrap();
        assert_ne!(t1, t2);
        // dropout on a constant: surviving entries are doubled at p = 0.5
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::filled(&[1, 100], 1.0));
        let d = dropout(&mut tape, ones, 0.5, &mut r1);
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn time_encoding_values() {
        assert_eq!(time_encoding(0.0, 4).unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
        let te = time_encoding(1.0, 2).unwrap();
        assert_close(te.data()[0], 1f64.sin(), 1e-15);
        assert_close(te.data()[0], 0.84147, 1e-5);
        assert_close(te.data()[1], 0.54030, 1e-5);
        assert!(matches!(time_encoding(1.0, 3), Err(Error::Config(_))));
        assert!(matches!(time_encoding(1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn lipschitz_constants() {
        assert_eq!(Activation::Sigmoid.lipschitz(), 0.25);
        assert_eq!(Activation::Relu.lipschitz(), 1.0);
        let (store, net) = single_layer(Tensor::identity(3).scale(2.0), Tensor::zeros(&[1, 3]), Activation::Relu);
        assert_close(net.lipschitz_bound(&store).unwrap(), 2.0, 1e-10);
        let (store, net) = single_layer(Tensor::identity(3), Tensor::zeros(&[1, 3]), Activation::Sigmoid);
        assert!(net.lipschitz_bound(&store).unwrap() <= 0.25 + 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn time_encoding_bounded(dt in -1e4f64..1e4, half in 1usize..16) {
                let te = time_encoding(dt, 2 * half).unwrap();
                prop_assert!(te.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            }

            #[test]
            fn time_encoding_periodic(dt in -50f64..50.0, half in 1usize..8, pair in 0usize..8) {
                let d = 2 * half;
                let i = pair % half;
                let period = 2.0 * std::f64::consts::PI * 10000f64.powf((2 * i) as f64 / d as f64);
                let a = time_encoding(dt, d).unwrap();
                let b = time_encoding(dt + period, d).unwrap();
                let tol = 1e-9 * (1.0 + period);
                prop_assert!((a.data()[2 * i] - b.data()[2 * i]).abs() < tol);
                prop_assert!((a.data()[2 * i + 1] - b.data()[2 * i + 1]).abs() < tol);
            }
        }
    }
}
