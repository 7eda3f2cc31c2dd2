//! Define-by-run reverse-mode differentiation over a fixed set of matrix
//! primitives.
//!
//! Every value on a [`Tape`] is a 2-D [`Tensor`]; scalars are `[1, 1]`.
//! Operations append a node holding the forward value and the recipe for
//! its local derivative. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints, returning gradients for every registered
//! parameter block.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numeric::nn::{Activation, ParamId, ParamStore};
use crate::numeric::tensor::{gemm, gemm_a_bt, gemm_at_b, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row-to-segment assignment with member lists precomputed for the
/// sorted reduction.
#[derive(Debug)]
pub struct Segments {
    of_row: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Segments {
    pub fn new(of_row: Vec<usize>, count: usize) -> Self {
        let mut members = vec![Vec::new(); count];
        for (r, &s) in of_row.iter().enumerate() {
            assert!(s < count, "segment {s} out of range {count}");
            members[s].push(r);
        }
        Self { of_row, members }
    }

    pub fn count(&self) -> usize {
        self.members.len()
    }

    pub fn rows(&self) -> usize {
        self.of_row.len()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    RowSum(Var),
    Act(Var, Activation),
    Softplus(Var),
    Ln(Var),
    Square(Var),
    ClampMin(Var, f64),
    ConcatCols(Var, Var),
    GatherRows(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<Segments>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.shape();
        (s[0], s[1])
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input. 1-D tensors are lifted to a `[1, n]` row.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = lift(t);
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(Tensor::scalar(v), Op::Leaf)
    }

    /// Registers a parameter block. Trainable blocks become differentiable
    /// leaves; frozen blocks enter as constants and so always receive a
    /// zero gradient. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let block = store.block(id);
        let value = lift(block.value.clone());
        let v = if block.trainable {
            self.push(value, Op::Param)
        } else {
            self.push(value, Op::Leaf)
        };
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols(),
            bv.rows(),
            "matmul {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm(av.data(), bv.data(), &mut out, m, k, n);
        self.push(Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "add");
        let out = av.zip_map(bv, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "sub");
        let out = av.zip_map(bv, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "mul");
        let out = av.zip_map(bv, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// `a[m,n] + row[1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert!(
            rv.rows() == 1 && rv.cols() == av.cols(),
            "add_row {:?} + {:?}",
            av.shape(),
            rv.shape()
        );
        let n = av.cols();
        let mut out = av.data().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, r) in chunk.iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        self.push(Tensor::from_raw(av.shape().to_vec(), out), Op::AddRow(a, row))
    }

    /// `a[m,n] * col[m,1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert!(
            cv.cols() == 1 && cv.rows() == av.rows(),
            "mul_col {:?} * {:?}",
            av.shape(),
            cv.shape()
        );
        let n = av.cols();
        let mut out = av.data().to_vec();
        for (chunk, &s) in out.chunks_mut(n).zip(cv.data()) {
            for o in chunk.iter_mut() {
                *o *= s;
            }
        }
        self.push(Tensor::from_raw(av.shape().to_vec(), out), Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `[m,n] -> [m,1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.cols();
        let out: Vec<f64> = av.data().chunks(n).map(|r| r.iter().sum()).collect();
        let m = out.len();
        self.push(Tensor::from_raw(vec![m, 1], out), Op::RowSum(a))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let out = self.value(a).map(|x| act.apply(x));
        self.push(out, Op::Act(a, act))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// `max(a, floor)` elementwise; the gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor));
        self.push(out, Op::ClampMin(a, floor))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat_cols row mismatch");
        let (m, na, nb) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            out.extend_from_slice(av.row_slice(r));
            out.extend_from_slice(bv.row_slice(r));
        }
        self.push(Tensor::from_raw(vec![m, na + nb], out), Op::ConcatCols(a, b))
    }

    /// Selects rows `idx` of `a` (with repetition).
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let av = self.value(a);
        let n = av.cols();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &r in idx.iter() {
            out.extend_from_slice(av.row_slice(r));
        }
        self.push(Tensor::from_raw(vec![idx.len(), n], out), Op::GatherRows(a, idx))
    }

    /// Sums rows of `a` into `segs.count()` output rows. Within a segment and
    /// column the terms are added in ascending value order, so the result is
    /// independent of how rows are numbered.
    pub fn segment_sum(&mut self, a: Var, segs: Rc<Segments>) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), segs.rows(), "segment_sum row mismatch");
        let n = av.cols();
        let mut out = vec![0.0; segs.count() * n];
        let mut buf = Vec::new();
        for (s, members) in segs.members.iter().enumerate() {
            for c in 0..n {
                buf.clear();
                buf.extend(members.iter().map(|&r| av.data()[r * n + c]));
                buf.sort_by(f64::total_cmp);
                out[s * n + c] = buf.iter().sum();
            }
        }
        self.push(
            Tensor::from_raw(vec![segs.count(), n], out),
            Op::SegmentSum(a, segs),
        )
    }

    /// Fingerprint of the branch taken at every non-smooth node (relu sign,
    /// clamp activity). Two evaluations with equal fingerprints lie on the
    /// same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            let (input, thr) = match node.op {
                Op::Act(a, Activation::Relu) => (a, 0.0),
                Op::ClampMin(a, f) => (a, f),
                _ => continue,
            };
            for &x in self.value(input).data() {
                h ^= u64::from(x > thr);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let mut ga = vec![0.0; m * k];
                    gemm_a_bt(g.data(), bv.data(), &mut ga, m, n, k);
                    accumulate(&mut adj, *a, Tensor::from_raw(vec![m, k], ga));
                    let mut gb = vec![0.0; k * n];
                    gemm_at_b(av.data(), g.data(), &mut gb, k, m, n);
                    accumulate(&mut adj, *b, Tensor::from_raw(vec![k, n], gb));
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    let mut gr = vec![0.0; n];
                    for chunk in g.data().chunks(n) {
                        for (o, x) in gr.iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj, *row, Tensor::from_raw(vec![1, n], gr));
                    accumulate(&mut adj, *a, g);
                }
                Op::MulCol(a, col) => {
                    let (av, cv) = (self.value(*a), self.value(*col));
                    let n = g.cols();
                    let gc: Vec<f64> = g
                        .data()
                        .chunks(n)
                        .zip(av.data().chunks(n))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                        .collect();
                    let mut ga = g.data().to_vec();
                    for (chunk, &s) in ga.chunks_mut(n).zip(cv.data()) {
                        for o in chunk.iter_mut() {
                            *o *= s;
                        }
                    }
                    accumulate(&mut adj, *col, Tensor::from_raw(vec![cv.rows(), 1], gc));
                    accumulate(&mut adj, *a, Tensor::from_raw(av.shape().to_vec(), ga));
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g.scale(*c)),
                Op::Sum(a) => {
                    let s = g.data()[0];
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut adj, *a, Tensor::filled(&shape, s));
                }
                Op::RowSum(a) => {
                    let av = self.value(*a);
                    let n = av.cols();
                    let mut ga = Vec::with_capacity(av.len());
                    for &s in g.data() {
                        ga.extend(std::iter::repeat(s).take(n));
                    }
                    accumulate(&mut adj, *a, Tensor::from_raw(av.shape().to_vec(), ga));
                }
                Op::Act(a, act) => {
                    let ga = self
                        .value(*a)
                        .zip_map(&node.value, |x, y| act.derivative(x, y));
                    let ga = ga.zip_map(&g, |d, x| d * x);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = self.value(*a).zip_map(&g, |x, gx| sigmoid(x) * gx);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Ln(a) => {
                    let ga = self.value(*a).zip_map(&g, |x, gx| gx / x);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Square(a) => {
                    let ga = self.value(*a).zip_map(&g, |x, gx| 2.0 * x * gx);
                    accumulate(&mut adj, *a, ga);
                }
                Op::ClampMin(a, floor) => {
                    let f = *floor;
                    let ga = self
                        .value(*a)
                        .zip_map(&g, |x, gx| if x > f { gx } else { 0.0 });
                    accumulate(&mut adj, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let (na, nb) = (self.value(*a).cols(), self.value(*b).cols());
                    let m = g.rows();
                    let mut ga = Vec::with_capacity(m * na);
                    let mut gb = Vec::with_capacity(m * nb);
                    for r in 0..m {
                        let row = g.row_slice(r);
                        ga.extend_from_slice(&row[..na]);
                        gb.extend_from_slice(&row[na..]);
                    }
                    accumulate(&mut adj, *a, Tensor::from_raw(vec![m, na], ga));
                    accumulate(&mut adj, *b, Tensor::from_raw(vec![m, nb], gb));
                }
                Op::GatherRows(a, rows) => {
                    let av = self.value(*a);
                    let n = av.cols();
                    let mut ga = vec![0.0; av.len()];
                    for (k, &r) in rows.iter().enumerate() {
                        for (o, x) in ga[r * n..(r + 1) * n].iter_mut().zip(g.row_slice(k)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::from_raw(av.shape().to_vec(), ga));
                }
                Op::SegmentSum(a, segs) => {
                    let n = g.cols();
                    let mut ga = Vec::with_capacity(segs.rows() * n);
                    for &s in &segs.of_row {
                        ga.extend_from_slice(g.row_slice(s));
                    }
                    accumulate(&mut adj, *a, Tensor::from_raw(vec![segs.rows(), n], ga));
                }
            }
        }

        let mut params = BTreeMap::new();
        for (&id, &v) in &self.params {
            if let Op::Param = self.nodes[v.0].op {
                let g = adj[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
                params.insert(id, g);
            }
        }
        Ok(Gradients { adj, params })
    }
}

fn lift(t: Tensor) -> Tensor {
    if t.shape().len() == 1 {
        let n = t.len();
        t.reshape(vec![1, n]).expect("same element count")
    } else {
        t
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to a leaf node (zeros if unreachable).
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.adj[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }

    /// Gradients of trainable blocks registered on the tape.
    pub fn params(&self) -> &BTreeMap<ParamId, Tensor> {
        &self.params
    }

    /// One gradient per block of `store`, in store order, zero-filled for
    /// blocks that are frozen or were never used. Shapes follow the blocks.
    pub fn dense(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| {
                let block = store.block(id);
                match self.params.get(&id) {
                    Some(g) => Tensor::from_raw(block.value.shape().to_vec(), g.data().to_vec()),
                    None => Tensor::zeros(block.value.shape()),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::nn::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![r, c], data).unwrap()
    }

    /// Checks d(sum(w ⊙ f(x)))/dx against central differences on random
    /// inputs, where `w` is a fixed random weighting.
    fn check_unary(
        shape: (usize, usize),
        seed: u64,
        f: impl Fn(&mut Tape, Var) -> Var,
        avoid: impl Fn(f64) -> bool,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = random(&mut rng, shape.0, shape.1);
        for v in x.data_mut() {
            while avoid(*v) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let eval = |x: &Tensor, w: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = f(&mut tape, xv);
            let wv = tape.constant(w.clone());
            let p = tape.mul(y, wv);
            let s = tape.sum(p);
            (tape, xv, s)
        };
        let y_shape = {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let y = f(&mut t, xv);
            t.value(y).shape().to_vec()
        };
        let w = random(&mut rng, y_shape[0], y_shape[1]);
        let (tape, xv, s) = eval(&x, &w);
        let g = tape.backward(s).unwrap().wrt(&tape, xv);
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let (tp, _, sp) = eval(&xp, &w);
            let (tm, _, sm) = eval(&xm, &w);
            let fd = (tp.value(sp).data()[0] - tm.value(sm).data()[0]) / (2.0 * h);
            let an = g.data()[i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "entry {i}: analytic {an} vs fd {fd}");
        }
    }

    fn never(_: f64) -> bool {
        false
    }

    #[test]
    fn scalar_loss_required() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::identity(2), true, None);
        let mut tape = Tape::new();
        let _w = tape.param(&store, id);
        let c = tape.scalar(3.0);
        let g = tape.backward(c).unwrap();
        assert_eq!(g.dense(&store)[0], Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn half_squared_norm_of_wx() {
        // loss = ½‖Wx‖², W = [[1]], x = [3] → dW = (Wx) xᵀ = 9
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::identity(1), true, None);
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let x = tape.constant(Tensor::scalar(3.0));
        let y = tape.matmul(x, w);
        let sq = tape.square(y);
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.params()[&id].data(), &[9.0]);
    }

    #[test]
    fn frozen_blocks_get_zero_gradient() {
        let mut store = ParamStore::new();
        let frozen = store.add("frozen", Tensor::identity(2), false, None);
        let live = store.add("live", Tensor::identity(2), true, None);
        let mut tape = Tape::new();
        let a = tape.param(&store, frozen);
        let b = tape.param(&store, live);
        let c = tape.matmul(a, b);
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        let dense = g.dense(&store);
        assert_eq!(dense[0], Tensor::zeros(&[2, 2]));
        assert!(dense[1].max_abs() > 0.0);
        assert!(!g.params().contains_key(&frozen));
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        check_unary((3, 4), 1, |t, x| t.tanh(x), never);
        check_unary((3, 4), 2, |t, x| t.sigmoid(x), never);
        check_unary((3, 4), 3, |t, x| t.relu(x), |v| v.abs() < 1e-3);
        check_unary((3, 4), 4, |t, x| t.softplus(x), never);
        check_unary((3, 4), 5, |t, x| t.square(x), never);
        check_unary((3, 4), 6, |t, x| t.scale(x, -2.5), never);
        check_unary(
            (3, 4),
            7,
            |t, x| {
                let sq = t.square(x);
                let one = t.constant(Tensor::filled(&[3, 4], 1.0));
                let p = t.add(sq, one);
                t.ln(p)
            },
            never,
        );
        check_unary((3, 4), 8, |t, x| t.clamp_min(x, 0.1), |v| (v - 0.1).abs() < 1e-3);
        check_unary((3, 4), 9, |t, x| t.row_sum(x), never);
        check_unary((3, 4), 10, |t, x| t.sum(x), never);
    }

    #[test]
    fn binary_and_structural_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let other = random(&mut rng, 4, 3);
        let same = random(&mut rng, 3, 4);
        let row = random(&mut rng, 1, 4);
        let col = random(&mut rng, 3, 1);
        let o = other.clone();
        check_unary((3, 4), 11, move |t, x| {
            let b = t.constant(o.clone());
            t.matmul(x, b)
        }, never);
        let o = other.transpose();
        check_unary((4, 3), 12, move |t, x| {
            let a = t.constant(o.clone());
            t.matmul(a, x)
        }, never);
        let s = same.clone();
        check_unary((3, 4), 13, move |t, x| {
            let b = t.constant(s.clone());
            let p = t.mul(x, b);
            let q = t.sub(p, x);
            t.add(q, b)
        }, never);
        let r = row.clone();
        check_unary((3, 4), 14, move |t, x| {
            let b = t.constant(r.clone());
            t.add_row(x, b)
        }, never);
        check_unary((1, 4), 15, move |t, x| {
            let a = t.constant(same.clone());
            t.add_row(a, x)
        }, never);
        let c = col.clone();
        check_unary((3, 4), 16, move |t, x| {
            let b = t.constant(c.clone());
            t.mul_col(x, b)
        }, never);
        check_unary((3, 1), 17, move |t, x| {
            let a = t.constant(row.clone());
            let a = t.gather_rows(a, Rc::from(vec![0, 0, 0]));
            t.mul_col(a, x)
        }, never);
        check_unary((3, 4), 18, |t, x| {
            let y = t.tanh(x);
            t.concat_cols(x, y)
        }, never);
        check_unary((3, 4), 19, |t, x| t.gather_rows(x, Rc::from(vec![2, 0, 2, 1])), never);
        check_unary((5, 2), 20, |t, x| {
            t.segment_sum(x, Rc::new(Segments::new(vec![1, 0, 1, 1, 2], 4)))
        }, never);
    }

    #[test]
    fn segment_sum_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 6, 3);
        let perm = [4usize, 2, 0, 5, 1, 3];
        let permuted_rows: Vec<Vec<f64>> =
            perm.iter().map(|&r| x.row_slice(r).to_vec()).collect();
        let xp = Tensor::from_rows(&permuted_rows).unwrap();
        let mut t = Tape::new();
        let a = t.constant(x);
        let b = t.constant(xp);
        let sa = t.segment_sum(a, Rc::new(Segments::new(vec![0; 6], 1)));
        let sb = t.segment_sum(b, Rc::new(Segments::new(vec![0; 6], 1)));
        assert_eq!(t.value(sa), t.value(sb));
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut t = Tape::new();
            let a = t.constant(random(&mut rng, 4, 4));
            let b = t.constant(random(&mut rng, 4, 4));
            let c = t.matmul(a, b);
            let d = t.tanh(c);
            let s = t.sum(d);
            let g = t.backward(s).unwrap().wrt(&t, a);
            (t.value(s).clone(), g)
        };
        assert_eq!(run(), run());
    }
}
