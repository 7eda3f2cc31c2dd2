//! Decoder, evidence lower bound and forecast metrics.

use serde::{Deserialize, Serialize};

use crate::encoder::{GaussianPosterior, PosteriorVars};
use crate::error::{Error, Result};
use crate::numeric::{Activation, Fnn, FnnSpec, ParamStore, Tape, Tensor, Var};
use crate::seed::Rng;

/// Shared per-node map from latent state to observation space.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub net: Fnn,
}

impl Decoder {
    /// `hidden = 0` gives a single affine layer.
    pub fn build(
        store: &mut ParamStore,
        latent_dim: usize,
        hidden: usize,
        features: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let dims: Vec<usize> = if hidden == 0 {
            vec![latent_dim, features]
        } else {
            vec![latent_dim, hidden, features]
        };
        let spec = FnnSpec::new(&dims, Activation::Relu, Activation::Identity);
        Ok(Self {
            net: Fnn::build(store, "decoder", &spec, true, rng)?,
        })
    }

    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        self.net.forward(tape, store, z, None)
    }

    pub fn decode_value(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        self.net.apply(store, z, None)
    }
}

/// Terms of the negated evidence lower bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// `Σ ½(μ² + σ² − 1 − ln σ²)`, the divergence from the standard normal.
pub fn gaussian_kl(tape: &mut Tape, post: PosteriorVars) -> Var {
    let m2 = tape.square(post.mean);
    let s2 = tape.square(post.std);
    let ln = tape.ln(s2);
    let a = tape.sum(m2);
    let b = tape.sum(s2);
    let c = tape.sum(ln);
    let ab = tape.add(a, b);
    let abc = tape.sub(ab, c);
    let half = tape.scale(abc, 0.5);
    let count = tape.value(post.mean).len() as f64;
    let offset = tape.scalar(-0.5 * count);
    tape.add(half, offset)
}

pub fn gaussian_kl_value(post: &GaussianPosterior) -> f64 {
    post.mean
        .data()
        .iter()
        .zip(post.std.data())
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

/// `Σ_t ‖x_t − x̂_t‖² / (2σ_c²)` plus the KL term. Returns the scalar total
/// and the breakdown.
pub fn elbo_loss(
    tape: &mut Tape,
    truth: &[Tensor],
    pred: &[Var],
    post: PosteriorVars,
    obs_variance: f64,
) -> Result<(Var, LossBreakdown)> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} target frames but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if !(obs_variance > 0.0) {
        return Err(Error::Config("observation variance must be positive".into()));
    }
    let mut sq: Option<Var> = None;
    for (x, &xh) in truth.iter().zip(pred) {
        let (r, c) = tape.shape(xh);
        if x.shape() != [r, c] {
            return Err(Error::Shape(format!(
                "target {:?} vs prediction [{r}, {c}]",
                x.shape()
            )));
        }
        let xv = tape.constant(x.clone());
        let diff = tape.sub(xh, xv);
        let d2 = tape.square(diff);
        let s = tape.sum(d2);
        sq = Some(match sq {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    let recon = match sq {
        Some(s) => tape.scale(s, 1.0 / (2.0 * obs_variance)),
        None => tape.scalar(0.0),
    };
    let kl = gaussian_kl(tape, post);
    let total = tape.add(recon, kl);
    let breakdown = LossBreakdown {
        recon: tape.value(recon).data()[0],
        kl: tape.value(kl).data()[0],
        total: tape.value(total).data()[0],
    };
    Ok((total, breakdown))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Running sums behind [`Metrics`].
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricsAccumulator {
    sq: f64,
    abs: f64,
    count: usize,
}

impl MetricsAccumulator {
    pub fn add(&mut self, truth: &[f64], pred: &[f64]) {
        debug_assert_eq!(truth.len(), pred.len());
        for (x, y) in truth.iter().zip(pred) {
            let e = x - y;
            self.sq += e * e;
            self.abs += e.abs();
        }
        self.count += truth.len();
    }

    pub fn merge(&mut self, other: &Self) {
        self.sq += other.sq;
        self.abs += other.abs;
        self.count += other.count;
    }

    pub fn finish(&self) -> Metrics {
        let n = self.count.max(1) as f64;
        Metrics {
            mse: self.sq / n,
            mae: self.abs / n,
        }
    }
}

/// Mean squared and mean absolute error over matching flat arrays.
pub fn metrics(truth: &[f64], pred: &[f64]) -> Result<Metrics> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "metrics over {} and {} values",
            truth.len(),
            pred.len()
        )));
    }
    let mut acc = MetricsAccumulator::default();
    acc.add(truth, pred);
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn post(tape: &mut Tape, mean: Tensor, std: Tensor) -> PosteriorVars {
        PosteriorVars {
            mean: tape.constant(mean),
            std: tape.constant(std),
        }
    }

    #[test]
    fn kl_closed_form_cases() {
        let mut tape = Tape::new();
        let p = post(&mut tape, Tensor::zeros(&[2, 3]), Tensor::filled(&[2, 3], 1.0));
        let kl = gaussian_kl(&mut tape, p);
        assert_eq!(tape.value(kl).data()[0], 0.0);
        let p = post(&mut tape, Tensor::scalar(1.0), Tensor::scalar(1.0));
        let kl = gaussian_kl(&mut tape, p);
        assert!((tape.value(kl).data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = rng_from_seed(77);
        for _ in 0..3 {
            let mean = Tensor::new(vec![1, 3], (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap();
            let std = Tensor::new(vec![1, 3], (0..3).map(|_| rng.gen_range(0.3..2.0)).collect()).unwrap();
            let exact = gaussian_kl_value(&GaussianPosterior { mean: mean.clone(), std: std.clone() });
            let n = 200_000;
            let mut acc = 0.0;
            for _ in 0..n {
                for (m, s) in mean.data().iter().zip(std.data()) {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let z = m + s * e;
                    acc += -0.5 * e * e - s.ln() + 0.5 * z * z;
                }
            }
            let mc = acc / n as f64;
            assert!((mc - exact).abs() < 0.02 * exact.max(0.1), "{mc} vs {exact}");
        }
    }

    #[test]
    fn elbo_examples() {
        let truth = vec![Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()];
        let mut tape = Tape::new();
        let p = post(&mut tape, Tensor::zeros(&[1, 2]), Tensor::filled(&[1, 2], 1.0));
        let exact = tape.constant(truth[0].clone());
        let (_, b) = elbo_loss(&mut tape, &truth, &[exact], p, 1.0).unwrap();
        assert_eq!(b.total, 0.0);

        let off = tape.constant(Tensor::from_rows(&[vec![2.0, 2.0]]).unwrap());
        let (_, b1) = elbo_loss(&mut tape, &truth, &[off], p, 1.0).unwrap();
        assert_eq!((b1.recon, b1.kl, b1.total), (0.5, 0.0, 0.5));
        let (_, b2) = elbo_loss(&mut tape, &truth, &[off], p, 2.0).unwrap();
        assert_eq!(b2.recon, b1.recon / 2.0);

        assert!(matches!(elbo_loss(&mut tape, &truth, &[], p, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn decoder_identity_and_bias() {
        let mut store = ParamStore::new();
        let dec = Decoder::build(&mut store, 4, 0, 4, &mut rng_from_seed(1)).unwrap();
        let (w, b) = dec.net.layers[0];
        store.block_mut(w).value = Tensor::identity(4);
        let z = Tensor::from_rows(&[vec![0.1, -2.0, 3.0, 0.5], vec![1.0, 1.0, -1.0, 0.0]]).unwrap();
        assert_eq!(dec.decode_value(&store, &z).unwrap(), z);
        store.block_mut(w).value = Tensor::zeros(&[4, 4]);
        store.block_mut(b).value = Tensor::row(&[1.0, 2.0, 3.0, 4.0]);
        let out = dec.decode_value(&store, &z).unwrap();
        for r in 0..2 {
            assert_eq!(out.row_slice(r), &[1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn decoder_commutes_with_node_permutation() {
        let mut store = ParamStore::new();
        let dec = Decoder::build(&mut store, 4, 6, 3, &mut rng_from_seed(2)).unwrap();
        let mut rng = rng_from_seed(3);
        let z = Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let perm = [2, 0, 1];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| z.row_slice(p).to_vec()).collect();
        let pz = Tensor::from_rows(&rows).unwrap();
        let x = dec.decode_value(&store, &z).unwrap();
        let px = dec.decode_value(&store, &pz).unwrap();
        for (r, &p) in perm.iter().enumerate() {
            assert_eq!(px.row_slice(r), x.row_slice(p));
        }
    }

    #[test]
    fn metric_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(metrics(&x, &x).unwrap(), Metrics { mse: 0.0, mae: 0.0 });
        let y: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        let m = metrics(&x, &y).unwrap();
        assert!((m.mse - 0.01).abs() < 1e-12 && (m.mae - 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(m in prop::collection::vec(-3.0f64..3.0, 6), s in prop::collection::vec(1e-3f64..5.0, 6)) {
            let p = GaussianPosterior {
                mean: Tensor::new(vec![2, 3], m).unwrap(),
                std: Tensor::new(vec![2, 3], s).unwrap(),
            };
            prop_assert!(gaussian_kl_value(&p) >= 0.0);
        }

        #[test]
        fn mse_dominates_squared_mae(x in prop::collection::vec(-10.0f64..10.0, 1..40), seed in 0u64..1000) {
            let mut rng = rng_from_seed(seed);
            let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-2.0..2.0)).collect();
            let m = metrics(&x, &y).unwrap();
            prop_assert!(m.mse + 1e-12 >= m.mae * m.mae);
        }

        #[test]
        fn metrics_ignore_node_order(x in prop::collection::vec(-5.0f64..5.0, 12), y in prop::collection::vec(-5.0f64..5.0, 12)) {
            let perm = [2usize, 0, 3, 1];
            let permute = |v: &[f64]| -> Vec<f64> { perm.iter().flat_map(|&p| v[p * 3..p * 3 + 3].to_vec()).collect() };
            let a = metrics(&x, &y).unwrap();
            let b = metrics(&permute(&x), &permute(&y)).unwrap();
            prop_assert!((a.mse - b.mse).abs() < 1e-12 && (a.mae - b.mae).abs() < 1e-12);
        }
    }
}
