//! Two-layer perceptron on a synthetic two-class Gaussian mixture.
//!
//! Class 0 sits at `±r·e_a`, class 1 at `±r·e_b` for orthonormal `e_a, e_b`,
//! so no linear classifier beats chance and the hidden layer has to learn.
//!
//! Layers, in storage order: `W1` (32×16), `b1` (32), `W2` (2×32), `b2` (2).
//! Hidden activation is tanh; the loss is mean softmax cross-entropy.

use super::{BatchSpec, Objective};
use crate::params::{LayerShape, ParameterLayout, ParameterSet};
use crate::streams::{fill_gaussian, StreamCoord};

pub const MLP_INPUTS: usize = 16;
pub const MLP_HIDDEN: usize = 32;
pub const MLP_SAMPLES: usize = 512;
pub const MLP_BATCH: usize = 64;
const CLASSES: usize = 2;
/// Distance of each cluster mean from the origin.
const CLASS_OFFSET: f64 = 3.0;

// stream tags for the dataset and the initial weights
const DATA_STEP: u64 = u64::MAX - 1;
const INIT_STEP: u64 = u64::MAX - 2;

/// Two orthonormal directions by Gram-Schmidt on Gaussian draws.
fn cluster_axes(seed: u64) -> [[f64; MLP_INPUTS]; 2] {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut e = [[0.0; MLP_INPUTS]; 2];
    fill_gaussian(StreamCoord::new(seed, DATA_STEP, 0, 0), &mut e[0]);
    fill_gaussian(StreamCoord::new(seed, DATA_STEP, 0, 1), &mut e[1]);
    let n0 = dot(&e[0], &e[0]).sqrt();
    e[0].iter_mut().for_each(|v| *v /= n0);
    let p = dot(&e[0], &e[1]);
    let e0 = e[0];
    e[1].iter_mut().zip(&e0).for_each(|(v, a)| *v -= p * a);
    let n1 = dot(&e[1], &e[1]).sqrt();
    e[1].iter_mut().for_each(|v| *v /= n1);
    e
}

#[derive(Debug, Clone)]
pub struct MlpToy {
    seed: u64,
    layout: ParameterLayout,
    inputs: Vec<[f64; MLP_INPUTS]>,
    labels: Vec<usize>,
}

struct Forward {
    hidden: [f64; MLP_HIDDEN],
    probs: [f64; CLASSES],
    loss: f64,
}

impl MlpToy {
    pub fn new(seed: u64) -> Self {
        let layout = ParameterLayout::new(vec![
            LayerShape::Matrix {
                rows: MLP_HIDDEN,
                cols: MLP_INPUTS,
            },
            LayerShape::Vector { len: MLP_HIDDEN },
            LayerShape::Matrix {
                rows: CLASSES,
                cols: MLP_HIDDEN,
            },
            LayerShape::Vector { len: CLASSES },
        ])
        .expect("static layout");

        let means = cluster_axes(seed);

        let mut inputs = Vec::with_capacity(MLP_SAMPLES);
        let mut labels = Vec::with_capacity(MLP_SAMPLES);
        for i in 0..MLP_SAMPLES {
            let label = i % 2;
            let sign = if (i / 2) % 2 == 0 { CLASS_OFFSET } else { -CLASS_OFFSET };
            let mut x = [0.0; MLP_INPUTS];
            fill_gaussian(StreamCoord::new(seed, DATA_STEP, 1, i as u64), &mut x);
            for (xi, mi) in x.iter_mut().zip(&means[label]) {
                *xi += sign * mi;
            }
            inputs.push(x);
            labels.push(label);
        }
        Self {
            seed,
            layout,
            inputs,
            labels,
        }
    }

    /// Glorot-style hidden weights, near-zero output weights, zero biases.
    pub fn initial_params(&self) -> ParameterSet {
        let mut p = ParameterSet::zeros(self.layout.clone());
        let w1 = p.layer_mut(0);
        fill_gaussian(StreamCoord::new(self.seed, INIT_STEP, 0, 0), w1);
        let s1 = 1.0 / (MLP_INPUTS as f64).sqrt();
        w1.iter_mut().for_each(|v| *v *= s1);
        let w2 = p.layer_mut(2);
        fill_gaussian(StreamCoord::new(self.seed, INIT_STEP, 0, 2), w2);
        let s2 = 0.1 / (MLP_HIDDEN as f64).sqrt();
        w2.iter_mut().for_each(|v| *v *= s2);
        p
    }

    pub fn inputs(&self) -> &[[f64; MLP_INPUTS]] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn forward(&self, params: &[f64], i: usize) -> Forward {
        let (w1, rest) = params.split_at(MLP_HIDDEN * MLP_INPUTS);
        let (b1, rest) = rest.split_at(MLP_HIDDEN);
        let (w2, b2) = rest.split_at(CLASSES * MLP_HIDDEN);
        let x = &self.inputs[i];
        let mut hidden = [0.0; MLP_HIDDEN];
        for (h, (row, b)) in hidden.iter_mut().zip(w1.chunks_exact(MLP_INPUTS).zip(b1)) {
            *h = (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).tanh();
        }
        let mut logits = [0.0; CLASSES];
        for (z, (row, b)) in logits.iter_mut().zip(w2.chunks_exact(MLP_HIDDEN).zip(b2)) {
            *z = row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + b;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let mut probs = [0.0; CLASSES];
        for (p, z) in probs.iter_mut().zip(&logits) {
            *p = (z - lse).exp();
        }
        Forward {
            hidden,
            probs,
            loss: lse - logits[self.labels[i]],
        }
    }

    fn indices<'a>(&'a self, batch: &'a BatchSpec) -> Box<dyn Iterator<Item = usize> + 'a> {
        match batch {
            BatchSpec::Full => Box::new(0..self.inputs.len()),
            BatchSpec::Indices(idx) => Box::new(idx.iter().copied()),
        }
    }
}

impl Objective for MlpToy {
    fn name(&self) -> &str {
        "mlp"
    }

    fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    fn evaluate(&self, params: &[f64], batch: &BatchSpec) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in self.indices(batch) {
            total += self.forward(params, i).loss;
            count += 1;
        }
        total / count.max(1) as f64
    }

    fn gradient(&self, params: &[f64], batch: &BatchSpec) -> Option<Vec<f64>> {
        let w2 = &params[MLP_HIDDEN * MLP_INPUTS + MLP_HIDDEN..][..CLASSES * MLP_HIDDEN];
        let mut grad = vec![0.0; params.len()];
        let (gw1, rest) = grad.split_at_mut(MLP_HIDDEN * MLP_INPUTS);
        let (gb1, rest) = rest.split_at_mut(MLP_HIDDEN);
        let (gw2, gb2) = rest.split_at_mut(CLASSES * MLP_HIDDEN);
        let mut count = 0usize;
        for i in self.indices(batch) {
            let fwd = self.forward(params, i);
            let x = &self.inputs[i];
            let mut dlogits = fwd.probs;
            dlogits[self.labels[i]] -= 1.0;
            let mut dhidden = [0.0; MLP_HIDDEN];
            for c in 0..CLASSES {
                gb2[c] += dlogits[c];
                for j in 0..MLP_HIDDEN {
                    gw2[c * MLP_HIDDEN + j] += dlogits[c] * fwd.hidden[j];
                    dhidden[j] += dlogits[c] * w2[c * MLP_HIDDEN + j];
                }
            }
            for j in 0..MLP_HIDDEN {
                let dpre = dhidden[j] * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
                gb1[j] += dpre;
                for (g, xi) in gw1[j * MLP_INPUTS..(j + 1) * MLP_INPUTS].iter_mut().zip(x) {
                    *g += dpre * xi;
                }
            }
            count += 1;
        }
        let inv = 1.0 / count.max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Some(grad)
    }

    fn dataset_len(&self) -> Option<usize> {
        Some(self.inputs.len())
    }
}

#[cfg(test)]
mod tests {
    use super::super::fd;
    use super::*;

    #[test]
    fn layer_blocks() {
        let mlp = MlpToy::new(0);
        let blocks: Vec<_> = mlp.layout().shapes().iter().map(|s| s.blocks()).collect();
        assert_eq!(blocks, vec![(32, 16), (1, 32), (2, 32), (1, 2)]);
        assert_eq!(mlp.layout().total_len(), 32 * 16 + 32 + 64 + 2);
    }

    #[test]
    fn initial_loss_near_ln2() {
        for seed in 0..10 {
            let mlp = MlpToy::new(seed);
            let loss = mlp.evaluate(mlp.initial_params().as_slice(), &BatchSpec::Full);
            assert!((loss - std::f64::consts::LN_2).abs() < 0.15, "seed {seed}: {loss}");
        }
    }

    #[test]
    fn deterministic_construction() {
        let a = MlpToy::new(7);
        let b = MlpToy::new(7);
        assert_eq!(a.inputs(), b.inputs());
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.initial_params(), b.initial_params());
        assert_ne!(MlpToy::new(8).inputs(), a.inputs());
        assert_eq!(a.labels().iter().filter(|&&l| l == 1).count(), MLP_SAMPLES / 2);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mlp = MlpToy::new(3);
        let params = mlp.initial_params();
        let batch = BatchSpec::sample(MLP_SAMPLES, MLP_BATCH, StreamCoord::new(3, 0, 0, 0));
        let g = mlp.gradient(params.as_slice(), &batch).unwrap();
        let want = fd::gradient5(&mlp, params.as_slice(), &batch, 1e-4);
        let err = fd::max_rel_err(&g, &want);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn first_order_sgd_learns_the_task() {
        let mlp = MlpToy::new(1);
        let mut p = mlp.initial_params();
        for t in 0..500 {
            let batch = BatchSpec::sample(MLP_SAMPLES, MLP_BATCH, StreamCoord::new(1, t, 0, 0));
            let g = mlp.gradient(p.as_slice(), &batch).unwrap();
            p.as_mut_slice().iter_mut().zip(&g).for_each(|(x, gi)| *x -= 0.5 * gi);
        }
        let loss = mlp.evaluate(p.as_slice(), &BatchSpec::Full);
        assert!(loss < 0.1, "{loss}");
    }
}
