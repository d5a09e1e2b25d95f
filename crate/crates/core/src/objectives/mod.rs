//! Stochastic objectives `f(x; ξ)`.

mod functions;
mod mlp;

pub use functions::{Constant, Linear, MonkeySaddle, Quadratic, Rastrigin, Rosenbrock, Sphere};
pub use mlp::{MlpToy, MLP_BATCH, MLP_HIDDEN, MLP_INPUTS, MLP_SAMPLES};

use crate::params::ParameterLayout;
use crate::streams::{uniform_below, StreamCoord};

/// Minibatch selector. Analytic test functions ignore it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchSpec {
    Full,
    Indices(Vec<usize>),
}

impl BatchSpec {
    /// `size` indices drawn uniformly (with replacement) from `0..len`.
    pub fn sample(len: usize, size: usize, coord: StreamCoord) -> Self {
        let idx = (0..size as u64)
            .map(|i| uniform_below(coord, i, len as u64) as usize)
            .collect();
        BatchSpec::Indices(idx)
    }
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn layout(&self) -> &ParameterLayout;

    /// Deterministic in `(params, batch)`.
    fn evaluate(&self, params: &[f64], batch: &BatchSpec) -> f64;

    /// Analytic gradient, when the objective has one.
    fn gradient(&self, _params: &[f64], _batch: &BatchSpec) -> Option<Vec<f64>> {
        None
    }

    /// Number of training examples, or `None` for data-free objectives.
    fn dataset_len(&self) -> Option<usize> {
        None
    }

    fn sample_batch(&self, size: usize, coord: StreamCoord) -> BatchSpec {
        match self.dataset_len() {
            Some(len) => BatchSpec::sample(len, size, coord),
            None => BatchSpec::Full,
        }
    }
}

#[cfg(test)]
pub(crate) mod fd {
    use super::*;

    /// Central finite-difference gradient with step `h`.
    pub fn gradient(obj: &dyn Objective, x: &[f64], batch: &BatchSpec, h: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                xp[i] = x[i] + h;
                let fp = obj.evaluate(&xp, batch);
                xp[i] = x[i] - h;
                let fm = obj.evaluate(&xp, batch);
                xp[i] = x[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    /// Five-point stencil; exact for polynomials up to degree four.
    pub fn gradient5(obj: &dyn Objective, x: &[f64], batch: &BatchSpec, h: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        let at = |i: usize, t: f64, xp: &mut Vec<f64>| {
            xp[i] = x[i] + t;
            let v = obj.evaluate(xp, batch);
            xp[i] = x[i];
            v
        };
        (0..x.len())
            .map(|i| {
                let f2 = at(i, 2.0 * h, &mut xp);
                let f1 = at(i, h, &mut xp);
                let m1 = at(i, -h, &mut xp);
                let m2 = at(i, -2.0 * h, &mut xp);
                (-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * h)
            })
            .collect()
    }

    pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        got.iter()
            .zip(want)
            .map(|(g, w)| (g - w).abs() / scale)
            .fold(0.0, f64::max)
    }
}
