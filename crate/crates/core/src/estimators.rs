//! Zeroth-order gradient estimators.
//!
//! The LOREN estimators follow the ε-free covariance convention: perturbation
//! `k` evaluates `f(x + ε w_k)` with `w_k = Σ^{1/2} u_k`, and
//!
//! ```text
//! g(x) = (1/ε) Σ_k c_k w_k
//! g(a) = Σ_k c_k ∇_a log p(x + w_k)
//! c_k  = (f_k − mean f) / (K − 1)
//! ```
//!
//! Reductions over `k` always run in ascending order so results do not depend
//! on how the `f_k` were scheduled.

use crate::covariance::CovarianceState;
use crate::error::{LorenError, Result};
use crate::params::ParameterLayout;
use crate::streams::{fill_gaussian, StreamCoord};

/// Regenerable perturbation: `u` for layer `l` is the Gaussian stream at
/// `(master_seed, step, pass, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerturbationHandle {
    pub master_seed: u64,
    pub step: u64,
    pub pass: u64,
}

impl PerturbationHandle {
    pub fn coord(&self, layer: usize) -> StreamCoord {
        StreamCoord::new(self.master_seed, self.step, self.pass, layer as u64)
    }

    /// Writes block `block` (of size `out.len()`) of the isotropic `u` for `layer`.
    pub fn fill_block(&self, layer: usize, block: usize, out: &mut [f64]) {
        let offset = (block * out.len()) as u64;
        fill_gaussian(self.coord(layer).with_offset(offset), out);
    }

    /// Writes `w = Σ^{1/2} u` for a whole layer into `out`.
    pub fn fill_scaled(&self, layer: usize, cov: &CovarianceState, out: &mut [f64]) {
        fill_gaussian(self.coord(layer), out);
        for block in out.chunks_exact_mut(cov.block_size()) {
            cov.sqrt_block_in_place(block);
        }
    }
}

/// `K` function values with the perturbations that produced them.
#[derive(Debug, Clone)]
pub struct EvalBundle {
    pub f_values: Vec<f64>,
    pub epsilon: f64,
    pub perturbations: Vec<PerturbationHandle>,
}

impl EvalBundle {
    fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.f_values.len() < 2 {
            return Err(LorenError::TooFewSamples {
                required: 2,
                got: self.f_values.len(),
            });
        }
        if self.f_values.len() != self.perturbations.len() {
            return Err(LorenError::LengthMismatch {
                expected: self.f_values.len(),
                got: self.perturbations.len(),
            });
        }
        Ok(())
    }
}

/// Per-layer update directions for `x` and `a`, with the weights used.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub x: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(LorenError::Config(format!("epsilon must be positive, got {epsilon}")))
    }
}

/// `((f₊ − f₋) / 2ε) u`.
pub fn spsa_central(f_plus: f64, f_minus: f64, epsilon: f64, u: &[f64]) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    let c = (f_plus - f_minus) / (2.0 * epsilon);
    Ok(u.iter().map(|v| c * v).collect())
}

/// One sample of the Gaussian-smoothed gradient for `u ~ N(0, Σ)`:
/// `((f₊ − f₋) / 2ε) Σ⁻¹ u`.
pub fn smoothed_grad_sample(
    f_plus: f64,
    f_minus: f64,
    epsilon: f64,
    u: &[f64],
    cov: &CovarianceState,
) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    let c = (f_plus - f_minus) / (2.0 * epsilon);
    let mut out = cov.apply_precision(u)?;
    out.iter_mut().for_each(|v| *v *= c);
    Ok(out)
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Leave-one-out weights `c_k = (f_k − mean f) / (K − 1)`.
pub fn rloo_weights(f_values: &[f64]) -> Result<Vec<f64>> {
    let k = f_values.len();
    if k < 2 {
        return Err(LorenError::TooFewSamples { required: 2, got: k });
    }
    let mean = compensated_sum(f_values.iter().copied()) / k as f64;
    let denom = (k - 1) as f64;
    Ok(f_values.iter().map(|f| (f - mean) / denom).collect())
}

/// Streams the LOREN estimate for one layer.
///
/// For every block `i`, regenerates `w_{k,i}` for all `k`, hands
/// `Σ_k (c_k/ε) w_{k,i}` to `on_block`, and folds the block into the
/// returned `a`-gradient. Transient storage is two block-sized buffers.
pub fn stream_layer_estimate(
    cov: &CovarianceState,
    layer: usize,
    handles: &[PerturbationHandle],
    coefficients: &[f64],
    epsilon: f64,
    mut on_block: impl FnMut(usize, &[f64]),
) -> Vec<f64> {
    let n = cov.block_size();
    let offset = cov.score_offset();
    let mut grad_a = vec![0.0; n];
    for &c in coefficients {
        for (g, o) in grad_a.iter_mut().zip(&offset) {
            *g += c * o;
        }
    }
    let mut w = vec![0.0; n];
    let mut gx = vec![0.0; n];
    for block in 0..cov.block_count() {
        gx.iter_mut().for_each(|v| *v = 0.0);
        for (h, &c) in handles.iter().zip(coefficients) {
            h.fill_block(layer, block, &mut w);
            cov.sqrt_block_in_place(&mut w);
            let cx = c / epsilon;
            for (g, wi) in gx.iter_mut().zip(&w) {
                *g += cx * wi;
            }
            cov.accumulate_score_block(&w, c, &mut grad_a);
        }
        on_block(block, &gx);
    }
    grad_a
}

/// Both LOREN estimates for every layer.
pub fn loren_estimate(bundle: &EvalBundle, covs: &[CovarianceState]) -> Result<GradientEstimate> {
    bundle.validate()?;
    let coefficients = rloo_weights(&bundle.f_values)?;
    let mut x = Vec::with_capacity(covs.len());
    let mut a = Vec::with_capacity(covs.len());
    for (layer, cov) in covs.iter().enumerate() {
        let n = cov.block_size();
        let mut gx = vec![0.0; cov.numel()];
        let ga = stream_layer_estimate(cov, layer, &bundle.perturbations, &coefficients, bundle.epsilon, |b, blk| {
            gx[b * n..(b + 1) * n].copy_from_slice(blk);
        });
        x.push(gx);
        a.push(ga);
    }
    Ok(GradientEstimate { x, a, coefficients })
}

/// `g(x) = (1/ε) Σ_k c_k Σ^{1/2} u_k`, per layer.
pub fn loren_grad_x(bundle: &EvalBundle, covs: &[CovarianceState]) -> Result<Vec<Vec<f64>>> {
    loren_estimate(bundle, covs).map(|e| e.x)
}

/// `g(a) = Σ_k c_k ∇_a log p(x + Σ^{1/2} u_k)`, per layer.
pub fn loren_grad_a(bundle: &EvalBundle, covs: &[CovarianceState]) -> Result<Vec<Vec<f64>>> {
    loren_estimate(bundle, covs).map(|e| e.a)
}

/// Isotropic RLOO estimate `(1/(ε(K−1))) Σ_k (f_k − mean f) u_k` over explicit directions.
pub fn rloo_isotropic(f_values: &[f64], epsilon: f64, dirs: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    let c = rloo_weights(f_values)?;
    Ok(weighted_sum(&c, 1.0 / epsilon, dirs))
}

/// Mean of one-sided estimates `((f_k − f₀)/ε) u_k` sharing one `f₀ = f(x)`.
pub fn forward_difference_mean(f0: f64, f_values: &[f64], epsilon: f64, dirs: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    if f_values.is_empty() {
        return Err(LorenError::TooFewSamples { required: 1, got: 0 });
    }
    let c: Vec<f64> = f_values.iter().map(|f| f - f0).collect();
    Ok(weighted_sum(&c, 1.0 / (epsilon * f_values.len() as f64), dirs))
}

/// Mean of central SPSA samples, one per `(f₊, f₋, u)` triple.
pub fn central_difference_mean(f_pairs: &[(f64, f64)], epsilon: f64, dirs: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    if f_pairs.is_empty() {
        return Err(LorenError::TooFewSamples { required: 1, got: 0 });
    }
    let c: Vec<f64> = f_pairs.iter().map(|(p, m)| p - m).collect();
    Ok(weighted_sum(&c, 1.0 / (2.0 * epsilon * f_pairs.len() as f64), dirs))
}

fn weighted_sum(c: &[f64], scale: f64, dirs: &[Vec<f64>]) -> Vec<f64> {
    let d = dirs.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (ck, u) in c.iter().zip(dirs) {
        let w = ck * scale;
        for (o, ui) in out.iter_mut().zip(u) {
            *o += w * ui;
        }
    }
    out
}

/// Per-layer covariances for a layout, all with the same damping.
pub fn covariances_for(layout: &ParameterLayout, rho: f64, init_scale: f64, master_seed: u64) -> Result<Vec<CovarianceState>> {
    layout
        .shapes()
        .iter()
        .enumerate()
        .map(|(l, &shape)| CovarianceState::new(shape, rho, init_scale, StreamCoord::new(master_seed, u64::MAX, 0, l as u64)))
        .collect()
}
