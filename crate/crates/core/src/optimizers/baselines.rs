use std::time::Instant;

use super::{check_finite, check_positive, evaluate_perturbed, mean, Optimizer, RunRecord};
use crate::error::{LorenError, Result};
use crate::estimators::{rloo_weights, PerturbationHandle};
use crate::objectives::{BatchSpec, Objective};
use crate::params::{ParameterLayout, ParameterSet};
use crate::streams::fill_gaussian;

#[derive(Debug, Clone, PartialEq)]
pub struct ZoSgdConfig {
    pub eta: f64,
    pub epsilon: f64,
    /// Central samples per step (two passes each), or RLOO passes when `use_rloo`.
    pub k: usize,
    pub use_rloo: bool,
    pub master_seed: u64,
}

impl Default for ZoSgdConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            epsilon: 1e-3,
            k: 1,
            use_rloo: false,
            master_seed: 0,
        }
    }
}

impl ZoSgdConfig {
    fn validate(&self) -> Result<()> {
        check_positive("epsilon", self.epsilon)?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(LorenError::Config(format!("eta must be non-negative, got {}", self.eta)));
        }
        let min = if self.use_rloo { 2 } else { 1 };
        if self.k < min {
            return Err(LorenError::Config(format!("K must be at least {min}, got {}", self.k)));
        }
        Ok(())
    }

    fn passes(&self) -> u64 {
        if self.use_rloo { self.k as u64 } else { 2 * self.k as u64 }
    }
}

/// Isotropic zeroth-order estimate at `params` and the losses behind it.
fn isotropic_estimate(
    cfg: &ZoSgdConfig,
    step: u64,
    params: &ParameterSet,
    objective: &dyn Objective,
    batch: &BatchSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = params.layout();
    if layout != objective.layout() {
        return Err(LorenError::Config(format!("parameters do not match objective `{}`", objective.name())));
    }
    let handles: Vec<PerturbationHandle> = (1..=cfg.k as u64)
        .map(|pass| PerturbationHandle { master_seed: cfg.master_seed, step, pass })
        .collect();
    let fill_u = |h: &PerturbationHandle, layout: &ParameterLayout, z: &mut [f64]| {
        for l in 0..layout.num_layers() {
            fill_gaussian(h.coord(l), &mut z[layout.range(l)]);
        }
    };

    let (f_values, coefficients) = if cfg.use_rloo {
        let scale = vec![cfg.epsilon; cfg.k];
        let f = evaluate_perturbed(params, objective, batch, &scale, |k, z| fill_u(&handles[k], layout, z));
        check_finite(&f, step)?;
        let c: Vec<f64> = rloo_weights(&f)?.into_iter().map(|c| c / cfg.epsilon).collect();
        (f, c)
    } else {
        let scale: Vec<f64> = (0..2 * cfg.k).map(|i| if i % 2 == 0 { cfg.epsilon } else { -cfg.epsilon }).collect();
        let f = evaluate_perturbed(params, objective, batch, &scale, |i, z| fill_u(&handles[i / 2], layout, z));
        check_finite(&f, step)?;
        let denom = 2.0 * cfg.epsilon * cfg.k as f64;
        let c = f.chunks_exact(2).map(|p| (p[0] - p[1]) / denom).collect();
        (f, c)
    };

    let mut grad = vec![0.0; layout.total_len()];
    let mut u = vec![0.0; grad.len()];
    for (h, &c) in handles.iter().zip(&coefficients) {
        fill_u(h, layout, &mut u);
        for (g, ui) in grad.iter_mut().zip(&u) {
            *g += c * ui;
        }
    }
    Ok((grad, f_values))
}

/// MeZO-style ZO-SGD with isotropic Gaussian perturbations.
#[derive(Debug, Clone)]
pub struct ZoSgd {
    config: ZoSgdConfig,
    step: u64,
    passes: u64,
}

impl ZoSgd {
    pub fn new(config: ZoSgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, step: 0, passes: 0 })
    }

    pub fn config(&self) -> &ZoSgdConfig {
        &self.config
    }

    /// The gradient estimate the next step would use.
    pub fn estimate(&self, params: &ParameterSet, objective: &dyn Objective, batch: &BatchSpec) -> Result<Vec<f64>> {
        isotropic_estimate(&self.config, self.step, params, objective, batch).map(|(g, _)| g)
    }
}

impl Optimizer for ZoSgd {
    fn name(&self) -> &'static str {
        "zosgd"
    }

    fn passes_per_step(&self) -> u64 {
        self.config.passes()
    }

    fn step(&mut self, params: &mut ParameterSet, objective: &dyn Objective, batch: &BatchSpec) -> Result<RunRecord> {
        let start = Instant::now();
        let (grad, f) = isotropic_estimate(&self.config, self.step, params, objective, batch)?;
        let mut norm_sq = 0.0;
        for (x, g) in params.as_mut_slice().iter_mut().zip(&grad) {
            let d = self.config.eta * g;
            *x -= d;
            norm_sq += d * d;
        }
        self.step += 1;
        self.passes += self.passes_per_step();
        Ok(RunRecord {
            step: self.step,
            mean_loss: mean(&f),
            x_update_norm: norm_sq.sqrt(),
            a_update_norm: 0.0,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            forward_passes: self.passes,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoAdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub estimator: ZoSgdConfig,
}

impl Default for ZoAdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            estimator: ZoSgdConfig::default(),
        }
    }
}

/// ZO-SGD estimates fed through Adam moment accumulation with bias correction.
#[derive(Debug, Clone)]
pub struct ZoAdam {
    config: ZoAdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    passes: u64,
}

impl ZoAdam {
    pub fn new(config: ZoAdamConfig, layout: &ParameterLayout) -> Result<Self> {
        config.estimator.validate()?;
        check_positive("lr", config.lr)?;
        check_positive("adam_eps", config.adam_eps)?;
        let (b1, b2) = config.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(LorenError::Config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        let d = layout.total_len();
        Ok(Self { config, m: vec![0.0; d], v: vec![0.0; d], step: 0, passes: 0 })
    }

    /// One Adam update from an externally supplied gradient.
    pub fn apply_gradient(&mut self, params: &mut ParameterSet, grad: &[f64]) -> Result<f64> {
        if grad.len() != self.m.len() {
            return Err(LorenError::LengthMismatch { expected: self.m.len(), got: grad.len() });
        }
        let (b1, b2) = self.config.betas;
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut norm_sq = 0.0;
        for (((x, m), v), g) in params.as_mut_slice().iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grad) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let d = self.config.lr * (*m / c1) / ((*v / c2).sqrt() + self.config.adam_eps);
            *x -= d;
            norm_sq += d * d;
        }
        self.step += 1;
        Ok(norm_sq.sqrt())
    }
}

impl Optimizer for ZoAdam {
    fn name(&self) -> &'static str {
        "zoadam"
    }

    fn passes_per_step(&self) -> u64 {
        self.config.estimator.passes()
    }

    fn step(&mut self, params: &mut ParameterSet, objective: &dyn Objective, batch: &BatchSpec) -> Result<RunRecord> {
        let start = Instant::now();
        let (grad, f) = isotropic_estimate(&self.config.estimator, self.step, params, objective, batch)?;
        let norm = self.apply_gradient(params, &grad)?;
        self.passes += self.passes_per_step();
        Ok(RunRecord {
            step: self.step,
            mean_loss: mean(&f),
            x_update_norm: norm,
            a_update_norm: 0.0,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            forward_passes: self.passes,
        })
    }
}

/// Plain gradient descent on the analytic gradient.
#[derive(Debug, Clone)]
pub struct FoSgd {
    eta: f64,
    step: u64,
}

impl FoSgd {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(LorenError::Config(format!("eta must be non-negative, got {eta}")));
        }
        Ok(Self { eta, step: 0 })
    }
}

impl Optimizer for FoSgd {
    fn name(&self) -> &'static str {
        "fosgd"
    }

    fn passes_per_step(&self) -> u64 {
        1
    }

    fn step(&mut self, params: &mut ParameterSet, objective: &dyn Objective, batch: &BatchSpec) -> Result<RunRecord> {
        let start = Instant::now();
        let grad = objective
            .gradient(params.as_slice(), batch)
            .ok_or_else(|| LorenError::MissingGradient(objective.name().to_string()))?;
        if grad.len() != params.as_slice().len() {
            return Err(LorenError::LengthMismatch { expected: params.as_slice().len(), got: grad.len() });
        }
        let loss = objective.evaluate(params.as_slice(), batch);
        check_finite(&[loss], self.step)?;
        let mut norm_sq = 0.0;
        for (x, g) in params.as_mut_slice().iter_mut().zip(&grad) {
            let d = self.eta * g;
            *x -= d;
            norm_sq += d * d;
        }
        self.step += 1;
        Ok(RunRecord {
            step: self.step,
            mean_loss: loss,
            x_update_norm: norm_sq.sqrt(),
            a_update_norm: 0.0,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            forward_passes: self.step,
        })
    }
}
