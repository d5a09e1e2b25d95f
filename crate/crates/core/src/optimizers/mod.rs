//! Optimizers: LOREN and the ZO-SGD / ZO-Adam / FO-SGD baselines.

mod baselines;
mod loren;
mod theory;

pub use baselines::{FoSgd, ZoAdam, ZoAdamConfig, ZoSgd, ZoSgdConfig};
pub use loren::{LayerStorage, Loren, LorenConfig, S_MAX};
pub use theory::{theory_step_size, StepSizeDiagnostic};

use rayon::prelude::*;

use crate::error::{LorenError, Result};
use crate::objectives::{BatchSpec, Objective};
use crate::params::ParameterSet;

/// Telemetry for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: u64,
    /// Mean of the losses evaluated during the step.
    pub mean_loss: f64,
    pub x_update_norm: f64,
    pub a_update_norm: f64,
    pub elapsed_ms: f64,
    /// Cumulative forward passes including this step.
    pub forward_passes: u64,
}

/// Common interface so experiment harnesses can drive any optimizer.
pub trait Optimizer {
    fn name(&self) -> &'static str;

    fn step(&mut self, params: &mut ParameterSet, objective: &dyn Objective, batch: &BatchSpec) -> Result<RunRecord>;

    /// Forward passes consumed by one step.
    fn passes_per_step(&self) -> u64;
}

/// Evaluates `objective` at `params + ε·dir_k` for every `k`, in parallel,
/// returning values in `k` order. `fill(k, scratch)` writes the full
/// perturbation direction for evaluation `k`.
pub(crate) fn evaluate_perturbed<F>(
    params: &ParameterSet,
    objective: &dyn Objective,
    batch: &BatchSpec,
    scale: &[f64],
    fill: F,
) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let x = params.as_slice();
    (0..scale.len())
        .into_par_iter()
        .map(|k| {
            let mut z = vec![0.0; x.len()];
            fill(k, &mut z);
            let s = scale[k];
            for (zi, xi) in z.iter_mut().zip(x) {
                *zi = xi + s * *zi;
            }
            objective.evaluate(&z, batch)
        })
        .collect()
}

pub(crate) fn check_finite(values: &[f64], step: u64) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(pass) => Err(LorenError::NonFiniteLoss {
            step,
            pass,
            value: values[pass],
        }),
        None => Ok(()),
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(LorenError::Config(format!("{name} must be positive, got {v}")))
    }
}
