//! Mean squared error of single gradient estimates at a fixed point.

use anyhow::{anyhow, Result};
use loren_core::estimators::{central_difference_mean, forward_difference_mean, rloo_isotropic, PerturbationHandle};
use loren_core::objectives::{Rastrigin, Rosenbrock, Sphere};
use loren_core::streams::fill_gaussian;
use loren_core::{BatchSpec, Objective};
use rayon::prelude::*;

use crate::config::{Comparator, ExperimentConfig};
use crate::output::{float, render_csv};

pub const HEADER: [&str; 4] = ["function", "method", "trial", "mse"];

/// Stream layer tag for the comparator's directions, so the two estimators
/// never share perturbations.
const VANILLA_TAG: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseSettings {
    pub trials: u64,
    pub k: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub comparator: Comparator,
}

/// Per-trial MSE of the RLOO and comparator estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct MseResult {
    pub rloo: Vec<f64>,
    pub vanilla: Vec<f64>,
}

impl MseResult {
    pub fn mean_rloo(&self) -> f64 {
        mean(&self.rloo)
    }

    pub fn mean_vanilla(&self) -> f64 {
        mean(&self.vanilla)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn build_function(name: &str, dim: usize) -> Result<Box<dyn Objective>> {
    Ok(match name {
        "sphere" => Box::new(Sphere::new(dim)?),
        "rastrigin" => Box::new(Rastrigin::new(dim)?),
        "rosenbrock" => Box::new(Rosenbrock::new(dim)?),
        other => return Err(anyhow!("unknown function `{other}`")),
    })
}

/// The point every estimate is taken at.
pub fn benchmark_point(dim: usize) -> Vec<f64> {
    vec![0.5; dim]
}

fn directions(handles: &[PerturbationHandle], tag: usize, d: usize) -> Vec<Vec<f64>> {
    handles
        .iter()
        .map(|h| {
            let mut u = vec![0.0; d];
            fill_gaussian(h.coord(tag), &mut u);
            u
        })
        .collect()
}

fn shifted(x: &[f64], eps: f64, u: &[f64]) -> Vec<f64> {
    x.iter().zip(u).map(|(xi, ui)| xi + eps * ui).collect()
}

fn sq_err(est: &[f64], grad: &[f64]) -> f64 {
    est.iter().zip(grad).map(|(e, g)| (e - g) * (e - g)).sum::<f64>() / grad.len() as f64
}

pub fn mse_trials(objective: &dyn Objective, x: &[f64], settings: &MseSettings) -> Result<MseResult> {
    let d = x.len();
    let batch = BatchSpec::Full;
    let grad = objective
        .gradient(x, &batch)
        .ok_or_else(|| anyhow!("objective `{}` has no analytic gradient", objective.name()))?;
    let MseSettings { k, epsilon: eps, seed, comparator, .. } = *settings;
    let pairs: Vec<(f64, f64)> = (0..settings.trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let handles: Vec<PerturbationHandle> =
                (1..=k as u64).map(|pass| PerturbationHandle { master_seed: seed, step: t, pass }).collect();

            let u = directions(&handles, 0, d);
            let f: Vec<f64> = u.iter().map(|uk| objective.evaluate(&shifted(x, eps, uk), &batch)).collect();
            let rloo = rloo_isotropic(&f, eps, &u)?;

            let vanilla = match comparator {
                Comparator::Central => {
                    let v = directions(&handles[..k / 2], VANILLA_TAG, d);
                    let fp: Vec<(f64, f64)> = v
                        .iter()
                        .map(|vj| {
                            (
                                objective.evaluate(&shifted(x, eps, vj), &batch),
                                objective.evaluate(&shifted(x, -eps, vj), &batch),
                            )
                        })
                        .collect();
                    central_difference_mean(&fp, eps, &v)?
                }
                Comparator::Forward => {
                    let v = directions(&handles, VANILLA_TAG, d);
                    let f0 = objective.evaluate(x, &batch);
                    let fv: Vec<f64> = v.iter().map(|vk| objective.evaluate(&shifted(x, eps, vk), &batch)).collect();
                    forward_difference_mean(f0, &fv, eps, &v)?
                }
            };
            Ok((sq_err(&rloo, &grad), sq_err(&vanilla, &grad)))
        })
        .collect::<Result<_>>()?;
    Ok(MseResult {
        rloo: pairs.iter().map(|p| p.0).collect(),
        vanilla: pairs.iter().map(|p| p.1).collect(),
    })
}

pub fn settings(cfg: &ExperimentConfig) -> MseSettings {
    MseSettings {
        trials: cfg.trials,
        k: cfg.k,
        epsilon: cfg.eps,
        seed: cfg.seed,
        comparator: cfg.comparator,
    }
}

/// Runs every configured function and renders the CSV.
pub fn run_mse(cfg: &ExperimentConfig) -> Result<(Vec<u8>, Vec<(String, MseResult)>)> {
    let s = settings(cfg);
    let x = benchmark_point(cfg.dim);
    let mut results = Vec::new();
    for name in &cfg.functions {
        let f = build_function(name, cfg.dim)?;
        results.push((name.clone(), mse_trials(f.as_ref(), &x, &s)?));
    }
    let mut rows = Vec::new();
    for (name, r) in &results {
        for (method, values) in [("rloo", &r.rloo), ("vanilla", &r.vanilla)] {
            for (t, v) in values.iter().enumerate() {
                rows.push(vec![name.clone(), method.to_string(), t.to_string(), float(*v)]);
            }
        }
    }
    for (name, r) in &results {
        rows.push(vec![name.clone(), "rloo".into(), "mean".into(), float(r.mean_rloo())]);
        rows.push(vec![name.clone(), "vanilla".into(), "mean".into(), float(r.mean_vanilla())]);
    }
    Ok((render_csv(&cfg.echo(), &HEADER, rows)?, results))
}
