//! Training runs with per-step loss and forward-pass accounting.

use anyhow::{Context, Result};
use loren_core::objectives::{MlpToy, Rastrigin, Rosenbrock, Sphere};
use loren_core::streams::StreamCoord;
use loren_core::{BatchSpec, Objective, ParameterSet};

use crate::config::ExperimentConfig;
use crate::optimizers::{build, run_seed};
use crate::output::{float, render_csv};

pub const HEADER: [&str; 6] = ["optimizer", "seed", "step", "forward_passes", "loss", "elapsed_ms"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub optimizer: String,
    pub seed: u64,
    pub step: u64,
    pub forward_passes: u64,
    pub loss: f64,
    pub elapsed_ms: f64,
}

/// Objective and starting point for one run.
pub fn setup(cfg: &ExperimentConfig, seed: u64) -> Result<(Box<dyn Objective>, ParameterSet)> {
    let d = cfg.dim;
    let (obj, x0): (Box<dyn Objective>, Option<ParameterSet>) = match cfg.objective.as_str() {
        "sphere" => (Box::new(Sphere::new(d)?), None),
        "rastrigin" => (Box::new(Rastrigin::new(d)?), None),
        "rosenbrock" => (Box::new(Rosenbrock::new(d)?), None),
        "mlp" => {
            let mlp = MlpToy::new(seed);
            let p = mlp.initial_params();
            (Box::new(mlp), Some(p))
        }
        other => anyhow::bail!("unknown objective `{other}`"),
    };
    let x0 = match x0 {
        Some(p) => p,
        None => ParameterSet::new(obj.layout().clone(), vec![0.5; d])?,
    };
    Ok((obj, x0))
}

/// Minibatch for step `t`, drawn from a stream no optimizer uses.
pub fn batch_for(obj: &dyn Objective, size: usize, seed: u64, t: u64) -> BatchSpec {
    obj.sample_batch(size, StreamCoord::new(seed, t, u64::MAX, 0))
}

pub fn train_run(cfg: &ExperimentConfig, optimizer: &str, seed: u64) -> Result<Vec<TrainRow>> {
    let master = run_seed(cfg.seed, seed);
    let (obj, mut params) = setup(cfg, master)?;
    let mut opt = build(optimizer, cfg, obj.layout(), master)?;
    let mut rows = Vec::with_capacity(cfg.steps as usize);
    for t in 0..cfg.steps {
        let batch = batch_for(obj.as_ref(), cfg.batch, master, t);
        let rec = opt
            .step(&mut params, obj.as_ref(), &batch)
            .with_context(|| format!("{optimizer}, seed {seed}, step {}", t + 1))?;
        rows.push(TrainRow {
            optimizer: optimizer.to_string(),
            seed,
            step: rec.step,
            forward_passes: rec.forward_passes,
            loss: obj.evaluate(params.as_slice(), &BatchSpec::Full),
            elapsed_ms: if cfg.record_time { rec.elapsed_ms } else { 0.0 },
        });
    }
    Ok(rows)
}

/// Cumulative forward passes at the first step whose loss is at most `target`.
pub fn passes_to_reach(rows: &[TrainRow], target: f64) -> Option<u64> {
    rows.iter().find(|r| r.loss <= target).map(|r| r.forward_passes)
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<(Vec<u8>, Vec<Vec<TrainRow>>)> {
    let mut runs = Vec::new();
    for optimizer in &cfg.optimizers {
        for seed in 0..cfg.seeds {
            runs.push(train_run(cfg, optimizer, seed)?);
        }
    }
    let rows = runs.iter().flatten().map(|r| {
        vec![
            r.optimizer.clone(),
            r.seed.to_string(),
            r.step.to_string(),
            r.forward_passes.to_string(),
            float(r.loss),
            float(r.elapsed_ms),
        ]
    });
    Ok((render_csv(&cfg.echo(), &HEADER, rows)?, runs))
}
