//! Trajectories on the monkey saddle `x³ − 3xy²`.

use anyhow::{Context, Result};
use loren_core::objectives::MonkeySaddle;
use loren_core::{BatchSpec, Objective, ParameterSet};

use crate::config::ExperimentConfig;
use crate::optimizers::{build, run_seed};
use crate::output::{float, render_csv};

pub const HEADER: [&str; 6] = ["method", "seed", "step", "x", "y", "f"];
pub const START: [f64; 2] = [2.9, -0.01];
/// Iterates are projected onto `[−ARENA, ARENA]²`; the saddle is unbounded below.
pub const ARENA: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajRow {
    pub method: String,
    pub seed: u64,
    pub step: u64,
    pub x: f64,
    pub y: f64,
    pub f: f64,
}

/// One trajectory, including the starting point as step 0.
pub fn trajectory(cfg: &ExperimentConfig, method: &str, seed: u64) -> Result<Vec<TrajRow>> {
    let saddle = MonkeySaddle::new();
    let mut params = ParameterSet::new(saddle.layout().clone(), START.to_vec())?;
    let mut opt = build(method, cfg, saddle.layout(), run_seed(cfg.seed, seed))?;
    let row = |step, p: &ParameterSet| {
        let v = p.as_slice();
        TrajRow { method: method.to_string(), seed, step, x: v[0], y: v[1], f: saddle.evaluate(v, &BatchSpec::Full) }
    };
    let mut rows = Vec::with_capacity(cfg.steps as usize + 1);
    rows.push(row(0, &params));
    for t in 1..=cfg.steps {
        opt.step(&mut params, &saddle, &BatchSpec::Full)
            .with_context(|| format!("{method}, seed {seed}, step {t}"))?;
        params.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(-ARENA, ARENA));
        rows.push(row(t, &params));
    }
    Ok(rows)
}

/// First step with `f < threshold`, if any.
pub fn escape_step(rows: &[TrajRow], threshold: f64) -> Option<u64> {
    rows.iter().find(|r| r.f < threshold).map(|r| r.step)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// All trajectories for every configured optimizer, in (method, seed, step) order.
pub fn run_saddle(cfg: &ExperimentConfig) -> Result<(Vec<u8>, Vec<Vec<TrajRow>>)> {
    let mut runs = Vec::new();
    for method in &cfg.optimizers {
        for seed in 0..cfg.seeds {
            runs.push(trajectory(cfg, method, seed)?);
        }
    }
    let rows = runs.iter().flatten().map(|r| {
        vec![r.method.clone(), r.seed.to_string(), r.step.to_string(), float(r.x), float(r.y), float(r.f)]
    });
    Ok((render_csv(&cfg.echo(), &HEADER, rows)?, runs))
}

/// Median final value per method, in configuration order.
pub fn final_medians(cfg: &ExperimentConfig, runs: &[Vec<TrajRow>]) -> Vec<(String, f64)> {
    cfg.optimizers
        .iter()
        .map(|m| {
            let mut finals: Vec<f64> = runs
                .iter()
                .filter(|r| r.first().is_some_and(|row| &row.method == m))
                .filter_map(|r| r.last().map(|row| row.f))
                .collect();
            (m.clone(), median(&mut finals))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentKind, RawOptions};

    fn cfg(opts: RawOptions) -> ExperimentConfig {
        ExperimentConfig::resolve(ExperimentKind::Saddle, opts).unwrap()
    }

    #[test]
    fn zero_rate_first_order_stays_put() {
        let c = cfg(RawOptions { eta: Some(0.0), steps: Some(20), ..Default::default() });
        let rows = trajectory(&c, "fosgd", 0).unwrap();
        assert_eq!(rows.len(), 21);
        assert!(rows.iter().all(|r| [r.x, r.y] == START));
    }

    #[test]
    fn iterates_stay_in_arena() {
        let c = cfg(RawOptions { steps: Some(300), ..Default::default() });
        for m in ["loren", "zosgd", "zoadam", "fosgd"] {
            let rows = trajectory(&c, m, 1).unwrap();
            assert!(rows.iter().all(|r| r.x.abs() <= ARENA && r.y.abs() <= ARENA && r.f.is_finite()), "{m}");
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
