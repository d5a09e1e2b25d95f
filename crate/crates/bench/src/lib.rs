//! Experiment runner behind the `loren-bench` binary.

pub mod config;
pub mod mse;
pub mod optimizers;
pub mod output;
pub mod saddle;
pub mod train;

use std::io::Write;

use anyhow::{Context, Result};
use loren_core::verify;

use config::{ExperimentConfig, ExperimentKind};

/// What a finished experiment reports besides its CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    /// `false` only when a verification oracle failed.
    pub passed: bool,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

/// Runs an experiment. CSV goes to `--out` or stdout; the verify report goes to stdout.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut summary = Vec::new();
    let csv = match cfg.kind {
        ExperimentKind::Mse => {
            let (csv, results) = mse::run_mse(cfg)?;
            for (name, r) in &results {
                summary.push(format!(
                    "{name}: mean mse rloo={:.6e} vanilla={:.6e} ratio={:.4}",
                    r.mean_rloo(),
                    r.mean_vanilla(),
                    r.mean_rloo() / r.mean_vanilla()
                ));
            }
            csv
        }
        ExperimentKind::Saddle => {
            let (csv, runs) = saddle::run_saddle(cfg)?;
            for (m, med) in saddle::final_medians(cfg, &runs) {
                summary.push(format!("{m}: median final f = {med:.6}"));
            }
            csv
        }
        ExperimentKind::Train => train::run_train(cfg)?.0,
        ExperimentKind::Verify => {
            let reports = verify::run_all();
            let mut out = std::io::stdout().lock();
            for r in &reports {
                writeln!(out, "{r}")?;
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            summary.push(format!("{} oracles, {failed} failed", reports.len()));
            return Ok(Outcome { passed: failed == 0, summary });
        }
    };
    match &cfg.out {
        Some(path) => std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(&csv)?,
    }
    Ok(Outcome { passed: true, summary })
}

/// Runs inside a pool capped at `--threads` workers when given.
pub fn run_with_threads(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(|| run(cfg)),
        None => run(cfg),
    }
}
