use anyhow::Result;
use loren_core::optimizers::{FoSgd, Loren, LorenConfig, Optimizer, ZoAdam, ZoAdamConfig, ZoSgd, ZoSgdConfig};
use loren_core::ParameterLayout;

use crate::config::ExperimentConfig;

/// Builds a named optimizer. The ZO baselines use `K/2` central samples so
/// every zeroth-order method spends `K` forward passes per step.
pub fn build(name: &str, cfg: &ExperimentConfig, layout: &ParameterLayout, master_seed: u64) -> Result<Box<dyn Optimizer>> {
    let eta = cfg.eta_for(name);
    let estimator = ZoSgdConfig {
        eta,
        epsilon: cfg.eps,
        k: (cfg.k / 2).max(1),
        use_rloo: false,
        master_seed,
    };
    Ok(match name {
        "loren" => Box::new(Loren::new(
            LorenConfig {
                eta,
                nu: cfg.nu,
                epsilon: cfg.eps,
                rho: cfg.rho,
                k_passes: cfg.k,
                momentum_beta: cfg.momentum,
                steps: cfg.steps,
                init_scale: cfg.init_scale,
                master_seed,
                batch_size: cfg.batch,
            },
            layout,
        )?),
        "zosgd" => Box::new(ZoSgd::new(estimator)?),
        "zoadam" => Box::new(ZoAdam::new(ZoAdamConfig { lr: eta, estimator, ..Default::default() }, layout)?),
        "fosgd" => Box::new(FoSgd::new(eta)?),
        other => anyhow::bail!("unknown optimizer `{other}`"),
    })
}

/// Stream seed for run `index` of an experiment seeded with `base`.
pub fn run_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index)
}
