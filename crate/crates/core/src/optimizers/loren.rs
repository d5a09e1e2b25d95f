use std::time::Instant;

use super::{check_finite, check_positive, evaluate_perturbed, mean, Optimizer, RunRecord};
use crate::covariance::CovarianceState;
use crate::error::{LorenError, Result};
use crate::estimators::{covariances_for, rloo_weights, stream_layer_estimate, PerturbationHandle};
use crate::objectives::{BatchSpec, Objective};
use crate::params::{ParameterLayout, ParameterSet};

/// Ceiling on `‖a‖²`; larger factor updates are shortened to land on it.
pub const S_MAX: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct LorenConfig {
    /// Effective learning rate for `x`; the update uses `eta·√ρ`.
    pub eta: f64,
    /// Effective learning rate for `a`; the update uses `nu·√ρ`. Zero freezes `a`.
    pub nu: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub k_passes: usize,
    /// Heavyball coefficient for the `x` update; zero disables the buffer.
    pub momentum_beta: f64,
    pub steps: u64,
    pub init_scale: f64,
    pub master_seed: u64,
    pub batch_size: usize,
}

impl Default for LorenConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            nu: 1e-3,
            epsilon: 1e-3,
            rho: 0.1,
            k_passes: 6,
            momentum_beta: 0.9,
            steps: 1000,
            init_scale: 1.0,
            master_seed: 0,
            batch_size: 64,
        }
    }
}

impl LorenConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("epsilon", self.epsilon)?;
        check_positive("rho", self.rho)?;
        for (name, v) in [("eta", self.eta), ("nu", self.nu), ("init_scale", self.init_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LorenError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.k_passes < 2 {
            return Err(LorenError::Config(format!("K must be at least 2, got {}", self.k_passes)));
        }
        if !(0.0..1.0).contains(&self.momentum_beta) {
            return Err(LorenError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum_beta)));
        }
        if self.batch_size == 0 {
            return Err(LorenError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Persistent per-layer storage held by the optimizer, in `f64` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerStorage {
    pub factor: usize,
    pub momentum: usize,
    pub scalars: usize,
}

/// LOREN with heavyball momentum and decoupled damping.
///
/// Each step draws `K` perturbations on the same minibatch, evaluates them
/// against an immutable snapshot of `(x, a)`, then streams the RLOO
/// estimates block by block straight into the parameters. Perturbations are
/// regenerated from their stream coordinates and never stored.
#[derive(Debug, Clone)]
pub struct Loren {
    config: LorenConfig,
    covariances: Vec<CovarianceState>,
    momentum: Option<Vec<f64>>,
    step: u64,
    passes: u64,
}

impl Loren {
    pub fn new(config: LorenConfig, layout: &ParameterLayout) -> Result<Self> {
        config.validate()?;
        let covariances = covariances_for(layout, config.rho, config.init_scale, config.master_seed)?;
        let momentum = (config.momentum_beta > 0.0).then(|| vec![0.0; layout.total_len()]);
        Ok(Self {
            config,
            covariances,
            momentum,
            step: 0,
            passes: 0,
        })
    }

    pub fn config(&self) -> &LorenConfig {
        &self.config
    }

    pub fn covariances(&self) -> &[CovarianceState] {
        &self.covariances
    }

    pub fn covariances_mut(&mut self) -> &mut [CovarianceState] {
        &mut self.covariances
    }

    pub fn momentum(&self) -> Option<&[f64]> {
        self.momentum.as_deref()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn persistent_storage(&self) -> Vec<LayerStorage> {
        self.covariances
            .iter()
            .map(|c| LayerStorage {
                factor: c.block_size(),
                momentum: if self.momentum.is_some() { c.numel() } else { 0 },
                // ρ and the cached ‖a‖²
                scalars: 2,
            })
            .collect()
    }

    pub fn handles(&self) -> Vec<PerturbationHandle> {
        (1..=self.config.k_passes as u64)
            .map(|pass| PerturbationHandle {
                master_seed: self.config.master_seed,
                step: self.step,
                pass,
            })
            .collect()
    }

    fn check_shapes(&self, params: &ParameterSet, objective: &dyn Objective) -> Result<()> {
        let layout = params.layout();
        let ok = layout == objective.layout()
            && layout.num_layers() == self.covariances.len()
            && self.covariances.iter().zip(layout.shapes()).all(|(c, s)| (c.block_count(), c.block_size()) == s.blocks());
        if ok {
            Ok(())
        } else {
            Err(LorenError::Config(format!(
                "optimizer state does not match the layout of objective `{}`",
                objective.name()
            )))
        }
    }
}

/// Shortens `delta` so that `‖a + delta‖² ≤ S_MAX`.
fn clamp_factor_update(a: &[f64], delta: &mut [f64]) {
    let next: f64 = a.iter().zip(delta.iter()).map(|(x, d)| (x + d) * (x + d)).sum();
    if next <= S_MAX {
        return;
    }
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let ad: f64 = a.iter().zip(delta.iter()).map(|(x, d)| x * d).sum();
    let dd: f64 = delta.iter().map(|d| d * d).sum();
    let lambda = if aa >= S_MAX {
        0.0
    } else {
        ((-ad + (ad * ad - dd * (aa - S_MAX)).sqrt()) / dd).clamp(0.0, 1.0)
    };
    delta.iter_mut().for_each(|d| *d *= lambda);
}

impl Optimizer for Loren {
    fn name(&self) -> &'static str {
        "loren"
    }

    fn passes_per_step(&self) -> u64 {
        self.config.k_passes as u64
    }

    fn step(&mut self, params: &mut ParameterSet, objective: &dyn Objective, batch: &BatchSpec) -> Result<RunRecord> {
        let start = Instant::now();
        self.check_shapes(params, objective)?;
        let cfg = &self.config;
        let handles = self.handles();
        let layout = params.layout().clone();

        let covs = &self.covariances;
        let f_values = evaluate_perturbed(params, objective, batch, &vec![cfg.epsilon; handles.len()], |k, z| {
            for (l, cov) in covs.iter().enumerate() {
                handles[k].fill_scaled(l, cov, &mut z[layout.range(l)]);
            }
        });
        check_finite(&f_values, self.step)?;
        let coefficients = rloo_weights(&f_values)?;

        let root_rho = cfg.rho.sqrt();
        let eta = cfg.eta * root_rho;
        let nu = cfg.nu * root_rho;
        let beta = cfg.momentum_beta;
        let mut x_norm_sq = 0.0;
        let mut a_norm_sq = 0.0;

        for l in 0..self.covariances.len() {
            let range = layout.range(l);
            let n = self.covariances[l].block_size();
            let x_layer = &mut params.as_mut_slice()[range.clone()];
            let mut v_layer = self.momentum.as_mut().map(|v| &mut v[range]);
            let grad_a = stream_layer_estimate(&self.covariances[l], l, &handles, &coefficients, cfg.epsilon, |b, gx| {
                let xb = &mut x_layer[b * n..(b + 1) * n];
                match v_layer.as_deref_mut() {
                    Some(v) => {
                        for ((xi, vi), gi) in xb.iter_mut().zip(&mut v[b * n..(b + 1) * n]).zip(gx) {
                            *vi = beta * *vi + gi;
                            let d = eta * *vi;
                            *xi -= d;
                            x_norm_sq += d * d;
                        }
                    }
                    None => {
                        for (xi, gi) in xb.iter_mut().zip(gx) {
                            let d = eta * gi;
                            *xi -= d;
                            x_norm_sq += d * d;
                        }
                    }
                }
            });
            if nu > 0.0 {
                let cov = &mut self.covariances[l];
                let mut delta: Vec<f64> = grad_a.iter().map(|g| -nu * g).collect();
                clamp_factor_update(cov.factor(), &mut delta);
                a_norm_sq += delta.iter().map(|d| d * d).sum::<f64>();
                cov.update_factor(|a| a.iter_mut().zip(&delta).for_each(|(ai, d)| *ai += d));
            }
        }

        self.step += 1;
        self.passes += handles.len() as u64;
        Ok(RunRecord {
            step: self.step,
            mean_loss: mean(&f_values),
            x_update_norm: x_norm_sq.sqrt(),
            a_update_norm: a_norm_sq.sqrt(),
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            forward_passes: self.passes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{loren_estimate, EvalBundle};
    use crate::objectives::{Constant, MlpToy, Quadratic, Sphere};
    use crate::params::LayerShape;

    fn sphere_params(d: usize, value: f64) -> (Sphere, ParameterSet) {
        let obj = Sphere::new(d).unwrap();
        let p = ParameterSet::new(obj.layout().clone(), vec![value; d]).unwrap();
        (obj, p)
    }

    #[test]
    fn config_validation() {
        assert!(LorenConfig::default().validate().is_ok());
        let bad = [
            LorenConfig { k_passes: 1, ..Default::default() },
            LorenConfig { rho: 0.0, ..Default::default() },
            LorenConfig { epsilon: -1.0, ..Default::default() },
            LorenConfig { momentum_beta: 1.0, ..Default::default() },
            LorenConfig { eta: f64::NAN, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(LorenError::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn constant_objective_leaves_state_and_decays_momentum() {
        let (sphere, mut p) = sphere_params(5, 1.0);
        let mut opt = Loren::new(LorenConfig { eta: 1e-2, ..Default::default() }, sphere.layout()).unwrap();
        let flat = Constant::new(sphere.layout().clone(), 3.0);

        // fresh buffer: nothing moves
        let before = p.clone();
        let a_before = opt.covariances()[0].clone();
        let rec = opt.step(&mut p, &flat, &BatchSpec::Full).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.covariances()[0], a_before);
        assert_eq!(rec.x_update_norm, 0.0);

        // charged buffer: zero gradient only decays it, and x moves by the carry
        opt.step(&mut p, &sphere, &BatchSpec::Full).unwrap();
        let v_old = opt.momentum().unwrap().to_vec();
        let x_old = p.clone();
        let a_old = opt.covariances()[0].clone();
        opt.step(&mut p, &flat, &BatchSpec::Full).unwrap();
        let beta = opt.config().momentum_beta;
        let eta = opt.config().eta * opt.config().rho.sqrt();
        for i in 0..5 {
            assert_eq!(opt.momentum().unwrap()[i], beta * v_old[i]);
            assert_eq!(p.as_slice()[i], x_old.as_slice()[i] - eta * (beta * v_old[i]));
        }
        assert_eq!(opt.covariances()[0], a_old);
    }

    #[test]
    fn reduces_to_isotropic_rloo_step() {
        // β = 0, ν = 0, a = 0: x ← x − η√ρ · (1/ε) Σ_k c_k u_k/√ρ.
        let (sphere, mut p) = sphere_params(4, 0.7);
        let cfg = LorenConfig { eta: 1e-2, nu: 0.0, momentum_beta: 0.0, init_scale: 0.0, rho: 0.25, ..Default::default() };
        let mut opt = Loren::new(cfg.clone(), sphere.layout()).unwrap();
        let handles = opt.handles();
        let covs = opt.covariances().to_vec();
        let x0 = p.clone();
        let f: Vec<f64> = handles
            .iter()
            .map(|h| {
                let mut w = vec![0.0; 4];
                h.fill_scaled(0, &covs[0], &mut w);
                let z: Vec<f64> = x0.as_slice().iter().zip(&w).map(|(x, wi)| x + cfg.epsilon * wi).collect();
                sphere.evaluate(&z, &BatchSpec::Full)
            })
            .collect();
        let est = loren_estimate(&EvalBundle { f_values: f, epsilon: cfg.epsilon, perturbations: handles }, &covs).unwrap();
        opt.step(&mut p, &sphere, &BatchSpec::Full).unwrap();
        let eta = cfg.eta * cfg.rho.sqrt();
        for i in 0..4 {
            assert_eq!(p.as_slice()[i], x0.as_slice()[i] - eta * est.x[0][i]);
        }
        assert!(opt.covariances()[0].factor().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn x_update_is_damping_independent_for_fixed_losses() {
        // With a = 0 the x-update is (η/ε) Σ c_k u_k for any ρ given the same f_k.
        let layout = ParameterLayout::vector(6).unwrap();
        let hs: Vec<_> = (1..=4).map(|pass| PerturbationHandle { master_seed: 2, step: 0, pass }).collect();
        let f = vec![1.0, 0.5, -0.25, 2.0];
        let eta = 0.05;
        let updates: Vec<Vec<f64>> = [0.01, 0.1, 1.0, 10.0]
            .iter()
            .map(|&rho| {
                let covs = covariances_for(&layout, rho, 0.0, 0).unwrap();
                let est = loren_estimate(&EvalBundle { f_values: f.clone(), epsilon: 1e-3, perturbations: hs.clone() }, &covs).unwrap();
                est.x[0].iter().map(|g| eta * rho.sqrt() * g).collect()
            })
            .collect();
        for u in &updates[1..] {
            for (a, b) in u.iter().zip(&updates[0]) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn non_finite_loss_aborts_without_mutation() {
        struct Blowup(ParameterLayout);
        impl Objective for Blowup {
            fn name(&self) -> &str {
                "blowup"
            }
            fn layout(&self) -> &ParameterLayout {
                &self.0
            }
            fn evaluate(&self, x: &[f64], _: &BatchSpec) -> f64 {
                if x[0] > 1.0 { f64::NAN } else { x[0] }
            }
        }
        let obj = Blowup(ParameterLayout::vector(2).unwrap());
        let mut p = ParameterSet::new(obj.layout().clone(), vec![1.0, 0.0]).unwrap();
        let mut opt = Loren::new(LorenConfig::default(), obj.layout()).unwrap();
        let before = (p.clone(), opt.covariances().to_vec(), opt.step_count());
        let err = opt.step(&mut p, &obj, &BatchSpec::Full).unwrap_err();
        assert!(matches!(err, LorenError::NonFiniteLoss { step: 0, .. }), "{err}");
        assert_eq!((p, opt.covariances().to_vec(), opt.step_count()), before);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let (sphere, mut p) = sphere_params(3, 1.0);
        let other = Sphere::new(4).unwrap();
        let mut opt = Loren::new(LorenConfig::default(), other.layout()).unwrap();
        assert!(matches!(opt.step(&mut p, &sphere, &BatchSpec::Full), Err(LorenError::Config(_))));
    }

    #[test]
    fn factor_norm_is_capped() {
        let a = vec![9.0e5, 0.0];
        let mut delta = vec![2.0e5, 1.0e5];
        clamp_factor_update(&a, &mut delta);
        let s: f64 = a.iter().zip(&delta).map(|(x, d)| (x + d) * (x + d)).sum();
        assert!((s - S_MAX).abs() <= 1e-6 * S_MAX, "{s}");
        let mut small = vec![1.0, 1.0];
        clamp_factor_update(&[1.0, 1.0], &mut small);
        assert_eq!(small, vec![1.0, 1.0]);
    }

    #[test]
    fn storage_is_linear_in_fan_in_without_momentum() {
        let mlp = MlpToy::new(0);
        let opt = Loren::new(LorenConfig { momentum_beta: 0.0, ..Default::default() }, mlp.layout()).unwrap();
        assert!(opt.momentum().is_none());
        let fan_in: Vec<usize> = mlp.layout().shapes().iter().map(|s: &LayerShape| s.blocks().1).collect();
        let storage = opt.persistent_storage();
        for (st, n) in storage.iter().zip(fan_in) {
            assert_eq!(*st, LayerStorage { factor: n, momentum: 0, scalars: 2 });
        }
        let with = Loren::new(LorenConfig::default(), mlp.layout()).unwrap();
        assert_eq!(with.persistent_storage()[0].momentum, 32 * 16);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mlp = MlpToy::new(4);
                let mut p = mlp.initial_params();
                let mut opt = Loren::new(LorenConfig { master_seed: 4, eta: 1e-3, ..Default::default() }, mlp.layout()).unwrap();
                let mut trace = Vec::new();
                for t in 0..20 {
                    let batch = mlp.sample_batch(64, crate::streams::StreamCoord::new(4, t, u64::MAX, 0));
                    let r = opt.step(&mut p, &mlp, &batch).unwrap();
                    trace.push((r.mean_loss.to_bits(), r.x_update_norm.to_bits(), r.a_update_norm.to_bits()));
                }
                (trace, p)
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn sphere_converges() {
        // ρ = 0.1, η = 1e-2, K = 6, d = 100, 500 steps, median of 10 seeds.
        // Momentum is off: with β > 0 this step size diverges.
        let mut finals: Vec<f64> = (0..10)
            .map(|seed| {
                let (sphere, mut p) = sphere_params(100, 1.0);
                let f0 = sphere.evaluate(p.as_slice(), &BatchSpec::Full);
                let cfg = LorenConfig { eta: 1e-2, rho: 0.1, k_passes: 6, momentum_beta: 0.0, master_seed: seed, ..Default::default() };
                let mut opt = Loren::new(cfg, sphere.layout()).unwrap();
                for _ in 0..500 {
                    opt.step(&mut p, &sphere, &BatchSpec::Full).unwrap();
                }
                sphere.evaluate(p.as_slice(), &BatchSpec::Full) / f0
            })
            .collect();
        finals.sort_by(f64::total_cmp);
        let median = 0.5 * (finals[4] + finals[5]);
        assert!(median < 0.01, "{finals:?}");
    }

    #[test]
    fn quadratic_with_matrix_layer_descends() {
        let layout = ParameterLayout::new(vec![LayerShape::Matrix { rows: 3, cols: 4 }]).unwrap();
        let obj = Quadratic::with_layout(layout.clone(), (0..12).map(|i| 1.0 + (i % 4) as f64).collect()).unwrap();
        let mut p = ParameterSet::new(layout.clone(), vec![1.0; 12]).unwrap();
        let f0 = obj.evaluate(p.as_slice(), &BatchSpec::Full);
        let mut opt = Loren::new(LorenConfig { eta: 1e-2, momentum_beta: 0.0, ..Default::default() }, &layout).unwrap();
        for _ in 0..300 {
            opt.step(&mut p, &obj, &BatchSpec::Full).unwrap();
        }
        assert!(obj.evaluate(p.as_slice(), &BatchSpec::Full) < 0.05 * f0);
    }
}
