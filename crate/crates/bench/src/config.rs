//! Command-line and config-file options, resolved into one validated config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Mse,
    Saddle,
    Train,
    Verify,
}

/// Reference estimator the RLOO estimator is compared with in `mse`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Comparator {
    /// Mean of K/2 central differences (K forward passes).
    Central,
    /// Mean of K forward differences sharing one f(x) (K + 1 forward passes).
    Forward,
}

#[derive(Debug, Parser)]
#[command(name = "loren-bench", version, about = "Seeded zeroth-order optimization experiments with CSV output")]
pub struct Cli {
    #[arg(value_enum)]
    pub kind: ExperimentKind,

    #[command(flatten)]
    pub options: RawOptions,
}

/// Every option is optional here; defaults are applied per experiment.
#[derive(Debug, Clone, Default, Args)]
pub struct RawOptions {
    /// Test function(s) for `mse`: sphere, rastrigin, rosenbrock, comma separated, or `all`.
    #[arg(long)]
    pub function: Option<String>,
    /// Objective for `train`: sphere, rastrigin, rosenbrock or mlp.
    #[arg(long)]
    pub objective: Option<String>,
    /// loren, zosgd, zoadam, fosgd, comma separated, or `all`.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Learning rate; overrides the per-optimizer default.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub comparator: Option<Comparator>,
    /// Worker threads for forward evaluations; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` file mirroring the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write measured wall-clock times instead of zeros (breaks byte-identical output).
    #[arg(long)]
    pub record_time: bool,
}

impl RawOptions {
    /// Parses `key = value` lines. `#` starts a comment; keys accept `-` or `_`.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut o = RawOptions::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim().replace('_', "-");
            let value = value.trim().trim_matches('"');
            let ctx = || format!("line {}: bad value for `{key}`", lineno + 1);
            match key.as_str() {
                "function" => o.function = Some(value.to_string()),
                "objective" => o.objective = Some(value.to_string()),
                "optimizer" => o.optimizer = Some(value.to_string()),
                "dim" => o.dim = Some(value.parse().with_context(ctx)?),
                "steps" => o.steps = Some(value.parse().with_context(ctx)?),
                "trials" => o.trials = Some(value.parse().with_context(ctx)?),
                "seeds" => o.seeds = Some(value.parse().with_context(ctx)?),
                "k" => o.k = Some(value.parse().with_context(ctx)?),
                "eps" => o.eps = Some(value.parse().with_context(ctx)?),
                "eta" => o.eta = Some(value.parse().with_context(ctx)?),
                "nu" => o.nu = Some(value.parse().with_context(ctx)?),
                "rho" => o.rho = Some(value.parse().with_context(ctx)?),
                "momentum" => o.momentum = Some(value.parse().with_context(ctx)?),
                "init-scale" => o.init_scale = Some(value.parse().with_context(ctx)?),
                "batch" => o.batch = Some(value.parse().with_context(ctx)?),
                "seed" => o.seed = Some(value.parse().with_context(ctx)?),
                "comparator" => {
                    o.comparator = Some(Comparator::from_str(value, true).map_err(|e| anyhow!("line {}: {e}", lineno + 1))?)
                }
                "threads" => o.threads = Some(value.parse().with_context(ctx)?),
                "out" => o.out = Some(PathBuf::from(value)),
                "record-time" => o.record_time = value.parse().with_context(ctx)?,
                "config" => bail!("line {}: nested config files are not supported", lineno + 1),
                other => bail!("line {}: unknown key `{other}`", lineno + 1),
            }
        }
        Ok(o)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_config_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: RawOptions) -> RawOptions {
        RawOptions {
            function: over.function.or(self.function),
            objective: over.objective.or(self.objective),
            optimizer: over.optimizer.or(self.optimizer),
            dim: over.dim.or(self.dim),
            steps: over.steps.or(self.steps),
            trials: over.trials.or(self.trials),
            seeds: over.seeds.or(self.seeds),
            k: over.k.or(self.k),
            eps: over.eps.or(self.eps),
            eta: over.eta.or(self.eta),
            nu: over.nu.or(self.nu),
            rho: over.rho.or(self.rho),
            momentum: over.momentum.or(self.momentum),
            init_scale: over.init_scale.or(self.init_scale),
            batch: over.batch.or(self.batch),
            seed: over.seed.or(self.seed),
            comparator: over.comparator.or(self.comparator),
            threads: over.threads.or(self.threads),
            out: over.out.or(self.out),
            config: None,
            record_time: over.record_time || self.record_time,
        }
    }
}

pub const FUNCTIONS: [&str; 3] = ["sphere", "rastrigin", "rosenbrock"];
pub const OBJECTIVES: [&str; 4] = ["sphere", "rastrigin", "rosenbrock", "mlp"];
pub const OPTIMIZERS: [&str; 4] = ["loren", "zosgd", "zoadam", "fosgd"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub functions: Vec<String>,
    pub objective: String,
    pub optimizers: Vec<String>,
    pub dim: usize,
    pub steps: u64,
    pub trials: u64,
    pub seeds: u64,
    pub k: usize,
    pub eps: f64,
    /// Explicit learning rate, or `None` for the per-optimizer defaults.
    pub eta: Option<f64>,
    pub nu: f64,
    pub rho: f64,
    pub momentum: f64,
    pub init_scale: f64,
    pub batch: usize,
    pub seed: u64,
    pub comparator: Comparator,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub record_time: bool,
}

fn value_name(v: impl ValueEnum) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

fn split_names(value: &str, allowed: &[&str], what: &str) -> Result<Vec<String>> {
    if value == "all" {
        return Ok(allowed.iter().map(|s| s.to_string()).collect());
    }
    value
        .split(',')
        .map(|s| {
            let s = s.trim();
            if allowed.contains(&s) {
                Ok(s.to_string())
            } else {
                Err(anyhow!("unknown {what} `{s}` (expected one of {})", allowed.join(", ")))
            }
        })
        .collect()
}

impl ExperimentConfig {
    /// Applies per-experiment defaults and validates everything before any run starts.
    pub fn resolve(kind: ExperimentKind, raw: RawOptions) -> Result<Self> {
        let raw = match &raw.config {
            Some(path) => RawOptions::from_config_file(path)?.overlay(raw),
            None => raw,
        };
        let (dim, steps, k, optimizer) = match kind {
            ExperimentKind::Mse => (1000, 0, 4, "loren"),
            ExperimentKind::Saddle => (2, 2000, 6, "all"),
            ExperimentKind::Train => (100, 1000, 6, "loren"),
            ExperimentKind::Verify => (0, 0, 6, "loren"),
        };
        let cfg = ExperimentConfig {
            kind,
            functions: split_names(raw.function.as_deref().unwrap_or("all"), &FUNCTIONS, "function")?,
            objective: split_names(raw.objective.as_deref().unwrap_or("sphere"), &OBJECTIVES, "objective")?
                .into_iter()
                .next()
                .ok_or_else(|| anyhow!("empty objective"))?,
            optimizers: split_names(raw.optimizer.as_deref().unwrap_or(optimizer), &OPTIMIZERS, "optimizer")?,
            dim: raw.dim.unwrap_or(dim),
            steps: raw.steps.unwrap_or(steps),
            trials: raw.trials.unwrap_or(5000),
            seeds: raw.seeds.unwrap_or(if kind == ExperimentKind::Saddle { 10 } else { 1 }),
            k: raw.k.unwrap_or(k),
            eps: raw.eps.unwrap_or(1e-3),
            eta: raw.eta,
            nu: raw.nu.unwrap_or(1e-3),
            rho: raw.rho.unwrap_or(0.1),
            momentum: raw.momentum.unwrap_or(0.9),
            init_scale: raw.init_scale.unwrap_or(1.0),
            batch: raw.batch.unwrap_or(64),
            seed: raw.seed.unwrap_or(0),
            comparator: raw.comparator.unwrap_or(Comparator::Central),
            threads: raw.threads,
            out: raw.out,
            record_time: raw.record_time,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let positive = [("eps", self.eps), ("rho", self.rho)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!("--{name} must be positive, got {v}");
            }
        }
        for (name, v) in [("nu", self.nu), ("init-scale", self.init_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!("--{name} must be non-negative, got {v}");
            }
        }
        if let Some(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                bail!("--eta must be non-negative, got {eta}");
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!("--momentum must lie in [0, 1), got {}", self.momentum);
        }
        if self.k < 2 {
            bail!("--k must be at least 2, got {}", self.k);
        }
        if self.threads == Some(0) {
            bail!("--threads must be positive");
        }
        if self.batch == 0 {
            bail!("--batch must be positive");
        }
        match self.kind {
            ExperimentKind::Mse => {
                if self.dim == 0 || self.trials == 0 {
                    bail!("mse needs positive --dim and --trials");
                }
                if self.comparator == Comparator::Central && self.k % 2 != 0 {
                    bail!("the central comparator pairs evaluations, so --k must be even");
                }
                if self.functions.iter().any(|f| f == "rosenbrock") && self.dim < 2 {
                    bail!("rosenbrock needs --dim of at least 2");
                }
            }
            ExperimentKind::Saddle => {
                if self.seeds == 0 {
                    bail!("--seeds must be positive");
                }
            }
            ExperimentKind::Train => {
                if self.seeds == 0 {
                    bail!("--seeds must be positive");
                }
                if self.objective != "mlp" && self.dim == 0 {
                    bail!("--dim must be positive");
                }
                if self.objective == "rosenbrock" && self.dim < 2 {
                    bail!("rosenbrock needs --dim of at least 2");
                }
            }
            ExperimentKind::Verify => {}
        }
        Ok(())
    }

    /// Learning rate for one optimizer in this experiment.
    pub fn eta_for(&self, optimizer: &str) -> f64 {
        self.eta.unwrap_or_else(|| default_eta(self.kind, &self.objective, optimizer))
    }

    /// The `#` comment line written at the top of every CSV. Options that do not
    /// affect the numbers (threads, output path, timing) are left out.
    pub fn echo(&self) -> String {
        let mut s = format!("# loren-bench {} kind={}", env!("CARGO_PKG_VERSION"), value_name(self.kind));
        let etas: Vec<String> = self.optimizers.iter().map(|o| format!("{o}:{}", self.eta_for(o))).collect();
        match self.kind {
            ExperimentKind::Mse => {
                let _ = write!(
                    s,
                    " function={} dim={} trials={} k={} eps={} comparator={} seed={}",
                    self.functions.join(","),
                    self.dim,
                    self.trials,
                    self.k,
                    self.eps,
                    value_name(self.comparator),
                    self.seed
                );
            }
            ExperimentKind::Saddle | ExperimentKind::Train => {
                if self.kind == ExperimentKind::Train {
                    let _ = write!(s, " objective={} dim={} batch={}", self.objective, self.dim, self.batch);
                }
                let _ = write!(
                    s,
                    " optimizer={} steps={} seeds={} k={} eps={} eta={} nu={} rho={} momentum={} init_scale={} seed={}",
                    self.optimizers.join(","),
                    self.steps,
                    self.seeds,
                    self.k,
                    self.eps,
                    etas.join(","),
                    self.nu,
                    self.rho,
                    self.momentum,
                    self.init_scale,
                    self.seed
                );
            }
            ExperimentKind::Verify => {}
        }
        s
    }
}

/// Per-optimizer learning rates picked by grid search: over {1e-3, 1e-2, 1e-1}
/// on the saddle, over a finer grid on the MLP (median passes to loss 0.4), and
/// over {1e-6, …, 1e-2} on the test functions at d = 100.
pub fn default_eta(kind: ExperimentKind, objective: &str, optimizer: &str) -> f64 {
    match (kind, objective, optimizer) {
        (ExperimentKind::Saddle, _, "loren") => 1e-1,
        (ExperimentKind::Saddle, _, "zosgd") => 1e-3,
        (ExperimentKind::Saddle, _, "zoadam") => 1e-2,
        (ExperimentKind::Saddle, _, _) => 1e-2,
        (_, "mlp", "loren") => 3e-3,
        (_, "mlp", "zosgd") => 5e-2,
        (_, "mlp", "zoadam") => 1e-2,
        (_, "mlp", _) => 5e-1,
        (_, "sphere", "loren" | "zosgd") => 1e-3,
        (_, "sphere", _) => 1e-2,
        (_, _, "loren") => 1e-6,
        (_, _, "zosgd") => 1e-4,
        (_, _, "zoadam") => 1e-2,
        _ => 1e-3,
    }
}
