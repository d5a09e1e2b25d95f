//! Independent oracles for the identities the fast paths rely on.
//!
//! Every check here is built from dense linear algebra, finite differences or
//! Monte Carlo sampling. None of them call the blockwise formulas to produce
//! the reference value.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::CovarianceState;
use crate::estimators::{loren_estimate, EvalBundle, PerturbationHandle};
use crate::params::LayerShape;
use crate::streams::{gaussian_block, uniform_below, StreamCoord};
use crate::optimizers::theory_step_size;

/// Dense matrix type used by the oracles.
pub type DenseMatrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub discrepancy: f64,
    pub tolerance: f64,
    /// Monte Carlo samples or random trials behind the measurement.
    pub samples: u64,
    pub passed: bool,
}

impl OracleReport {
    pub fn new(name: impl Into<String>, discrepancy: f64, tolerance: f64, samples: u64) -> Self {
        Self {
            name: name.into(),
            discrepancy,
            tolerance,
            samples,
            // NaN fails
            passed: discrepancy <= tolerance,
        }
    }

    /// Folds several reports into one, keeping the worst ratio to tolerance.
    fn combine(name: &str, parts: &[OracleReport]) -> Self {
        let worst = parts
            .iter()
            .max_by(|x, y| ratio(x).total_cmp(&ratio(y)))
            .expect("at least one part");
        Self {
            name: name.to_string(),
            discrepancy: worst.discrepancy,
            tolerance: worst.tolerance,
            samples: parts.iter().map(|p| p.samples).max().unwrap_or(0),
            passed: parts.iter().all(|p| p.passed),
        }
    }
}

fn ratio(r: &OracleReport) -> f64 {
    if r.discrepancy.is_nan() { f64::INFINITY } else { r.discrepancy / r.tolerance }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<5} {:<28} discrepancy={:.3e} tolerance={:.3e} samples={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.discrepancy,
            self.tolerance,
            self.samples
        )
    }
}

/// Blockwise operators under test. Swappable so the oracles can be shown to
/// catch planted faults.
pub struct BlockOps<'a> {
    pub precision: &'a (dyn Fn(&CovarianceState, &[f64]) -> Vec<f64> + Sync),
    pub sigma: &'a (dyn Fn(&CovarianceState, &[f64]) -> Vec<f64> + Sync),
    pub sqrt: &'a (dyn Fn(&CovarianceState, &[f64]) -> Vec<f64> + Sync),
}

impl BlockOps<'static> {
    pub fn library() -> Self {
        Self {
            precision: &|c, v| c.apply_precision(v).expect("length checked"),
            sigma: &|c, v| c.apply_sigma(v).expect("length checked"),
            sqrt: &|c, v| c.apply_sqrt(v).expect("length checked"),
        }
    }
}

pub type ScoreFn<'a> = &'a (dyn Fn(&CovarianceState, &[f64]) -> Vec<f64> + Sync);

const ORACLE_SEED: u64 = 0x5eed_0f_0a_c1e5;

fn coord(tag: u64, trial: u64) -> StreamCoord {
    StreamCoord::new(ORACLE_SEED, trial, tag, 0)
}

/// `ρI + aaᵀ` on every diagonal block.
fn dense_precision(a: &[f64], rho: f64, m: usize) -> DMatrix<f64> {
    let n = a.len();
    DMatrix::from_fn(m * n, m * n, |i, j| {
        if i / n != j / n {
            return 0.0;
        }
        let (p, q) = (i % n, j % n);
        a[p] * a[q] + if p == q { rho } else { 0.0 }
    })
}

fn dense_inverse(h: &DMatrix<f64>) -> DMatrix<f64> {
    h.clone().lu().try_inverse().expect("precision is positive definite")
}

fn principal_sqrt(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sigma.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Max entrywise error relative to the largest entry of `want` (at least 1).
fn rel_err(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    let diff = got - want;
    if diff.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    max_abs(&diff) / max_abs(want).max(1.0)
}

/// Applies `op` to every basis vector to recover the matrix it represents.
fn materialize_op(c: &CovarianceState, op: &(dyn Fn(&CovarianceState, &[f64]) -> Vec<f64> + Sync)) -> DMatrix<f64> {
    let d = c.numel();
    let mut out = DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        out.set_column(j, &DVector::from_vec(op(c, &e)));
        e[j] = 0.0;
    }
    out
}

const INIT_SCALES: [f64; 4] = [0.0, 0.3, 1.0, 3.0];
const RHOS: [f64; 3] = [0.01, 0.1, 1.0];

fn random_state(trial: u64, tag: u64, max_m: usize, max_n: usize) -> CovarianceState {
    let c = coord(tag, trial);
    let m = 1 + uniform_below(c, 0, max_m as u64) as usize;
    let n = 1 + uniform_below(c, 1, max_n as u64) as usize;
    let rho = RHOS[uniform_below(c, 2, RHOS.len() as u64) as usize];
    let scale = INIT_SCALES[(trial % INIT_SCALES.len() as u64) as usize];
    let shape = if m == 1 { LayerShape::Vector { len: n } } else { LayerShape::Matrix { rows: m, cols: n } };
    CovarianceState::new(shape, rho, scale, c.with_offset(1 << 32)).expect("valid random state")
}

/// Blockwise operators against dense constructions; one report per identity.
pub fn check_dense_equivalence_with(ops: &BlockOps<'_>, trials: u64, max_m: usize, max_n: usize) -> Vec<OracleReport> {
    assert!(max_m * max_n <= 4096, "dense oracle limited to 4096 elements");
    let per_trial: Vec<[f64; 6]> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let c = random_state(t, 1, max_m, max_n);
            let h = dense_precision(c.factor(), c.rho(), c.block_count());
            let sigma = dense_inverse(&h);
            let root = principal_sqrt(&sigma);
            let p_op = materialize_op(&c, ops.precision);
            let s_op = materialize_op(&c, ops.sigma);
            let r_op = materialize_op(&c, ops.sqrt);
            let eye = DMatrix::identity(c.numel(), c.numel());
            let dense = c.dense_materialize().expect("within size guard");
            [
                rel_err(&p_op, &h),
                rel_err(&s_op, &sigma),
                rel_err(&r_op, &root),
                rel_err(&(&h * &s_op), &eye),
                rel_err(&(&r_op * r_op.transpose()), &sigma),
                rel_err(&dense.sigma, &sigma).max(rel_err(&dense.sqrt, &root)).max(rel_err(&dense.precision, &h)),
            ]
        })
        .collect();
    let names = ["precision-apply", "sigma-apply", "sqrt-principal", "precision-times-sigma", "sqrt-square", "dense-materialize"];
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let worst = per_trial.iter().map(|r| r[i]).fold(0.0, |acc: f64, v| if v.is_nan() || acc.is_nan() { f64::NAN } else { acc.max(v) });
            OracleReport::new(*name, worst, 1e-10, trials)
        })
        .collect()
}

pub fn check_dense_equivalence(trials: u64, max_m: usize, max_n: usize) -> OracleReport {
    OracleReport::combine("dense-equivalence", &check_dense_equivalence_with(&BlockOps::library(), trials, max_m, max_n))
}

/// Square root at `s → 0` must tend to `I/√ρ` and stay finite, including when
/// `‖a‖²` underflows to exactly zero.
pub fn check_degenerate_root_with(sqrt: &(dyn Fn(&CovarianceState, &[f64]) -> Vec<f64> + Sync)) -> OracleReport {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for rho in RHOS {
        for amp in [0.0, 1e-200, 1e-8] {
            let a = vec![amp, -amp, 0.5 * amp];
            let c = CovarianceState::from_factor(a, rho, 2).expect("valid factor");
            let u = gaussian_block(coord(2, cases), c.numel());
            let got = sqrt(&c, &u);
            let err = got
                .iter()
                .zip(&u)
                .map(|(g, ui)| if g.is_finite() { (g - ui / rho.sqrt()).abs() } else { f64::INFINITY })
                .fold(0.0, f64::max);
            let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs())) / rho.sqrt();
            worst = worst.max(err / scale);
            cases += 1;
        }
    }
    OracleReport::new("degenerate-root", worst, 1e-10, cases)
}

pub fn check_degenerate_root() -> OracleReport {
    check_degenerate_root_with(BlockOps::library().sqrt)
}

/// `tr Σ`, the spectrum bounds and the step-size inequality, against dense eigenvalues.
pub fn check_trace_spectrum(trials: u64, max_m: usize, max_n: usize) -> OracleReport {
    let worst = (0..trials)
        .into_par_iter()
        .map(|t| {
            let c = random_state(t, 3, max_m, max_n);
            let sigma = dense_inverse(&dense_precision(c.factor(), c.rho(), c.block_count()));
            let eig = sigma.clone().symmetric_eigen().eigenvalues;
            let trace_err = (c.trace_sigma() - sigma.trace()).abs() / sigma.trace();
            let (lo, hi) = c.eig_bounds();
            let slack = 1e-12 * hi;
            let outside = eig.iter().map(|&l| (lo - slack - l).max(l - hi - slack).max(0.0)).fold(0.0, f64::max);
            let diag = theory_step_size(1.0, 100, c.trace_sigma(), c.rho(), Some((c.block_count(), c.block_size())))
                .expect("positive inputs");
            let bound = diag.upper_bound.expect("shape supplied");
            let step_excess = ((diag.eta - bound) / bound).max(0.0);
            trace_err.max(outside / hi).max(step_excess)
        })
        .reduce(|| 0.0, f64::max);
    OracleReport::new("trace-spectrum", worst, 1e-12, trials)
}

/// Running sums for a Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Default)]
struct Moments {
    n: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self { n: 0, sum: vec![0.0; d], sum_sq: vec![0.0; d] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(x) {
            *s += v;
            *q += v * v;
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.n += other.n;
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s += o;
        }
        for (s, o) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *s += o;
        }
        self
    }

    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.n as f64).collect()
    }

    fn std_err(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let m = s / n;
                ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
            })
            .collect()
    }
}

const CHUNK: u64 = 1 << 14;

/// Parallel Monte Carlo over fixed-size chunks merged in index order.
fn monte_carlo(samples: u64, dim: usize, sample: impl Fn(u64, &mut [f64]) + Sync) -> Moments {
    let chunks: Vec<Moments> = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::new(dim);
            let mut x = vec![0.0; dim];
            for i in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                sample(i, &mut x);
                m.push(&x);
            }
            m
        })
        .collect();
    chunks.into_iter().fold(Moments::new(dim), Moments::merge)
}

/// `Tr(Σ)·vᵀΣv + 2·vᵀΣ²v`.
pub fn fourth_moment_rhs(sigma: &DMatrix<f64>, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    let sv = sigma * &v;
    sigma.trace() * v.dot(&sv) + 2.0 * sv.dot(&sv)
}

/// Monte Carlo estimate of `E[(uᵀΣ^{1/2}v)² · uᵀΣu]` against the closed form,
/// measured in standard errors.
pub fn check_fourth_moment(samples: u64, sigma: &DMatrix<f64>, v: &[f64]) -> OracleReport {
    let d = v.len();
    assert!(d <= 64 && sigma.nrows() == d && sigma.ncols() == d, "fourth-moment check needs a d×d covariance, d ≤ 64");
    let root = principal_sqrt(sigma);
    let rv = &root * DVector::from_column_slice(v);
    let m = monte_carlo(samples, 1, |i, out| {
        let u = DVector::from_vec(gaussian_block(coord(4, i), d));
        let proj = u.dot(&rv);
        let quad = u.dot(&(sigma * &u));
        out[0] = proj * proj * quad;
    });
    let want = fourth_moment_rhs(sigma, v);
    let diff = (m.mean()[0] - want).abs();
    let se = m.std_err()[0];
    let discrepancy = if diff == 0.0 { 0.0 } else { diff / se };
    OracleReport::new(format!("fourth-moment-d{d}"), discrepancy, 4.0, samples)
}

/// Dense rank-one covariance `(ρI + aaᵀ)⁻¹` with a random factor.
pub fn random_rank_one_sigma(d: usize, rho: f64, seed: u64) -> DMatrix<f64> {
    let a = gaussian_block(coord(5, seed), d);
    dense_inverse(&dense_precision(&a, rho, 1))
}

/// Monte Carlo mean of the LOREN x-estimate on `½ Σ h_i x_i²` compared with
/// `Σ ∇f`, in units of `max(3 SE, 2 %)`.
pub fn check_rloo_unbiased(samples: u64, hess: &[f64], x: &[f64], cov: &CovarianceState, epsilon: f64, k: usize) -> OracleReport {
    let m = rloo_moments(samples, hess, x, cov, epsilon, k, 0);
    let sigma = dense_inverse(&dense_precision(cov.factor(), cov.rho(), cov.block_count()));
    let grad = DVector::from_iterator(x.len(), x.iter().zip(hess).map(|(xi, h)| xi * h));
    let want = &sigma * grad;
    let floor = 0.02 * want.amax();
    let worst = m
        .mean()
        .iter()
        .zip(m.std_err())
        .zip(want.iter())
        .map(|((g, se), w)| (g - w).abs() / (3.0 * se).max(floor))
        .fold(0.0, f64::max);
    OracleReport::new(format!("rloo-unbiased-k{k}"), worst, 1.0, samples)
}

/// Largest gap between the `K = k1` and `K = k2` Monte Carlo means, in combined standard errors.
pub fn check_rloo_k_agreement(samples: u64, hess: &[f64], x: &[f64], cov: &CovarianceState, epsilon: f64, k1: usize, k2: usize) -> OracleReport {
    let m1 = rloo_moments(samples, hess, x, cov, epsilon, k1, 1);
    let m2 = rloo_moments(samples, hess, x, cov, epsilon, k2, 2);
    let worst = m1
        .mean()
        .iter()
        .zip(m2.mean())
        .zip(m1.std_err().iter().zip(m2.std_err()))
        .map(|((a, b), (s1, s2))| (a - b).abs() / (s1 * s1 + s2 * s2).sqrt())
        .fold(0.0, f64::max);
    OracleReport::new(format!("rloo-k{k1}-vs-k{k2}"), worst, 3.0, samples)
}

fn rloo_moments(samples: u64, hess: &[f64], x: &[f64], cov: &CovarianceState, epsilon: f64, k: usize, stream: u64) -> Moments {
    assert_eq!(hess.len(), x.len());
    assert_eq!(cov.numel(), x.len());
    let covs = std::slice::from_ref(cov);
    let f = |z: &[f64]| 0.5 * z.iter().zip(hess).map(|(v, h)| h * v * v).sum::<f64>();
    monte_carlo(samples, x.len(), |i, out| {
        let handles: Vec<PerturbationHandle> = (1..=k as u64)
            .map(|pass| PerturbationHandle { master_seed: ORACLE_SEED ^ (stream + 7), step: i, pass })
            .collect();
        let mut w = vec![0.0; x.len()];
        let f_values = handles
            .iter()
            .map(|h| {
                h.fill_scaled(0, cov, &mut w);
                let z: Vec<f64> = x.iter().zip(&w).map(|(xi, wi)| xi + epsilon * wi).collect();
                f(&z)
            })
            .collect();
        let est = loren_estimate(&EvalBundle { f_values, epsilon, perturbations: handles }, covs).expect("valid bundle");
        out.copy_from_slice(&est.x[0]);
    })
}

/// `log N(w; 0, Σ(a))` from the dense precision and the structured determinant.
fn dense_log_density(a: &[f64], rho: f64, m: usize, w: &[f64]) -> f64 {
    let h = dense_precision(a, rho, m);
    let w = DVector::from_column_slice(w);
    let n = a.len() as f64;
    let s: f64 = a.iter().map(|v| v * v).sum();
    let log_det_sigma = -(m as f64) * ((n - 1.0) * rho.ln() + (rho + s).ln());
    let d = w.len() as f64;
    -0.5 * w.dot(&(&h * &w)) - 0.5 * log_det_sigma - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

/// Score gradient against five-point finite differences of the dense log
/// density, plus the closed-form one-dimensional value `a/(ρ + a²)`.
pub fn check_score_gradient_with(score: ScoreFn<'_>, trials: u64) -> OracleReport {
    let errs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let c = random_state(t, 6, 6, 6);
            let (m, rho) = (c.block_count(), c.rho());
            let w = gaussian_block(coord(7, t), c.numel());
            let got = score(&c, &w);
            let a = c.factor();
            let h = 1e-3;
            let fd: Vec<f64> = (0..a.len())
                .map(|i| {
                    let at = |delta: f64| {
                        let mut b = a.to_vec();
                        b[i] += delta;
                        dense_log_density(&b, rho, m, &w)
                    };
                    (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
                })
                .collect();
            let scale = fd.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let err = got.iter().zip(&fd).map(|(g, f)| (g - f).abs()).fold(0.0f64, |acc, v| if v.is_nan() { f64::NAN } else { acc.max(v) });
            // below 1e-3 the finite-difference roundoff dominates; measure against the floor
            err / scale.max(1e-3)
        })
        .collect();
    let worst = errs.iter().fold(0.0f64, |acc, &v| if v.is_nan() { f64::NAN } else { acc.max(v) });

    let mut closed = 0.0f64;
    for (a, rho) in [(1.0, 1.0), (0.5, 0.1), (-2.0, 0.01)] {
        let c = CovarianceState::from_factor(vec![a], rho, 1).expect("valid factor");
        let want = a / (rho + a * a);
        closed = closed.max((score(&c, &[0.0])[0] - want).abs() / want.abs());
    }
    let discrepancy = if worst.is_nan() || closed.is_nan() { f64::NAN } else { worst.max(closed) };
    OracleReport::new("score-gradient", discrepancy, 1e-5, trials)
}

pub fn check_score_gradient(trials: u64) -> OracleReport {
    check_score_gradient_with(&|c, w| c.log_density_grad_a(w).expect("length checked"), trials)
}

/// Structured `log det Σ` against a generic LU determinant.
pub fn check_log_det(trials: u64) -> OracleReport {
    let worst = (0..trials)
        .map(|t| {
            let c = random_state(t, 8, 6, 6);
            let (m, n, rho) = (c.block_count() as f64, c.block_size() as f64, c.rho());
            let structured = -m * ((n - 1.0) * rho.ln() + (rho + c.factor_norm_sq()).ln());
            let sigma = dense_inverse(&dense_precision(c.factor(), rho, c.block_count()));
            let generic = sigma.lu().determinant().ln();
            (structured - generic).abs() / generic.abs().max(1.0)
        })
        .fold(0.0, f64::max);
    OracleReport::new("log-det", worst, 1e-10, trials)
}

/// Every oracle at its default size, fixed seeds.
pub fn run_all() -> Vec<OracleReport> {
    let mut reports = vec![
        check_dense_equivalence(100, 8, 8),
        check_degenerate_root(),
        check_trace_spectrum(100, 8, 8),
        check_score_gradient(200),
        check_log_det(100),
    ];

    let identity2 = DMatrix::identity(2, 2);
    let exact = fourth_moment_rhs(&identity2, &[1.0, 0.0]);
    reports.push(OracleReport::new("fourth-moment-identity-exact", (exact - 4.0).abs(), 0.0, 0));
    reports.push(check_fourth_moment(1_000_000, &identity2, &[1.0, 0.0]));
    reports.push(check_fourth_moment(10_000, &identity2, &[0.0, 0.0]));
    let sigma16 = random_rank_one_sigma(16, 0.5, 1);
    let v16 = gaussian_block(coord(9, 0), 16);
    reports.push(check_fourth_moment(2_000_000, &sigma16, &v16));

    let cov = CovarianceState::from_factor(vec![0.8, -0.4, 0.3], 0.5, 2).expect("valid factor");
    let hess = [4.0, 1.0, 2.0, 0.5, 3.0, 1.5];
    let x = [1.0, -0.5, 0.25, 2.0, -1.0, 0.75];
    reports.push(check_rloo_unbiased(1_000_000, &hess, &x, &cov, 1e-3, 6));
    reports.push(check_rloo_k_agreement(1_000_000, &hess, &x, &cov, 1e-3, 2, 6));
    reports
}
