//! Damped rank-1 Kronecker-factored search covariance.
//!
//! For a layer with `m` blocks of size `n` the precision (curvature model) is
//! `H = I_m ⊗ (ρ I_n + a aᵀ)` and the covariance is its inverse
//!
//! ```text
//! Σ      = I_m ⊗ (1/ρ) (I_n − a aᵀ / (ρ + s))            s = ‖a‖²
//! Σ^{1/2} = I_m ⊗ (1/√ρ) (I_n − κ a aᵀ)                   κ = 1 / (√(ρ+s) (√ρ + √(ρ+s)))
//! ```
//!
//! `Σ^{1/2}` is the principal (positive-definite) root: its eigenvalue along
//! `a` is `1/√(ρ+s)` and `κ → 1/(2ρ)` smoothly as `a → 0`. Every operator
//! touches each element a constant number of times and only `a` is stored.

use nalgebra::DMatrix;

use crate::error::{LorenError, Result};
use crate::params::LayerShape;
use crate::streams::{fill_gaussian, StreamCoord};

/// Largest `m·n` accepted by [`CovarianceState::dense_materialize`].
pub const DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    a: Vec<f64>,
    rho: f64,
    m: usize,
    n: usize,
    s: f64,
}

/// Explicit `mn × mn` matrices for oracle tests.
#[derive(Debug, Clone)]
pub struct DenseCovariance {
    pub sigma: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
    pub precision: DMatrix<f64>,
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(LorenError::Config(format!("damping must be positive, got {rho}")))
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

impl CovarianceState {
    /// Factor initialized to `init_scale · N(0, I_n)` drawn from `coord`.
    pub fn new(shape: LayerShape, rho: f64, init_scale: f64, coord: StreamCoord) -> Result<Self> {
        check_rho(rho)?;
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(LorenError::Config(format!(
                "init_scale must be non-negative, got {init_scale}"
            )));
        }
        let (m, n) = shape.blocks();
        let mut a = vec![0.0; n];
        if init_scale > 0.0 {
            fill_gaussian(coord, &mut a);
            a.iter_mut().for_each(|v| *v *= init_scale);
        }
        Self::from_factor(a, rho, m)
    }

    pub fn from_factor(a: Vec<f64>, rho: f64, m: usize) -> Result<Self> {
        check_rho(rho)?;
        if a.is_empty() || m == 0 {
            return Err(LorenError::Config("covariance needs m, n >= 1".into()));
        }
        let n = a.len();
        let s = dot(&a, &a);
        Ok(Self { a, rho, m, n, s })
    }

    pub fn factor(&self) -> &[f64] {
        &self.a
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Cached `‖a‖²`.
    pub fn factor_norm_sq(&self) -> f64 {
        self.s
    }

    pub fn block_count(&self) -> usize {
        self.m
    }

    pub fn block_size(&self) -> usize {
        self.n
    }

    pub fn numel(&self) -> usize {
        self.m * self.n
    }

    /// Mutates the factor and recomputes the cached norm.
    pub fn update_factor(&mut self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.a);
        self.s = dot(&self.a, &self.a);
    }

    /// Coefficient of the principal square root.
    pub fn sqrt_kappa(&self) -> f64 {
        let r = (self.rho + self.s).sqrt();
        1.0 / (r * (self.rho.sqrt() + r))
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.numel() {
            Ok(())
        } else {
            Err(LorenError::LengthMismatch {
                expected: self.numel(),
                got: len,
            })
        }
    }

    /// `w_i = ρ v_i + (aᵀ v_i) a` on each block.
    pub fn apply_precision(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let mut out = v.to_vec();
        for block in out.chunks_exact_mut(self.n) {
            let c = dot(&self.a, block);
            for (w, ai) in block.iter_mut().zip(&self.a) {
                *w = self.rho * *w + c * ai;
            }
        }
        Ok(out)
    }

    /// `w_i = (v_i − (aᵀ v_i)/(ρ + s) a) / ρ` on each block.
    pub fn apply_sigma(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let mut out = v.to_vec();
        let denom = self.rho + self.s;
        for block in out.chunks_exact_mut(self.n) {
            let c = dot(&self.a, block) / denom;
            for (w, ai) in block.iter_mut().zip(&self.a) {
                *w = (*w - c * ai) / self.rho;
            }
        }
        Ok(out)
    }

    /// Principal square root applied to one block in place.
    #[inline]
    pub fn sqrt_block_in_place(&self, block: &mut [f64]) {
        debug_assert_eq!(block.len(), self.n);
        let kappa = self.sqrt_kappa();
        let inv_sqrt_rho = 1.0 / self.rho.sqrt();
        let c = kappa * dot(&self.a, block);
        for (w, ai) in block.iter_mut().zip(&self.a) {
            *w = (*w - c * ai) * inv_sqrt_rho;
        }
    }

    /// `w_i = (u_i − κ (aᵀ u_i) a) / √ρ` on each block.
    pub fn apply_sqrt(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        let mut out = u.to_vec();
        for block in out.chunks_exact_mut(self.n) {
            self.sqrt_block_in_place(block);
        }
        Ok(out)
    }

    /// Adds the contribution of one block `w_i` of `w = Σ^{1/2} u` to the
    /// score gradient: `grad −= (aᵀ w_i) w_i`.
    #[inline]
    pub fn accumulate_score_block(&self, w_block: &[f64], weight: f64, grad: &mut [f64]) {
        let c = weight * dot(&self.a, w_block);
        for (g, wi) in grad.iter_mut().zip(w_block) {
            *g -= c * wi;
        }
    }

    /// The block-independent part of the score gradient, `m a / (ρ + s)`.
    pub fn score_offset(&self) -> Vec<f64> {
        let c = self.m as f64 / (self.rho + self.s);
        self.a.iter().map(|ai| c * ai).collect()
    }

    /// `∇_a log N(x + w; x, Σ(a)) = m a/(ρ+s) − Σ_i (aᵀ w_i) w_i`.
    pub fn log_density_grad_a(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_len(w.len())?;
        let mut grad = self.score_offset();
        for block in w.chunks_exact(self.n) {
            self.accumulate_score_block(block, 1.0, &mut grad);
        }
        Ok(grad)
    }

    /// `tr Σ = (m/ρ)(n − s/(ρ+s))`.
    pub fn trace_sigma(&self) -> f64 {
        self.m as f64 / self.rho * (self.n as f64 - self.s / (self.rho + self.s))
    }

    /// `(1/(ρ+s), 1/ρ)`: smallest and largest eigenvalues of Σ.
    pub fn eig_bounds(&self) -> (f64, f64) {
        (1.0 / (self.rho + self.s), 1.0 / self.rho)
    }

    /// Kronecker expansion of Σ, Σ^{1/2} and H.
    pub fn dense_materialize(&self) -> Result<DenseCovariance> {
        let dim = self.numel();
        if dim > DENSE_LIMIT {
            return Err(LorenError::SizeGuard {
                dim,
                limit: DENSE_LIMIT,
            });
        }
        let n = self.n;
        let aa = DMatrix::from_fn(n, n, |i, j| self.a[i] * self.a[j]);
        let eye = DMatrix::<f64>::identity(n, n);
        let sigma_block = (&eye - &aa / (self.rho + self.s)) / self.rho;
        let sqrt_block = (&eye - &aa * self.sqrt_kappa()) / self.rho.sqrt();
        let precision_block = &eye * self.rho + &aa;
        let eye_m = DMatrix::<f64>::identity(self.m, self.m);
        Ok(DenseCovariance {
            sigma: eye_m.kronecker(&sigma_block),
            sqrt: eye_m.kronecker(&sqrt_block),
            precision: eye_m.kronecker(&precision_block),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn cov(a: &[f64], rho: f64, m: usize) -> CovarianceState {
        CovarianceState::from_factor(a.to_vec(), rho, m).unwrap()
    }

    fn close(x: &[f64], y: &[f64], tol: f64) -> bool {
        x.len() == y.len() && x.iter().zip(y).all(|(a, b)| (a - b).abs() <= tol)
    }

    // Independent dense construction: H from its definition, Σ by LU inverse,
    // Σ^{1/2} by symmetric eigendecomposition.
    fn oracle(c: &CovarianceState) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = c.block_size();
        let m = c.block_count();
        let a = DVector::from_column_slice(c.factor());
        let mut h = DMatrix::zeros(m * n, m * n);
        let block = DMatrix::identity(n, n) * c.rho() + &a * a.transpose();
        for i in 0..m {
            h.view_mut((i * n, i * n), (n, n)).copy_from(&block);
        }
        let sigma = h.clone().try_inverse().unwrap();
        let eig = sigma.clone().symmetric_eigen();
        let root = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
            * eig.eigenvectors.transpose();
        (h, sigma, root)
    }

    #[test]
    fn zero_factor_is_isotropic() {
        let c = CovarianceState::new(LayerShape::Matrix { rows: 3, cols: 4 }, 0.5, 0.0, StreamCoord::new(1, 0, 0, 0)).unwrap();
        assert!(c.factor().iter().all(|&v| v == 0.0));
        let v: Vec<f64> = (0..12).map(|i| i as f64 - 3.0).collect();
        assert!(close(&c.apply_sigma(&v).unwrap(), &v.iter().map(|x| x / 0.5).collect::<Vec<_>>(), 0.0));
        assert!(close(&c.apply_precision(&v).unwrap(), &v.iter().map(|x| x * 0.5).collect::<Vec<_>>(), 0.0));
        let r = 0.5f64.sqrt();
        assert!(close(&c.apply_sqrt(&v).unwrap(), &v.iter().map(|x| x / r).collect::<Vec<_>>(), 1e-14));
        assert_eq!(c.trace_sigma(), 12.0 / 0.5);
        assert_eq!(c.eig_bounds(), (2.0, 2.0));
        assert!(c.log_density_grad_a(&v).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_by_two_hand_values() {
        let c = cov(&[1.0, 0.0], 1.0, 1);
        assert!(close(&c.apply_precision(&[1.0, 1.0]).unwrap(), &[2.0, 1.0], 1e-15));
        assert!(close(&c.apply_sigma(&[1.0, 1.0]).unwrap(), &[0.5, 1.0], 1e-15));
        assert!(close(&c.apply_sqrt(&[1.0, 0.0]).unwrap(), &[std::f64::consts::FRAC_1_SQRT_2, 0.0], 1e-15));
        assert!((c.trace_sigma() - 1.5).abs() < 1e-15);
        assert_eq!(c.eig_bounds(), (0.5, 1.0));
        let d = c.dense_materialize().unwrap();
        assert!((d.sigma[(0, 0)] - 0.5).abs() < 1e-15 && d.sigma[(0, 1)] == 0.0 && (d.sigma[(1, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dense_isotropic_two_blocks() {
        let d = cov(&[0.0], 2.0, 2).dense_materialize().unwrap();
        assert_eq!(d.sigma, DMatrix::identity(2, 2) * 0.5);
    }

    #[test]
    fn one_dimensional_score_closed_form() {
        // Σ(a) = 1/(ρ + a²); −½ Σ'/Σ = a/(ρ + a²) = 0.5 at a = ρ = 1.
        let c = cov(&[1.0], 1.0, 1);
        let g = c.log_density_grad_a(&[0.0]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_reported() {
        let c = cov(&[1.0, 2.0], 1.0, 3);
        assert_eq!(c.apply_sigma(&[0.0; 5]), Err(LorenError::LengthMismatch { expected: 6, got: 5 }));
        assert!(c.apply_precision(&[0.0; 7]).is_err());
        assert!(c.apply_sqrt(&[0.0; 2]).is_err());
        assert!(c.log_density_grad_a(&[0.0; 4]).is_err());
    }

    #[test]
    fn rejects_bad_damping_and_scale() {
        let s = LayerShape::Vector { len: 3 };
        let c = StreamCoord::new(0, 0, 0, 0);
        assert!(matches!(CovarianceState::new(s, 0.0, 1.0, c), Err(LorenError::Config(_))));
        assert!(matches!(CovarianceState::new(s, -1.0, 1.0, c), Err(LorenError::Config(_))));
        assert!(matches!(CovarianceState::new(s, 1.0, -1.0, c), Err(LorenError::Config(_))));
    }

    #[test]
    fn dense_size_guard() {
        let c = cov(&vec![0.1; 65], 1.0, 64);
        assert!(matches!(c.dense_materialize(), Err(LorenError::SizeGuard { .. })));
    }

    #[test]
    fn initialization_is_deterministic_and_concentrates() {
        let shape = LayerShape::Vector { len: 10_000 };
        for seed in 0..20 {
            let coord = StreamCoord::new(seed, u64::MAX, 0, 0);
            let c1 = CovarianceState::new(shape, 0.1, 1.0, coord).unwrap();
            let c2 = CovarianceState::new(shape, 0.1, 1.0, coord).unwrap();
            assert_eq!(c1, c2);
            let s = c1.factor_norm_sq();
            assert!((s - 1e4).abs() < 500.0, "seed {seed}: s = {s}");
        }
    }

    #[test]
    fn near_zero_factor_keeps_smooth_root() {
        let c = cov(&[1e-8, 0.0, 0.0], 0.1, 2);
        assert!((c.sqrt_kappa() - 1.0 / (2.0 * 0.1)).abs() < 1e-9);
        assert!(c.apply_sqrt(&[1.0; 6]).unwrap().iter().all(|v| v.is_finite()));
        let zero = cov(&[0.0, 0.0], 0.1, 1);
        assert!(zero.apply_sqrt(&[1.0, -1.0]).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn million_element_apply_is_linear_time() {
        let n = 1000;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let c = cov(&a, 0.1, 1000);
        let v: Vec<f64> = (0..n * 1000).map(|i| (i as f64 * 0.011).cos()).collect();
        let start = std::time::Instant::now();
        let w = c.apply_sqrt(&v).unwrap();
        let w = c.apply_sigma(&w).unwrap();
        let w = c.apply_precision(&w).unwrap();
        let elapsed = start.elapsed();
        assert_eq!(w.len(), v.len());
        // three passes, generous margin for unoptimized test builds
        assert!(elapsed.as_millis() < 150, "{elapsed:?}");
    }

    fn case() -> impl Strategy<Value = (usize, Vec<f64>, f64, Vec<f64>)> {
        (1usize..=8, 1usize..=8, prop::sample::select(vec![0.01, 0.1, 1.0])).prop_flat_map(|(m, n, rho)| {
            (
                Just(m),
                prop::collection::vec(-2.0f64..2.0, n),
                Just(rho),
                prop::collection::vec(-3.0f64..3.0, m * n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn blockwise_matches_dense_oracle((m, a, rho, v) in case()) {
            let c = cov(&a, rho, m);
            let (h, sigma, root) = oracle(&c);
            let vv = DVector::from_column_slice(&v);
            let want_p = &h * &vv;
            let want_s = &sigma * &vv;
            let want_r = &root * &vv;
            let got_p = c.apply_precision(&v).unwrap();
            let got_s = c.apply_sigma(&v).unwrap();
            let got_r = c.apply_sqrt(&v).unwrap();
            let scale = 1.0 + vv.amax() / rho;
            prop_assert!(close(&got_p, want_p.as_slice(), 1e-10 * scale));
            prop_assert!(close(&got_s, want_s.as_slice(), 1e-10 * scale));
            prop_assert!(close(&got_r, want_r.as_slice(), 1e-10 * scale));

            let dense = c.dense_materialize().unwrap();
            prop_assert!((&dense.precision * &dense.sigma - DMatrix::identity(c.numel(), c.numel())).amax() < 1e-10);
            prop_assert!((&dense.sqrt * dense.sqrt.transpose() - &dense.sigma).amax() < 1e-10);
        }

        #[test]
        fn round_trips((m, a, rho, v) in case()) {
            let c = cov(&a, rho, m);
            let back = c.apply_precision(&c.apply_sigma(&v).unwrap()).unwrap();
            prop_assert!(close(&back, &v, 1e-10));
            let twice = c.apply_sqrt(&c.apply_sqrt(&v).unwrap()).unwrap();
            let once = c.apply_sigma(&v).unwrap();
            prop_assert!(close(&twice, &once, 1e-10 * (1.0 + 1.0 / rho)));
        }

        #[test]
        fn trace_and_spectrum((m, a, rho, _v) in case()) {
            let c = cov(&a, rho, m);
            let (_, sigma, _) = oracle(&c);
            let dense_trace = c.dense_materialize().unwrap().sigma.trace();
            prop_assert!((c.trace_sigma() - dense_trace).abs() <= 1e-12 * dense_trace.abs());
            let (lo, hi) = c.eig_bounds();
            for ev in sigma.symmetric_eigen().eigenvalues.iter() {
                prop_assert!(*ev >= lo - 1e-12 * hi && *ev <= hi + 1e-12 * hi);
            }
        }

        #[test]
        fn cached_norm_tracks_factor(a in prop::collection::vec(-5.0f64..5.0, 1..20), delta in -1.0f64..1.0) {
            let mut c = cov(&a, 0.3, 2);
            c.update_factor(|f| f.iter_mut().for_each(|v| *v += delta));
            let s: f64 = c.factor().iter().map(|v| v * v).sum();
            prop_assert!((c.factor_norm_sq() - s).abs() <= 20.0 * f64::EPSILON * s.max(1.0));
        }
    }
}
