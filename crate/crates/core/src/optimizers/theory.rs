use super::check_positive;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeDiagnostic {
    /// `1 / (8 √T L (max tr Σ + 2/ρ))`.
    pub eta: f64,
    /// `ρ / (8 √T L (m(n−1) + 2))`, when a layer shape `(m, n)` is supplied.
    pub upper_bound: Option<f64>,
}

/// Step size of the O(1/√T) stationarity guarantee and its shape-only bound.
///
/// `max_trace` is the largest `tr Σ_t` over the run; using the maximum keeps
/// the step conservative.
pub fn theory_step_size(
    smoothness: f64,
    horizon: u64,
    max_trace: f64,
    rho: f64,
    shape: Option<(usize, usize)>,
) -> Result<StepSizeDiagnostic> {
    check_positive("smoothness L", smoothness)?;
    check_positive("horizon T", horizon as f64)?;
    check_positive("max_trace", max_trace)?;
    check_positive("rho", rho)?;
    let root_t = (horizon as f64).sqrt();
    let eta = 1.0 / (8.0 * root_t * smoothness * (max_trace + 2.0 / rho));
    let upper_bound = shape.map(|(m, n)| rho / (8.0 * root_t * smoothness * ((m * (n - 1)) as f64 + 2.0)));
    Ok(StepSizeDiagnostic { eta, upper_bound })
}
