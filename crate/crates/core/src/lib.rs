//! Zeroth-order optimization with a damped rank-one Kronecker covariance.
//!
//! Parameters are split into layers. Each layer carries a covariance
//! `Σ = I_m ⊗ (ρI + aaᵀ)⁻¹` over its `m` blocks of size `n`, and perturbations
//! are drawn from counter-based streams so they can be regenerated instead of
//! stored.

pub mod covariance;
pub mod error;
pub mod estimators;
pub mod objectives;
pub mod optimizers;
pub mod params;
pub mod streams;
pub mod verify;

pub use covariance::CovarianceState;
pub use error::{LorenError, Result};
pub use objectives::{BatchSpec, Objective};
pub use optimizers::{Loren, LorenConfig, Optimizer, RunRecord};
pub use params::{LayerShape, ParameterLayout, ParameterSet};
pub use streams::StreamCoord;
