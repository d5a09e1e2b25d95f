use std::f64::consts::{PI, TAU};

use super::{BatchSpec, Objective};
use crate::error::{LorenError, Result};
use crate::params::ParameterLayout;

macro_rules! vector_layout_impl {
    ($name:literal) => {
        fn name(&self) -> &str {
            $name
        }

        fn layout(&self) -> &ParameterLayout {
            &self.layout
        }
    };
}

/// `Σ x_i²`.
#[derive(Debug, Clone)]
pub struct Sphere {
    layout: ParameterLayout,
}

impl Sphere {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(Self {
            layout: ParameterLayout::vector(dim)?,
        })
    }
}

impl Objective for Sphere {
    vector_layout_impl!("sphere");

    fn evaluate(&self, x: &[f64], _: &BatchSpec) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn gradient(&self, x: &[f64], _: &BatchSpec) -> Option<Vec<f64>> {
        Some(x.iter().map(|v| 2.0 * v).collect())
    }
}

/// `10 d + Σ (x_i² − 10 cos(2π x_i))`.
#[derive(Debug, Clone)]
pub struct Rastrigin {
    layout: ParameterLayout,
}

impl Rastrigin {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(Self {
            layout: ParameterLayout::vector(dim)?,
        })
    }
}

impl Objective for Rastrigin {
    vector_layout_impl!("rastrigin");

    fn evaluate(&self, x: &[f64], _: &BatchSpec) -> f64 {
        10.0 * x.len() as f64 + x.iter().map(|v| v * v - 10.0 * (TAU * v).cos()).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], _: &BatchSpec) -> Option<Vec<f64>> {
        Some(x.iter().map(|v| 2.0 * v + 20.0 * PI * (TAU * v).sin()).collect())
    }
}

/// `Σ_{i<d} 100 (x_{i+1} − x_i²)² + (1 − x_i)²`.
#[derive(Debug, Clone)]
pub struct Rosenbrock {
    layout: ParameterLayout,
}

impl Rosenbrock {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(LorenError::Config(format!("rosenbrock needs d >= 2, got {dim}")));
        }
        Ok(Self {
            layout: ParameterLayout::vector(dim)?,
        })
    }
}

impl Objective for Rosenbrock {
    vector_layout_impl!("rosenbrock");

    fn evaluate(&self, x: &[f64], _: &BatchSpec) -> f64 {
        x.windows(2)
            .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
            .sum()
    }

    fn gradient(&self, x: &[f64], _: &BatchSpec) -> Option<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() - 1 {
            let r = x[i + 1] - x[i] * x[i];
            g[i] += -400.0 * x[i] * r - 2.0 * (1.0 - x[i]);
            g[i + 1] += 200.0 * r;
        }
        Some(g)
    }
}

/// `x³ − 3 x y²`: zero gradient and zero Hessian at the origin.
#[derive(Debug, Clone)]
pub struct MonkeySaddle {
    layout: ParameterLayout,
}

impl MonkeySaddle {
    pub fn new() -> Self {
        Self {
            layout: ParameterLayout::vector(2).expect("static layout"),
        }
    }
}

impl Default for MonkeySaddle {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for MonkeySaddle {
    vector_layout_impl!("monkey_saddle");

    fn evaluate(&self, p: &[f64], _: &BatchSpec) -> f64 {
        let (x, y) = (p[0], p[1]);
        x * x * x - 3.0 * x * y * y
    }

    fn gradient(&self, p: &[f64], _: &BatchSpec) -> Option<Vec<f64>> {
        let (x, y) = (p[0], p[1]);
        Some(vec![3.0 * x * x - 3.0 * y * y, -6.0 * x * y])
    }
}

/// `½ Σ h_i x_i²`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    layout: ParameterLayout,
    diag: Vec<f64>,
}

impl Quadratic {
    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        Ok(Self {
            layout: ParameterLayout::vector(diag.len())?,
            diag,
        })
    }

    /// Same curvature over an arbitrary layout (diag length must match).
    pub fn with_layout(layout: ParameterLayout, diag: Vec<f64>) -> Result<Self> {
        if diag.len() != layout.total_len() {
            return Err(LorenError::LengthMismatch {
                expected: layout.total_len(),
                got: diag.len(),
            });
        }
        Ok(Self { layout, diag })
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }
}

impl Objective for Quadratic {
    vector_layout_impl!("quadratic");

    fn evaluate(&self, x: &[f64], _: &BatchSpec) -> f64 {
        0.5 * x.iter().zip(&self.diag).map(|(v, h)| h * v * v).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], _: &BatchSpec) -> Option<Vec<f64>> {
        Some(x.iter().zip(&self.diag).map(|(v, h)| h * v).collect())
    }
}

/// `gᵀ x`.
#[derive(Debug, Clone)]
pub struct Linear {
    layout: ParameterLayout,
    coef: Vec<f64>,
}

impl Linear {
    pub fn with_layout(layout: ParameterLayout, coef: Vec<f64>) -> Result<Self> {
        if coef.len() != layout.total_len() {
            return Err(LorenError::LengthMismatch {
                expected: layout.total_len(),
                got: coef.len(),
            });
        }
        Ok(Self { layout, coef })
    }
}

impl Objective for Linear {
    vector_layout_impl!("linear");

    fn evaluate(&self, x: &[f64], _: &BatchSpec) -> f64 {
        x.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, _: &[f64], _: &BatchSpec) -> Option<Vec<f64>> {
        Some(self.coef.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Constant {
    layout: ParameterLayout,
    value: f64,
}

impl Constant {
    pub fn new(layout: ParameterLayout, value: f64) -> Self {
        Self { layout, value }
    }
}

impl Objective for Constant {
    vector_layout_impl!("constant");

    fn evaluate(&self, _: &[f64], _: &BatchSpec) -> f64 {
        self.value
    }

    fn gradient(&self, x: &[f64], _: &BatchSpec) -> Option<Vec<f64>> {
        Some(vec![0.0; x.len()])
    }
}
