//! Flat parameter storage with a per-layer block partition.

use crate::error::{LorenError, Result};

/// Shape of one layer. Matrix layers are stored row-major; each row is one
/// covariance block, so the factor `a` lives on the column (fan-in) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Matrix { rows: usize, cols: usize },
    Vector { len: usize },
}

impl LayerShape {
    pub fn numel(&self) -> usize {
        match *self {
            LayerShape::Matrix { rows, cols } => rows * cols,
            LayerShape::Vector { len } => len,
        }
    }

    /// `(m, n)`: block count and block size. A vector layer is a single block.
    pub fn blocks(&self) -> (usize, usize) {
        match *self {
            LayerShape::Matrix { rows, cols } => (rows, cols),
            LayerShape::Vector { len } => (1, len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterLayout {
    shapes: Vec<LayerShape>,
    offsets: Vec<usize>,
    total: usize,
}

impl ParameterLayout {
    pub fn new(shapes: Vec<LayerShape>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(LorenError::Config("layout needs at least one layer".into()));
        }
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            if s.numel() == 0 {
                return Err(LorenError::Config(format!("empty layer {s:?}")));
            }
            offsets.push(total);
            total += s.numel();
        }
        Ok(Self {
            shapes,
            offsets,
            total,
        })
    }

    /// Single vector layer of length `dim`.
    pub fn vector(dim: usize) -> Result<Self> {
        Self::new(vec![LayerShape::Vector { len: dim }])
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.offsets[layer];
        start..start + self.shapes[layer].numel()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    layout: ParameterLayout,
    data: Vec<f64>,
}

impl ParameterSet {
    pub fn new(layout: ParameterLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total_len() {
            return Err(LorenError::LengthMismatch {
                expected: layout.total_len(),
                got: data.len(),
            });
        }
        Ok(Self { layout, data })
    }

    pub fn zeros(layout: ParameterLayout) -> Self {
        let data = vec![0.0; layout.total_len()];
        Self { layout, data }
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.data[self.layout.range(i)]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.range(i);
        &mut self.data[r]
    }

    /// Iterates the `(m, n)` blocks of layer `i` as contiguous row slices.
    pub fn blocks(&self, i: usize) -> std::slice::ChunksExact<'_, f64> {
        let (_, n) = self.layout.shapes[i].blocks();
        self.layer(i).chunks_exact(n)
    }
}
