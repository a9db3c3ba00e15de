//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Everything in the model — token matrices, prompt banks, encoder and
//! head weights — is a [`Tensor`]. Trainable state wraps a tensor in a
//! named [`Parameter`] carrying a freeze flag; gradients are recorded on
//! a per-forward [`Graph`](graph::Graph) and applied by [`adam::Adam`],
//! which masks updates to frozen parameters.

mod adam;
mod archive;
mod graph;
mod init;
mod store;

pub use adam::Adam;
pub use archive::{archive_bytes, parse_archive, read_archive, write_archive};
pub use graph::{Graph, NodeId};
pub(crate) use graph::gelu_slice;
pub use init::{derive_seed, splitmix64, xavier_uniform_init};
pub use store::{ParamId, ParamStore};

use crate::error::{Error, Result};

/// A dense row-major f64 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false }
    }

    /// 2-D constructor from nested rows; rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named, possibly frozen model parameter.
///
/// Frozen parameters still participate in forward passes and may receive
/// gradients on the tape, but the optimizer never applies updates to them.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, mut tensor: Tensor) -> Self {
        tensor.requires_grad = true;
        Parameter { name: name.into(), tensor, frozen: false }
    }

    pub fn frozen(name: impl Into<String>, tensor: Tensor) -> Self {
        let mut p = Parameter::new(name, tensor);
        p.frozen = true;
        p
    }
}
