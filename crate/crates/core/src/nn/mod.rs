//! Small differentiable network stack: directional convolutions, batch
//! normalisation, adaptive pooling, a dense block and fully connected heads,
//! with hand-written reverse-mode gradients.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod network;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointError, TensorEntry};
pub use network::{Backward, HeadKind, Mode, NetSpec, Network, Tape};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tape was recorded at network version {tape}, network is at {current}")]
    StaleTape { tape: u64, current: u64 },
    #[error("tape belongs to a different network")]
    ForeignTape,
    #[error("parameter `{0}` is missing or has the wrong shape")]
    Param(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
}

/// One named array. Buffers (`trainable == false`) hold running statistics:
/// they are saved and soft-updated but never receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetParams {
    arrays: Vec<ParamArray>,
}

impl NetParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an array and returns its index.
    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>, trainable: bool) -> Result<usize, NnError> {
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(NnError::DuplicateName(name.to_string()));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::Shape(format!("{name}: shape {shape:?} vs {} values", data.len())));
        }
        self.arrays.push(ParamArray { name: name.to_string(), shape: shape.to_vec(), data, trainable });
        Ok(self.arrays.len() - 1)
    }

    pub fn arrays(&self) -> &[ParamArray] {
        &self.arrays
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn data(&self, i: usize) -> &[f64] {
        &self.arrays[i].data
    }

    pub fn data_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.arrays[i].data
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    pub fn trainable_count(&self) -> usize {
        self.arrays.iter().filter(|a| a.trainable).map(|a| a.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.data.iter().all(|v| v.is_finite()))
    }

    /// `self ← τ·source + (1−τ)·self` over every array, buffers included.
    pub fn soft_update_from(&mut self, source: &NetParams, tau: f64) -> Result<(), NnError> {
        self.check_layout(source)?;
        for (dst, src) in self.arrays.iter_mut().zip(&source.arrays) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
        Ok(())
    }

    /// Copies values from `source`, which must have the same names and shapes.
    pub fn copy_from(&mut self, source: &NetParams) -> Result<(), NnError> {
        self.check_layout(source)?;
        for (dst, src) in self.arrays.iter_mut().zip(&source.arrays) {
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    fn check_layout(&self, other: &NetParams) -> Result<(), NnError> {
        if self.arrays.len() != other.arrays.len() {
            return Err(NnError::Shape(format!("{} arrays vs {}", self.arrays.len(), other.arrays.len())));
        }
        for (a, b) in self.arrays.iter().zip(&other.arrays) {
            if a.name != b.name || a.shape != b.shape {
                return Err(NnError::Param(b.name.clone()));
            }
        }
        Ok(())
    }
}

/// Gradients aligned with [`NetParams`]; buffer slots stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like(params: &NetParams) -> Self {
        Self(params.arrays().iter().map(|a| vec![0.0; a.data.len()]).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            for v in g {
                *v *= s;
            }
        }
    }
}
