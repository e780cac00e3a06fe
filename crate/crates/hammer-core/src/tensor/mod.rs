//! Dense f64 tensors and a reverse-mode tape.
//!
//! Tensors are rank 0, 1, or 2; the graph normalizes everything to a
//! (rows, cols) view (scalars are 1x1, rank-1 values are row vectors).
//! No broadcasting beyond the explicitly provided ops.

mod attention;
mod gradcheck;
mod graph;

pub use attention::scaled_dot_attention;
pub use gradcheck::{all_coords, finite_diff_check, sample_coords};
pub use graph::{Graph, NodeId};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major f64 tensor of rank <= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::contract(alloc::format!(
                "tensor rank {} exceeds the supported maximum of 2",
                shape.len()
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape { op: "tensor-new", lhs: shape, rhs: alloc::vec![data.len()] });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: Vec::new(), data: alloc::vec![v] }
    }

    /// Row vector of length n.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: alloc::vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(alloc::vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, alloc::vec![0.0; numel])
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

    /// Normalized (rows, cols) view: rank 0 -> (1,1), rank 1 -> (1,n).
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1]),
        }
    }
}

/// Ordered, named collection of parameter tensors.
///
/// Insertion order is the serialization order; names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    /// Append a parameter; returns its index. Duplicate names are a bug.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::contract(alloc::format!("duplicate parameter name {name:?}")));
        }
        self.entries.push((name, t));
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar coordinates across all tensors.
    pub fn total_coords(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

#[cfg(test)]
pub(crate) fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: got {actual}, expected {expected} (tol {tol})"
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_invariant_enforced() {
        assert!(Tensor::new(alloc::vec![2, 3], alloc::vec![0.0; 5]).is_err());
        assert!(Tensor::new(alloc::vec![2, 3], alloc::vec![0.0; 6]).is_ok());
        assert!(Tensor::new(alloc::vec![2, 3, 4], alloc::vec![0.0; 24]).is_err());
    }

    #[test]
    fn dims2_normalization() {
        assert_eq!(Tensor::scalar(5.0).dims2(), (1, 1));
        assert_eq!(Tensor::vector(alloc::vec![1.0, 2.0, 3.0]).dims2(), (1, 3));
        assert_eq!(Tensor::zeros(alloc::vec![4, 2]).unwrap().dims2(), (4, 2));
    }

    #[test]
    fn param_set_rejects_duplicates() {
        let mut p = ParamSet::new();
        p.push("a", Tensor::scalar(1.0)).unwrap();
        assert!(p.push("a", Tensor::scalar(2.0)).is_err());
    }
}
