//! Sorted sparse vectors used for feature rows and sparse gradients.

use crate::error::{Error, Result};

/// A sparse vector in canonical form: indices strictly increasing, all below
/// `dim`, and no stored zeros. Two vectors compare equal iff their entry lists
/// and dimensions are identical.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    entries: Vec<(usize, f64)>,
    dim: usize,
}

impl SparseVec {
    pub fn zeros(dim: usize) -> Self {
        SparseVec {
            entries: Vec::new(),
            dim,
        }
    }

    /// Builds a vector from entries that must already be strictly increasing.
    /// Zero values are dropped.
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        for (pos, w) in entries.windows(2).enumerate() {
            if w[0].0 >= w[1].0 {
                return Err(Error::UnsortedIndices { position: pos + 1 });
            }
        }
        if let Some(&(index, _)) = entries.iter().find(|(i, _)| *i >= dim) {
            return Err(Error::DimensionMismatch { index, dim });
        }
        let entries = entries.into_iter().filter(|&(_, v)| v != 0.0).collect();
        Ok(SparseVec { entries, dim })
    }

    /// Sorts the entries first. Duplicate indices are rejected.
    pub fn from_unsorted(dim: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(i, _)| i);
        Self::new(dim, entries)
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        SparseVec {
            entries,
            dim: values.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    /// Largest stored index plus one, or zero for an empty vector.
    pub fn support_end(&self) -> usize {
        self.entries.last().map_or(0, |&(i, _)| i + 1)
    }

    /// Widens (or narrows, if still valid) the declared dimension.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if self.support_end() > dim {
            return Err(Error::DimensionMismatch {
                index: self.support_end() - 1,
                dim,
            });
        }
        self.dim = dim;
        Ok(self)
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.entries.binary_search_by_key(&index, |&(i, _)| i) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    /// Inner product with a dense vector of length `dim`.
    pub fn dot(&self, dense: &[f64]) -> f64 {
        debug_assert!(dense.len() >= self.support_end());
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    /// `dense += alpha * self`.
    pub fn axpy_into(&self, alpha: f64, dense: &mut [f64]) {
        for &(i, v) in &self.entries {
            dense[i] += alpha * v;
        }
    }

    pub fn scaled(&self, alpha: f64) -> SparseVec {
        if alpha == 0.0 {
            return SparseVec::zeros(self.dim);
        }
        let entries = self
            .entries
            .iter()
            .map(|&(i, v)| (i, alpha * v))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        SparseVec {
            entries,
            dim: self.dim,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Borrowed row of a compressed sparse row matrix. Indices are strictly
/// increasing and below the matrix dimension.
#[derive(Debug, Clone, Copy)]
pub struct SparseRow<'a> {
    indices: &'a [u32],
    values: &'a [f64],
    dim: usize,
}

impl<'a> SparseRow<'a> {
    pub(crate) fn new(indices: &'a [u32], values: &'a [f64], dim: usize) -> Self {
        debug_assert_eq!(indices.len(), values.len());
        SparseRow {
            indices,
            values,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.indices
            .iter()
            .map(|&i| i as usize)
            .zip(self.values.iter().copied())
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&i, v)| v * dense[i as usize])
            .sum()
    }

    /// `dense += alpha * self`.
    pub fn axpy_into(&self, alpha: f64, dense: &mut [f64]) {
        for (&i, v) in self.indices.iter().zip(self.values) {
            dense[i as usize] += alpha * v;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_sparse(&self) -> SparseVec {
        SparseVec {
            entries: self.iter().collect(),
            dim: self.dim,
        }
    }
}

/// Euclidean norm of a dense slice.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_and_out_of_range() {
        assert!(matches!(
            SparseVec::new(5, vec![(2, 1.0), (1, 1.0)]),
            Err(Error::UnsortedIndices { position: 1 })
        ));
        assert!(matches!(
            SparseVec::new(3, vec![(0, 1.0), (3, 1.0)]),
            Err(Error::DimensionMismatch { index: 3, dim: 3 })
        ));
        assert!(SparseVec::from_unsorted(4, vec![(1, 1.0), (1, 2.0)]).is_err());
    }

    #[test]
    fn zeros_are_dropped() {
        let v = SparseVec::new(4, vec![(0, 0.0), (2, 3.0)]).unwrap();
        assert_eq!(v.entries(), &[(2, 3.0)]);
        assert_eq!(v, SparseVec::from_dense(&[0.0, 0.0, 3.0, 0.0]));
    }

    #[test]
    fn dot_and_axpy() {
        let v = SparseVec::new(4, vec![(1, 2.0), (3, -1.0)]).unwrap();
        assert_eq!(v.dot(&[1.0, 1.0, 1.0, 5.0]), -3.0);
        let mut d = vec![1.0; 4];
        v.axpy_into(2.0, &mut d);
        assert_eq!(d, vec![1.0, 5.0, 1.0, -1.0]);
        assert_eq!(v.get(3), -1.0);
        assert_eq!(v.get(2), 0.0);
        assert_eq!(v.norm_sq(), 5.0);
    }
}
