//! Triplet assembly of per-vertex 3x3 blocks and the sparse Cholesky solve.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};

/// Square sparse matrix in coordinate form; duplicate entries add up.
#[derive(Clone, Debug, Default)]
pub struct SparseMatrix {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }
}

/// Accumulates symmetric per-vertex blocks.
///
/// With `lower_only` set, only entries on or below the diagonal are kept,
/// which is what the Cholesky factorization reads.
pub(crate) struct BlockAssembler {
    dim: usize,
    lower_only: bool,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl BlockAssembler {
    pub fn new(vertices: usize, lower_only: bool) -> Self {
        BlockAssembler {
            dim: 3 * vertices,
            lower_only,
            entries: Vec::new(),
        }
    }

    pub fn reserve(&mut self, blocks: usize) {
        self.entries.reserve(blocks * 9);
    }

    /// Adds the `(va, vb)` block of a symmetric matrix.
    pub fn add_block(&mut self, va: usize, vb: usize, block: &Matrix3<f64>) {
        if self.lower_only && va < vb {
            return;
        }
        for i in 0..3 {
            for k in 0..3 {
                if self.lower_only && va == vb && k > i {
                    continue;
                }
                let v = block[(i, k)];
                if v != 0.0 {
                    self.entries.push(Triplet::new(3 * va + i, 3 * vb + k, v));
                }
            }
        }
    }

    pub fn add_diagonal(&mut self, dof: usize, v: f64) {
        self.entries.push(Triplet::new(dof, dof, v));
    }

    pub fn into_matrix(self) -> SparseMatrix {
        SparseMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|t| (t.row, t.col, t.val)).collect(),
        }
    }

    /// Solves `H x = rhs` by sparse Cholesky; `H` must be symmetric positive definite.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        debug_assert!(self.lower_only);
        let h = SparseColMat::<usize, f64>::try_new_from_triplets(self.dim, self.dim, &self.entries)
            .map_err(|e| Error::Integration(format!("sparse assembly failed: {e:?}")))?;
        let llt = h
            .sp_cholesky(faer::Side::Lower)
            .map_err(|e| Error::Integration(format!("Hessian is not positive definite: {e:?}")))?;
        let b = Col::<f64>::from_fn(self.dim, |i| rhs[i]);
        let x = llt.solve(&b);
        Ok((0..self.dim).map(|i| x[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solve_matches_dense_with_duplicates() {
        let blocks = [
            (0, 0, Matrix3::new(4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0)),
            (1, 1, Matrix3::identity() * 5.0),
            (0, 1, Matrix3::new(0.3, 0.0, 0.1, 0.2, -0.1, 0.0, 0.0, 0.4, 0.2)),
            (0, 0, Matrix3::identity()),
        ];
        let mut lower = BlockAssembler::new(2, true);
        let mut full = BlockAssembler::new(2, false);
        for (a, b, m) in &blocks {
            for asm in [&mut lower, &mut full] {
                asm.add_block(*a, *b, m);
                if a != b {
                    asm.add_block(*b, *a, &m.transpose());
                }
            }
        }
        let dense = full.into_matrix().to_dense();
        let rhs = [1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let x = lower.solve(&rhs).unwrap();
        let r = &dense * nalgebra::DVector::from_column_slice(&x) - nalgebra::DVector::from_column_slice(&rhs);
        assert!(r.norm() < 1e-12, "residual {}", r.norm());
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = BlockAssembler::new(1, true);
        a.add_block(0, 0, &Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, -1.0, 1.0)));
        assert!(a.solve(&[1.0, 1.0, 1.0]).is_err());
    }
}
