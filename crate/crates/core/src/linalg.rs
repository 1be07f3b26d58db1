//! Sparse symmetric positive definite systems with a fixed sparsity pattern.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::{CscCholesky, CscSymbolicCholesky};
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::CscMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
}

/// Column-compressed symmetric pattern plus its symbolic Cholesky analysis.
#[derive(Debug, Clone)]
pub struct SymmetricPattern {
    pattern: SparsityPattern,
    symbolic: CscSymbolicCholesky,
}

impl SymmetricPattern {
    /// Builds the pattern from (row, col) pairs; both triangles must be listed.
    pub fn from_entries(n: usize, entries: &[(usize, usize)]) -> Self {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(r, c) in entries {
            cols[c].push(r);
        }
        for (c, col) in cols.iter_mut().enumerate() {
            col.push(c);
            col.sort_unstable();
            col.dedup();
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for col in &cols {
            indices.extend_from_slice(col);
            offsets.push(indices.len());
        }
        let pattern = SparsityPattern::try_from_offsets_and_indices(n, n, offsets, indices)
            .expect("sorted unique indices form a valid pattern");
        let symbolic = CscSymbolicCholesky::factor(pattern.clone());
        Self { pattern, symbolic }
    }

    pub fn dim(&self) -> usize {
        self.pattern.major_dim()
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    /// Position of entry `(row, col)` in the value array.
    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let lane = self.pattern.lane(col);
        let start = self.pattern.major_offsets()[col];
        lane.binary_search(&row).ok().map(|k| start + k)
    }

    pub fn matrix(&self, values: Vec<f64>) -> CscMatrix<f64> {
        CscMatrix::try_from_pattern_and_values(self.pattern.clone(), values)
            .expect("value count matches the pattern")
    }

    pub fn factor(&self, values: &[f64]) -> Result<SymmetricFactor, LinalgError> {
        let chol = CscCholesky::factor_numerical(self.symbolic.clone(), values)
            .map_err(|_| LinalgError::NotPositiveDefinite)?;
        Ok(SymmetricFactor {
            chol,
            matrix: self.matrix(values.to_vec()),
        })
    }
}

pub struct SymmetricFactor {
    chol: CscCholesky<f64>,
    matrix: CscMatrix<f64>,
}

impl SymmetricFactor {
    /// Solves `K x = b` with one step of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let rhs = DMatrix::from_column_slice(n, 1, b);
        let mut x: Vec<f64> = self.chol.solve(&rhs).as_slice().to_vec();
        let kx = csc_matvec(&self.matrix, &x);
        let r: Vec<f64> = b.iter().zip(&kx).map(|(bi, ki)| bi - ki).collect();
        let dx = self.chol.solve(&DMatrix::from_column_slice(n, 1, &r));
        for (xi, di) in x.iter_mut().zip(dx.as_slice()) {
            *xi += di;
        }
        x
    }

    pub fn matrix(&self) -> &CscMatrix<f64> {
        &self.matrix
    }
}

pub fn csc_matvec(m: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.nrows()];
    for (c, col) in m.col_iter().enumerate() {
        let xc = x[c];
        for (&r, &v) in col.row_indices().iter().zip(col.values()) {
            y[r] += v * xc;
        }
    }
    y
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_system() {
        let n = 40;
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i));
            if i + 1 < n {
                entries.push((i, i + 1));
                entries.push((i + 1, i));
            }
        }
        let pat = SymmetricPattern::from_entries(n, &entries);
        let mut values = vec![0.0; pat.nnz()];
        for i in 0..n {
            values[pat.slot(i, i).unwrap()] = 2.0 + 1e-3 * i as f64;
            if i + 1 < n {
                values[pat.slot(i, i + 1).unwrap()] = -1.0;
                values[pat.slot(i + 1, i).unwrap()] = -1.0;
            }
        }
        let f = pat.factor(&values).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b);
        let kx = csc_matvec(f.matrix(), &x);
        let res: Vec<f64> = kx.iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(norm2(&res) / norm2(&b) <= 1e-12);
        assert!(pat.slot(0, 5).is_none());
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let pat = SymmetricPattern::from_entries(2, &[(0, 1), (1, 0)]);
        let mut values = vec![0.0; pat.nnz()];
        values[pat.slot(0, 0).unwrap()] = 1.0;
        values[pat.slot(1, 1).unwrap()] = -1.0;
        assert!(pat.factor(&values).is_err());
    }
}
