use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::SymMat;
use crate::error::{Error, Result};

/// Eigenvalues sorted descending with their orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigPair {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let p = self.values.len();
        let mut scaled = self.vectors.clone();
        for (l, &v) in self.values.iter().enumerate() {
            let w = f(v);
            scaled.column_mut(l).scale_mut(w);
        }
        let mut out = DMatrix::zeros(p, p);
        out.gemm(1.0, &scaled, &self.vectors.transpose(), 0.0);
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|v| v)
    }

    /// Leading `k` eigenvectors as a p×k block.
    pub fn leading(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }
}

/// Symmetric eigendecomposition with a deterministic sign convention.
pub fn eig_sym(a: &SymMat) -> Result<EigPair> {
    eig_sym_matrix(a.matrix())
}

/// Same as [`eig_sym`] on a raw matrix that the caller knows is symmetric.
///
/// Eigenvalues come back sorted descending; each eigenvector is flipped so its
/// largest-magnitude component (first one on ties) is positive.
pub fn eig_sym_matrix(a: &DMatrix<f64>) -> Result<EigPair> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    let p = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: DVector<f64> = eig.eigenvectors.column(src).into_owned();
        let mut best = 0;
        for r in 1..p {
            if col[r].abs() > col[best].abs() {
                best = r;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(EigPair { values, vectors })
}
