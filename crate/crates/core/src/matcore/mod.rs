//! Dense symmetric-matrix primitives shared by every solver in the crate.
//!
//! All matrices are small (p in the tens), so everything is stored dense in
//! [`nalgebra::DMatrix`]. [`SymMat`] is the carrier for covariances and
//! projection-like estimates; rectangular data (samples) stay as plain
//! `DMatrix<f64>`.

mod eig;
mod io;
mod norm;
mod prox;

pub use eig::{eig_sym, eig_sym_matrix, EigPair};
pub use io::{read_matrix_csv, read_sym_csv, write_matrix_csv};
pub use norm::{norm, NormKind};
pub use prox::{project_l1_ball, soft_threshold, soft_threshold_matrix};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Numerical tolerances used by the solvers and checked by the tests.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Relative reconstruction error allowed for `V diag(λ) Vᵀ`.
    pub eig_reconstruction: f64,
    /// Orthonormality slack, multiplied by the dimension.
    pub orthonormality_per_dim: f64,
    /// Input asymmetry above which a matrix is flagged on construction.
    pub symmetry: f64,
    /// Most negative eigenvalue still treated as PSD.
    pub psd: f64,
    /// Target accuracy of the Fantope trace equation `Σ clamp(γ−θ,0,1) = k`.
    pub fantope_trace: f64,
}

pub const TOL: Tolerances = Tolerances {
    eig_reconstruction: 1e-8,
    orthonormality_per_dim: 1e-9,
    symmetry: 1e-12,
    psd: 1e-8,
    fantope_trace: 1e-10,
};

/// Dense real symmetric matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    data: DMatrix<f64>,
    input_asymmetry: f64,
}

impl SymMat {
    /// Builds a symmetric matrix from a square input, replacing it by `(A+Aᵀ)/2`.
    ///
    /// The largest entrywise asymmetry of the input is kept and can be queried
    /// with [`SymMat::was_asymmetric`].
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidMatrix(format!(
                "expected a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.nrows() == 0 {
            return Err(Error::InvalidMatrix("empty matrix".into()));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let mut asym: f64 = 0.0;
        let p = a.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
            }
        }
        let data = if asym == 0.0 { a } else { symmetrize(&a) };
        Ok(Self {
            data,
            input_asymmetry: asym,
        })
    }

    /// Wraps a matrix produced by an internal symmetric computation.
    ///
    /// Rounding asymmetry is removed; non-finite entries are still rejected.
    pub(crate) fn from_computed(a: DMatrix<f64>) -> Result<Self> {
        let mut s = Self::new(a)?;
        s.input_asymmetry = 0.0;
        Ok(s)
    }

    pub fn from_row_slice(p: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != p * p {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries for a {p}x{p} matrix, got {}",
                p * p,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(p, p, entries))
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            data: DMatrix::zeros(p, p),
            input_asymmetry: 0.0,
        }
    }

    pub fn identity(p: usize) -> Self {
        Self {
            data: DMatrix::identity(p, p),
            input_asymmetry: 0.0,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let mut m = DMatrix::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// True when the constructor input differed from its transpose by more than 1e-12.
    pub fn was_asymmetric(&self) -> bool {
        self.input_asymmetry > TOL.symmetry
    }

    pub fn input_asymmetry(&self) -> f64 {
        self.input_asymmetry
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    /// Trace inner product `⟨A, B⟩ = Tr(AᵀB)`.
    pub fn inner(&self, other: &SymMat) -> f64 {
        self.data.dot(&other.data)
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        norm::norm_unchecked(&self.data, kind)
    }

    /// Indices whose diagonal magnitude exceeds `eps`, ascending.
    pub fn diag_support(&self, eps: f64) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.data[(i, i)].abs() > eps)
            .collect()
    }
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.nrows();
    let mut out = a.clone();
    for j in 0..p {
        for i in (j + 1)..p {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_symmetrizes_and_flags() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        let s = SymMat::new(a).unwrap();
        assert_eq!(s.get(0, 1), 3.0);
        assert_eq!(s.get(1, 0), 3.0);
        assert!(s.was_asymmetric());
        assert_eq!(s.input_asymmetry(), 2.0);

        let b = SymMat::from_row_slice(2, &[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert!(!b.was_asymmetric());
    }

    #[test]
    fn rejects_non_finite_and_non_square() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(matches!(SymMat::new(a), Err(Error::InvalidMatrix(_))));
        let b = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(SymMat::new(b), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn inner_product_is_trace() {
        let a = SymMat::from_row_slice(2, &[1.0, 2.0, 2.0, 3.0]).unwrap();
        let b = SymMat::identity(2);
        assert_eq!(a.inner(&b), 4.0);
        assert_eq!(a.trace(), 4.0);
    }
}
