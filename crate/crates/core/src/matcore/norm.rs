use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Entrywise and mixed matrix norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// `max |A_ij|`
    InfInf,
    /// `Σ |A_ij|`
    OneOne,
    /// Largest row ℓ2-norm.
    TwoInf,
    /// Largest column ℓ1-norm; the factor in `‖AB‖_∞,∞ ≤ ‖A‖_∞,∞ ‖B‖_1,∞`.
    OneInf,
    Frobenius,
}

/// Norm of an arbitrary (possibly rectangular) matrix.
pub fn norm(a: &DMatrix<f64>, kind: NormKind) -> Result<f64> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    Ok(norm_unchecked(a, kind))
}

pub(crate) fn norm_unchecked(a: &DMatrix<f64>, kind: NormKind) -> f64 {
    match kind {
        NormKind::InfInf => a.iter().fold(0.0, |m, x| m.max(x.abs())),
        NormKind::OneOne => a.iter().map(|x| x.abs()).sum(),
        NormKind::TwoInf => a
            .row_iter()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max),
        NormKind::OneInf => a
            .column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Frobenius => a.norm(),
    }
}
