//! Symmetric positive-definite matrices with a cached spectral factorization.
//!
//! Every density, score and transport evaluation needs solves and
//! log-determinants; the decomposition is computed once at construction and
//! reused. Functions of the matrix (inverse, square root, the one-shot and
//! continuous pushforward updates) are applied on the spectrum, so the
//! eigenvectors stay fixed under those updates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance for symmetry, absolute on entries scaled by the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue relative to the largest one.
pub const CONDITION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Spd {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
}

impl Spd {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::NotSpd(format!(
                "expected a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd("non-finite entry".into()));
        }
        let scale = matrix.amax().max(1.0);
        let n = matrix.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSpd(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        Self::from_spectrum(matrix, eig.eigenvalues, eig.eigenvectors)
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::NotSpd("covariance rows must form a square matrix".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim]).expect("identity is SPD")
    }

    fn from_spectrum(
        matrix: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        eigenvectors: DMatrix<f64>,
    ) -> Result<Self> {
        let max = eigenvalues.max();
        let min = eigenvalues.min();
        if !(min > 0.0) || min <= CONDITION_FLOOR * max {
            return Err(Error::NotSpd(format!(
                "eigenvalues must satisfy min > {CONDITION_FLOOR:e} * max (min {min:e}, max {max:e})"
            )));
        }
        let inv_diag = eigenvalues.map(|l| 1.0 / l);
        let inverse = &eigenvectors * DMatrix::from_diagonal(&inv_diag) * eigenvectors.transpose();
        let log_det = eigenvalues.iter().map(|l| l.ln()).sum();
        Ok(Self {
            matrix,
            eigenvalues,
            eigenvectors,
            inverse,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.max()
    }

    /// `V diag(f(λ)) Vᵀ` for an arbitrary scalar function of the spectrum.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.eigenvalues.map(f);
        &self.eigenvectors * DMatrix::from_diagonal(&d) * self.eigenvectors.transpose()
    }

    /// A new SPD matrix with the same eigenvectors and transformed eigenvalues.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let eigenvalues = self.eigenvalues.map(f);
        let matrix = self.spectral_map_with(&eigenvalues);
        Self::from_spectrum(matrix, eigenvalues, self.eigenvectors.clone())
    }

    /// `Σ + tI`. The diagonal is shifted entrywise so that the stored matrix
    /// is exactly the sum, and the cached spectrum shifts by `t`.
    pub fn add_identity(&self, t: f64) -> Result<Self> {
        let mut matrix = self.matrix.clone();
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += t;
        }
        let eigenvalues = self.eigenvalues.map(|l| l + t);
        Self::from_spectrum(matrix, eigenvalues, self.eigenvectors.clone())
    }

    /// Square-root factor `V diag(√λ)` used for sampling.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        let d = self.eigenvalues.map(f64::sqrt);
        &self.eigenvectors * DMatrix::from_diagonal(&d)
    }

    fn spectral_map_with(&self, eigenvalues: &DVector<f64>) -> DMatrix<f64> {
        let m = &self.eigenvectors * DMatrix::from_diagonal(eigenvalues) * self.eigenvectors.transpose();
        (&m + m.transpose()) * 0.5
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.matrix)
    }
}

impl Serialize for Spd {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// `Aᵀ A`-style quadratic form `vᵀ M v`.
pub(crate) fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(Spd::new(m), Err(Error::NotSpd(_))));
    }

    #[test]
    fn rejects_indefinite_and_ill_conditioned() {
        assert!(Spd::diagonal(&[1.0, -1.0]).is_err());
        assert!(Spd::diagonal(&[1.0, 0.0]).is_err());
        assert!(Spd::diagonal(&[1.0, 1e-13]).is_err());
        assert!(Spd::diagonal(&[1.0, 2e-12]).is_ok());
    }

    #[test]
    fn inverse_and_log_det() {
        let s = Spd::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let id = s.matrix() * s.inverse();
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((s.log_det() - (1.75f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn shift_updates_spectrum() {
        let s = Spd::diagonal(&[2.0, 1.0]).unwrap();
        let t = s.add_identity(0.5).unwrap();
        assert_eq!(t.matrix()[(0, 0)], 2.5);
        assert_eq!(t.matrix()[(1, 1)], 1.5);
        assert!((t.min_eigenvalue() - 1.5).abs() < 1e-15);
    }
}
