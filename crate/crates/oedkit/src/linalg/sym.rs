//! Symmetric matrices and SPD factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{OedError, Result};

/// Relative asymmetry above which a matrix is rejected instead of silently
/// symmetrized. Guards against upstream assembly bugs.
const ASYMMETRY_TOLERANCE: f64 = 1e-8;

/// Dense symmetric matrix. Symmetry is enforced at construction by averaging
/// with the transpose; inputs whose asymmetry exceeds a small relative
/// tolerance are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Build from a general square matrix, symmetrizing as `(A + Aᵀ)/2`.
    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(OedError::dims(
                format!("{0}x{0}", a.nrows()),
                format!("{}x{}", a.nrows(), a.ncols()),
                "symmetric matrix",
            ));
        }
        let n = a.nrows();
        let mut max_abs = 0.0f64;
        let mut max_asym = 0.0f64;
        for j in 0..n {
            for i in 0..=j {
                max_abs = max_abs.max(a[(i, j)].abs()).max(a[(j, i)].abs());
                max_asym = max_asym.max((a[(i, j)] - a[(j, i)]).abs());
            }
        }
        let rel = if max_abs > 0.0 { max_asym / max_abs } else { 0.0 };
        if rel > ASYMMETRY_TOLERANCE {
            return Err(OedError::NotSymmetric {
                asymmetry: rel,
                tolerance: ASYMMETRY_TOLERANCE,
            });
        }
        let mut m = a;
        for j in 0..n {
            for i in 0..j {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(SymMatrix { m })
    }

    /// Wrap a matrix that is symmetric by construction. Debug builds verify.
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        SymMatrix { m }
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            m: DMatrix::zeros(n, n),
        }
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Self {
        SymMatrix {
            m: DMatrix::from_diagonal(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.m.diagonal()
    }

    /// Entrywise (Hadamard/Schur) product. Symmetric inputs give a symmetric
    /// result, entry by entry.
    pub fn hadamard(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim() != other.dim() {
            return Err(OedError::dims(
                format!("{0}x{0}", self.dim()),
                format!("{0}x{0}", other.dim()),
                "hadamard product",
            ));
        }
        Ok(SymMatrix {
            m: self.m.component_mul(&other.m),
        })
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix { m: &self.m * s }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim() != other.dim() {
            return Err(OedError::dims(
                format!("{0}x{0}", self.dim()),
                format!("{0}x{0}", other.dim()),
                "matrix sum",
            ));
        }
        Ok(SymMatrix {
            m: &self.m + &other.m,
        })
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.m * v
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }
}

/// Cholesky factor `A = L·Lᵀ` with cached log-determinant.
#[derive(Debug)]
pub struct CholFactor {
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `ln det A = 2 Σ ln L_ii`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Lower-triangular factor `L`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Dense inverse `A⁻¹` as a symmetric matrix.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim();
        let inv = self.chol.solve(&DMatrix::identity(n, n));
        // Solve output is symmetric up to roundoff; resymmetrize.
        SymMatrix::from_symmetric_unchecked(0.5 * (&inv + inv.transpose()))
    }
}

/// Cholesky-factorize a symmetric positive definite matrix.
///
/// A non-positive pivot yields [`OedError::NotPositiveDefinite`] naming the
/// pivot index where the factorization broke down.
pub fn spd_factorize(a: &SymMatrix) -> Result<CholFactor> {
    match Cholesky::new(a.m.clone()) {
        Some(chol) => {
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            Ok(CholFactor { chol, logdet })
        }
        None => Err(OedError::NotPositiveDefinite {
            pivot: failing_pivot(&a.m),
        }),
    }
}

/// Locate the first non-positive pivot of a failed Cholesky factorization.
/// Only runs on the error path.
fn failing_pivot(a: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let mut l = a.clone();
    for j in 0..n {
        let mut d = l[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return j;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = l[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    n.saturating_sub(1)
}
