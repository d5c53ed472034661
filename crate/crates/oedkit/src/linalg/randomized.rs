//! Randomized low-rank eigendecomposition and trace-estimation probes.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{OedError, Result};
use crate::rng::Rng;

/// Leading eigenpairs returned by [`two_pass_eigs`].
pub struct EigPairs {
    /// Eigenvalues in non-increasing order.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors, one column per eigenvalue.
    pub vectors: DMatrix<f64>,
    /// Set when the operator's numerical rank fell below the requested rank,
    /// in which case fewer pairs are returned.
    pub rank_deficient: bool,
}

/// Two-pass randomized eigendecomposition of a symmetric PSD operator.
///
/// First pass sketches the range from Gaussian probes; the second pass
/// projects the operator onto the sketched basis and solves the small dense
/// eigenproblem. Exact when `rank + oversample` covers the operator's range.
pub fn two_pass_eigs<F>(
    apply: F,
    n: usize,
    rank: usize,
    oversample: usize,
    rng: &mut Rng,
) -> Result<EigPairs>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    if rank == 0 || rank + oversample > n {
        return Err(OedError::dims(
            format!("rank + oversample <= {n}"),
            format!("{rank} + {oversample}"),
            "two-pass eigendecomposition",
        ));
    }
    let k = rank + oversample;
    let probes = DMatrix::from_fn(n, k, |_, _| crate::rng::standard_normal(rng));

    // Pass 1: sketch the range. A couple of power iterations (with
    // re-orthonormalization) sharpen the subspace when the spectrum decays
    // slowly; each still costs only operator applications.
    let mut sketch = apply(&probes);
    for _ in 0..2 {
        let q = nalgebra::QR::new(sketch).q();
        sketch = apply(&q);
    }
    let q = nalgebra::QR::new(sketch).q();

    // Pass 2: project the operator onto the sketched basis.
    let aq = apply(&q);
    let small = q.transpose() * aq;
    let small = 0.5 * (&small + small.transpose());
    let eig = nalgebra::SymmetricEigen::new(small);

    // Sort by descending eigenvalue and drop numerically zero directions.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lambda_max = eig.eigenvalues[order[0]].abs();
    let cutoff = lambda_max * 1e-12 * n as f64;
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > cutoff)
        .take(rank)
        .collect();

    let mut values = DVector::zeros(kept.len());
    let mut vectors = DMatrix::zeros(n, kept.len());
    for (out, &i) in kept.iter().enumerate() {
        values[out] = eig.eigenvalues[i];
        vectors.set_column(out, &(&q * eig.eigenvectors.column(i)));
    }
    Ok(EigPairs {
        rank_deficient: kept.len() < rank,
        values,
        vectors,
    })
}

/// Matrix of `n_r` Rademacher probe columns with entries in `{-1, +1}`.
/// Deterministic for a given generator state.
pub fn rademacher_probes(n: usize, n_r: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, n_r, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 })
}
