//! Space-time observation error covariance and its cached precision.

use nalgebra::{DMatrix, DVector};

use crate::error::{OedError, Result};
use crate::linalg::{spd_factorize, BlockDiag, SymMatrix};
use crate::rng::Rng;

/// Storage for an observation covariance (or precision) in one of three
/// structural modes: diagonal, block-diagonal per time (`⊕ R_m`), or dense
/// space-time.
#[derive(Debug, Clone)]
pub enum CovarianceData {
    /// Full diagonal of length `Nobs`.
    Diagonal(DVector<f64>),
    /// One spatial block per observation time.
    SpaceBlocks(BlockDiag),
    /// Dense `Nobs × Nobs` matrix.
    Dense(SymMatrix),
}

impl CovarianceData {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceData::Diagonal(d) => d.len(),
            CovarianceData::SpaceBlocks(b) => b.dim(),
            CovarianceData::Dense(m) => m.dim(),
        }
    }

    pub fn to_dense(&self) -> SymMatrix {
        match self {
            CovarianceData::Diagonal(d) => SymMatrix::from_diagonal(d),
            CovarianceData::SpaceBlocks(b) => b.to_dense(),
            CovarianceData::Dense(m) => m.clone(),
        }
    }
}

/// Observation error covariance `Γ_noise` with its inverse cached in the same
/// structural mode.
#[derive(Debug, Clone)]
pub struct SpaceTimeCovariance {
    nsens: usize,
    n_t: usize,
    data: CovarianceData,
    precision: CovarianceData,
}

impl SpaceTimeCovariance {
    /// Diagonal covariance from per-observation variances.
    pub fn diagonal(variances: DVector<f64>, nsens: usize, n_t: usize) -> Result<Self> {
        if variances.len() != nsens * n_t {
            return Err(OedError::dims(
                (nsens * n_t).to_string(),
                variances.len().to_string(),
                "diagonal covariance",
            ));
        }
        if let Some(idx) = variances.iter().position(|&v| v.is_nan() || v <= 0.0) {
            return Err(OedError::NotPositiveDefinite { pivot: idx });
        }
        let precision = CovarianceData::Diagonal(variances.map(|v| 1.0 / v));
        Ok(SpaceTimeCovariance {
            nsens,
            n_t,
            data: CovarianceData::Diagonal(variances),
            precision,
        })
    }

    /// Diagonal covariance with one variance per sensor, repeated over time.
    pub fn diagonal_stationary(sensor_variances: &DVector<f64>, n_t: usize) -> Result<Self> {
        let nsens = sensor_variances.len();
        let mut v = DVector::zeros(nsens * n_t);
        for m in 0..n_t {
            v.rows_mut(m * nsens, nsens).copy_from(sensor_variances);
        }
        SpaceTimeCovariance::diagonal(v, nsens, n_t)
    }

    /// Block-diagonal covariance `⊕_m R_m` with one spatial block per time.
    pub fn from_blocks(blocks: BlockDiag) -> Result<Self> {
        let nsens = blocks.block_dim();
        let n_t = blocks.count();
        let precision = CovarianceData::SpaceBlocks(blocks.inverse()?);
        Ok(SpaceTimeCovariance {
            nsens,
            n_t,
            data: CovarianceData::SpaceBlocks(blocks),
            precision,
        })
    }

    /// Dense space-time covariance.
    pub fn from_dense(cov: SymMatrix, nsens: usize, n_t: usize) -> Result<Self> {
        if cov.dim() != nsens * n_t {
            return Err(OedError::dims(
                (nsens * n_t).to_string(),
                cov.dim().to_string(),
                "dense covariance",
            ));
        }
        let precision = CovarianceData::Dense(spd_factorize(&cov)?.inverse());
        Ok(SpaceTimeCovariance {
            nsens,
            n_t,
            data: CovarianceData::Dense(cov),
            precision,
        })
    }

    pub fn nsens(&self) -> usize {
        self.nsens
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn nobs(&self) -> usize {
        self.nsens * self.n_t
    }

    pub fn data(&self) -> &CovarianceData {
        &self.data
    }

    pub fn precision(&self) -> &CovarianceData {
        &self.precision
    }

    /// True when the covariance carries no cross-time blocks.
    pub fn is_temporally_uncorrelated(&self) -> bool {
        !matches!(self.data, CovarianceData::Dense(_))
    }

    /// Spatial precision block `R_m⁻¹` for time index `m` (0-based).
    /// Only defined for diagonal or block-diagonal covariances.
    pub fn precision_block(&self, m: usize) -> Result<SymMatrix> {
        if m >= self.n_t {
            return Err(OedError::IndexOutOfRange {
                index: m,
                limit: self.n_t,
            });
        }
        match &self.precision {
            CovarianceData::Diagonal(d) => {
                let seg = d.rows(m * self.nsens, self.nsens).into_owned();
                Ok(SymMatrix::from_diagonal(&seg))
            }
            CovarianceData::SpaceBlocks(b) => Ok(b.block(m).clone()),
            CovarianceData::Dense(_) => Err(OedError::StructureMismatch(
                "dense space-time covariance has no per-time precision blocks".into(),
            )),
        }
    }

    /// Column `q` of the full precision matrix `Γ_noise⁻¹` (0-based).
    pub fn precision_column(&self, q: usize) -> Result<DVector<f64>> {
        let nobs = self.nobs();
        if q >= nobs {
            return Err(OedError::IndexOutOfRange { index: q, limit: nobs });
        }
        let mut col = DVector::zeros(nobs);
        match &self.precision {
            CovarianceData::Diagonal(d) => col[q] = d[q],
            CovarianceData::SpaceBlocks(b) => {
                let m = q / self.nsens;
                let i = q % self.nsens;
                let block_col = b.block(m).as_matrix().column(i);
                col.rows_mut(m * self.nsens, self.nsens).copy_from(&block_col);
            }
            CovarianceData::Dense(p) => col.copy_from(&p.as_matrix().column(q)),
        }
        Ok(col)
    }

    pub fn precision_dense(&self) -> SymMatrix {
        self.precision.to_dense()
    }

    /// Draw one noise realization `δ ~ N(0, Γ_noise)`.
    pub fn sample_noise(&self, rng: &mut Rng) -> Result<DVector<f64>> {
        let nobs = self.nobs();
        let xi = DVector::from_fn(nobs, |_, _| crate::rng::standard_normal(rng));
        match &self.data {
            CovarianceData::Diagonal(d) => Ok(d.map(f64::sqrt).component_mul(&xi)),
            CovarianceData::SpaceBlocks(b) => {
                let mut out = DVector::zeros(nobs);
                for m in 0..self.n_t {
                    let l = spd_factorize(b.block(m))?.l();
                    let seg = xi.rows(m * self.nsens, self.nsens).into_owned();
                    out.rows_mut(m * self.nsens, self.nsens).copy_from(&(&l * seg));
                }
                Ok(out)
            }
            CovarianceData::Dense(c) => {
                let l = spd_factorize(c)?.l();
                Ok(&l * xi)
            }
        }
    }

    /// Apply the full precision `Γ_noise⁻¹` to a vector.
    pub fn precision_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.nobs() {
            return Err(OedError::dims(
                self.nobs().to_string(),
                v.len().to_string(),
                "precision apply",
            ));
        }
        match &self.precision {
            CovarianceData::Diagonal(d) => Ok(d.component_mul(v)),
            CovarianceData::SpaceBlocks(b) => b.apply(v),
            CovarianceData::Dense(p) => Ok(p.as_matrix() * v),
        }
    }
}

/// Dense space-time covariance as the Kronecker product of a temporal
/// correlation with a spatial covariance, in time-major ordering.
pub fn kronecker_spacetime(temporal: &SymMatrix, spatial: &SymMatrix) -> Result<SpaceTimeCovariance> {
    let n_t = temporal.dim();
    let nsens = spatial.dim();
    let dense: DMatrix<f64> = temporal.as_matrix().kronecker(spatial.as_matrix());
    SpaceTimeCovariance::from_dense(SymMatrix::from_matrix(dense)?, nsens, n_t)
}
