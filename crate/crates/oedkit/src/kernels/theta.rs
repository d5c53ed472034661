//! Weighting-matrix assembly and its analytic derivatives.
//!
//! In space (temporally uncorrelated) mode the weighting matrix is block
//! diagonal with identical blocks `[ω(ζ_i, ζ_j)]`. In space-time mode it is a
//! dense `Nobs × Nobs` matrix whose `(k, h)` entry is
//! `ρ(t_{τ(k)}, t_{τ(h)}) · ω(ζ_{s(k)}, ζ_{s(h)})`, with `s(k)` the sensor
//! index and `τ(k)` the time index of stacked observation `k`. Stacking is
//! time-major: observation `k` (0-based) has `s(k) = k mod Nsens` and
//! `τ(k) = k div Nsens`.

use nalgebra::{DMatrix, DVector};

use crate::error::{OedError, Result};
use crate::kernels::covariance::SpaceTimeCovariance;
use crate::kernels::weight::{Design, TemporalDecorrelation, WeightKernelSpec};
use crate::linalg::{BlockDiag, SymMatrix};
use serde::{Deserialize, Serialize};

/// Whether observation-error correlations are confined to space (block
/// diagonal over time) or span the full space-time observation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    Space,
    SpaceTime,
}

/// A matrix stored either blockwise (space mode) or dense (space-time mode).
/// Both the weighting matrix `Θ` and the weighted precision `W` share this
/// shape.
#[derive(Debug, Clone)]
pub enum StructuredMatrix {
    Blocks(BlockDiag),
    Dense(SymMatrix),
}

impl StructuredMatrix {
    pub fn dim(&self) -> usize {
        match self {
            StructuredMatrix::Blocks(b) => b.dim(),
            StructuredMatrix::Dense(m) => m.dim(),
        }
    }

    pub fn to_dense(&self) -> SymMatrix {
        match self {
            StructuredMatrix::Blocks(b) => b.to_dense(),
            StructuredMatrix::Dense(m) => m.clone(),
        }
    }
}

/// The weighting matrix `Θ(ζ)` with the kernel and design that produced it.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub theta: StructuredMatrix,
    pub kernel: WeightKernelSpec,
    pub design: Design,
}

impl WeightMatrix {
    pub fn dim(&self) -> usize {
        self.theta.dim()
    }
}

fn rho_at(temporal: Option<&TemporalDecorrelation>, t_m: f64, t_n: f64) -> f64 {
    temporal.map(|rho| rho.eval(t_m, t_n)).unwrap_or(1.0)
}

/// Assemble `Θ(ζ)`.
///
/// Space mode yields `n_t` identical `Nsens × Nsens` blocks and ignores the
/// temporal decorrelation; space-time mode yields the dense matrix with
/// entries `ρ · ω`.
pub fn build_theta(
    spec: &WeightKernelSpec,
    design: &Design,
    times: &[f64],
    mode: CorrelationMode,
) -> Result<WeightMatrix> {
    let nsens = design.len();
    let n_t = times.len();
    let theta = match mode {
        CorrelationMode::Space => {
            let mut block = DMatrix::zeros(nsens, nsens);
            for j in 0..nsens {
                for i in 0..=j {
                    let w = spec.eval(design.values[i], design.values[j])?;
                    block[(i, j)] = w;
                    block[(j, i)] = w;
                }
            }
            StructuredMatrix::Blocks(BlockDiag::repeated(
                SymMatrix::from_symmetric_unchecked(block),
                n_t,
            ))
        }
        CorrelationMode::SpaceTime => {
            let nobs = nsens * n_t;
            let mut theta = DMatrix::zeros(nobs, nobs);
            for h in 0..nobs {
                for k in 0..=h {
                    let (si, ti) = (k % nsens, k / nsens);
                    let (sj, tj) = (h % nsens, h / nsens);
                    let rho = rho_at(spec.temporal.as_ref(), times[ti], times[tj]);
                    let w = rho * spec.eval(design.values[si], design.values[sj])?;
                    theta[(k, h)] = w;
                    theta[(h, k)] = w;
                }
            }
            StructuredMatrix::Dense(SymMatrix::from_symmetric_unchecked(theta))
        }
    };
    Ok(WeightMatrix {
        theta,
        kernel: *spec,
        design: design.clone(),
    })
}

/// `Θ(ζ)` with the rows and columns of inactive sensors zeroed, at every
/// observation time. This is the limit of driving the inactive design
/// variables to zero weight, and is how a thresholded relaxed design is
/// evaluated.
pub fn build_theta_masked(
    spec: &WeightKernelSpec,
    design: &Design,
    times: &[f64],
    mode: CorrelationMode,
    active: &[bool],
) -> Result<WeightMatrix> {
    if active.len() != design.len() {
        return Err(OedError::dims(
            design.len().to_string(),
            active.len().to_string(),
            "activity mask",
        ));
    }
    let mut wm = build_theta(spec, design, times, mode)?;
    let mask = |i: usize| if active[i] { 1.0 } else { 0.0 };
    match &mut wm.theta {
        StructuredMatrix::Blocks(blocks) => {
            let nsens = design.len();
            let mut block = blocks.block(0).as_matrix().clone();
            for j in 0..nsens {
                for i in 0..nsens {
                    block[(i, j)] *= mask(i) * mask(j);
                }
            }
            *blocks = BlockDiag::repeated(SymMatrix::from_symmetric_unchecked(block), blocks.count());
        }
        StructuredMatrix::Dense(dense) => {
            let nsens = design.len();
            let mut m = dense.as_matrix().clone();
            for h in 0..m.ncols() {
                for k in 0..m.nrows() {
                    m[(k, h)] *= mask(k % nsens) * mask(h % nsens);
                }
            }
            *dense = SymMatrix::from_symmetric_unchecked(m);
        }
    }
    Ok(wm)
}

/// Weighting matrix of a binary design with unit weights: entry `(k, h)` is
/// `ρ(t_{τ(k)}, t_{τ(h)})` when both sensors are active and zero otherwise.
pub fn build_theta_binary(
    nsens: usize,
    times: &[f64],
    temporal: Option<&TemporalDecorrelation>,
    mode: CorrelationMode,
    active: &[bool],
) -> Result<StructuredMatrix> {
    if active.len() != nsens {
        return Err(OedError::dims(
            nsens.to_string(),
            active.len().to_string(),
            "activity mask",
        ));
    }
    let n_t = times.len();
    let mask = |i: usize| if active[i] { 1.0 } else { 0.0 };
    match mode {
        CorrelationMode::Space => {
            let block = DMatrix::from_fn(nsens, nsens, |i, j| mask(i) * mask(j));
            Ok(StructuredMatrix::Blocks(BlockDiag::repeated(
                SymMatrix::from_symmetric_unchecked(block),
                n_t,
            )))
        }
        CorrelationMode::SpaceTime => {
            let nobs = nsens * n_t;
            let theta = DMatrix::from_fn(nobs, nobs, |k, h| {
                mask(k % nsens)
                    * mask(h % nsens)
                    * rho_at(temporal, times[k / nsens], times[h / nsens])
            });
            Ok(StructuredMatrix::Dense(SymMatrix::from_symmetric_unchecked(
                theta,
            )))
        }
    }
}

/// Vector of kernel partial derivatives for design variable `j` (0-based):
/// entry `i` is `(1/(1+δ_ij)) ∂ω(ζ_i, ζ_j)/∂ζ_j`, so that the block derivative
/// satisfies `∂Θ/∂ζ_j = e_j ηᵀ + η e_jᵀ` exactly.
pub fn weight_partials(spec: &WeightKernelSpec, design: &Design, j: usize) -> Result<DVector<f64>> {
    let nsens = design.len();
    if j >= nsens {
        return Err(OedError::IndexOutOfRange { index: j, limit: nsens });
    }
    let mut eta = DVector::zeros(nsens);
    for i in 0..nsens {
        // Symmetric kernels make the halved total derivative at i == j equal
        // to the single-slot partial, so one expression covers both cases.
        let (_, _, dj) = spec.eval_with_partials(design.values[i], design.values[j])?;
        eta[i] = dj;
    }
    Ok(eta)
}

/// Matrix of weight derivatives with column `j` equal to
/// [`weight_partials`]`(spec, design, j)`.
pub fn weight_partials_matrix(spec: &WeightKernelSpec, design: &Design) -> Result<DMatrix<f64>> {
    let nsens = design.len();
    let mut out = DMatrix::zeros(nsens, nsens);
    for j in 0..nsens {
        out.set_column(j, &weight_partials(spec, design, j)?);
    }
    Ok(out)
}

/// Space-time vector of weight partial derivatives for sensor `i` at
/// observation time index `m` (both 0-based): entry `k` is
/// `(1/(1+δ_{i,s(k)})) ∂[ρ(t_m, t_{τ(k)}) ω(ζ_i, ζ_{s(k)})]/∂ζ_i`.
///
/// Assembling `Σ_m (e_q ϑᵀ + ϑ e_qᵀ)` with `q = i + m·Nsens` reproduces
/// `∂Θ/∂ζ_i` of the dense space-time weighting matrix.
pub fn weight_partials_spacetime(
    spec: &WeightKernelSpec,
    design: &Design,
    times: &[f64],
    i: usize,
    m: usize,
) -> Result<DVector<f64>> {
    let nsens = design.len();
    let n_t = times.len();
    if i >= nsens {
        return Err(OedError::IndexOutOfRange { index: i, limit: nsens });
    }
    if m >= n_t {
        return Err(OedError::IndexOutOfRange { index: m, limit: n_t });
    }
    let nobs = nsens * n_t;
    let mut out = DVector::zeros(nobs);
    for k in 0..nobs {
        let (sk, tk) = (k % nsens, k / nsens);
        let rho = rho_at(spec.temporal.as_ref(), times[m], times[tk]);
        if rho == 0.0 {
            continue;
        }
        let (_, di, _) = spec.eval_with_partials(design.values[i], design.values[sk])?;
        out[k] = rho * di;
    }
    Ok(out)
}

/// The weighted observation precision `W = Γ_noise⁻¹ ⊙ Θ`, in the structural
/// mode shared by the inputs.
pub fn weighted_precision(
    noise: &SpaceTimeCovariance,
    theta: &WeightMatrix,
) -> Result<StructuredMatrix> {
    if noise.nobs() != theta.dim() {
        return Err(OedError::dims(
            noise.nobs().to_string(),
            theta.dim().to_string(),
            "weighted precision",
        ));
    }
    match &theta.theta {
        StructuredMatrix::Blocks(blocks) => {
            if !noise.is_temporally_uncorrelated() {
                return Err(OedError::StructureMismatch(
                    "dense space-time noise requires a space-time weighting matrix".into(),
                ));
            }
            let mut out = Vec::with_capacity(blocks.count());
            for m in 0..blocks.count() {
                out.push(noise.precision_block(m)?.hadamard(blocks.block(m))?);
            }
            Ok(StructuredMatrix::Blocks(BlockDiag::new(out)?))
        }
        StructuredMatrix::Dense(dense) => {
            Ok(StructuredMatrix::Dense(noise.precision_dense().hadamard(dense)?))
        }
    }
}

/// Partial derivative `∂W/∂ζ_i` in structured rank-two form.
#[derive(Debug, Clone)]
pub enum PrecisionDerivative {
    /// Space mode: per time block, `∂W_m/∂ζ_i = e_i u_mᵀ + u_m e_iᵀ` with
    /// `u_m = (R_m⁻¹ e_i) ⊙ η_i`.
    Space {
        sensor: usize,
        nsens: usize,
        n_t: usize,
        block_vectors: Vec<DVector<f64>>,
    },
    /// Space-time mode: `∂W/∂ζ_i = Σ_m (e_q v_mᵀ + v_m e_qᵀ)` with
    /// `q = i + m·Nsens` and `v_m = (Γ_noise⁻¹ e_q) ⊙ ϑ_{i,m}`.
    SpaceTime {
        sensor: usize,
        nsens: usize,
        terms: Vec<(usize, DVector<f64>)>,
    },
}

impl PrecisionDerivative {
    pub fn to_dense(&self) -> SymMatrix {
        match self {
            PrecisionDerivative::Space {
                sensor,
                nsens,
                n_t,
                block_vectors,
            } => {
                let nobs = nsens * n_t;
                let mut out = DMatrix::zeros(nobs, nobs);
                for (m, u) in block_vectors.iter().enumerate() {
                    let lo = m * nsens;
                    for r in 0..*nsens {
                        out[(lo + sensor, lo + r)] += u[r];
                        out[(lo + r, lo + sensor)] += u[r];
                    }
                }
                SymMatrix::from_symmetric_unchecked(out)
            }
            PrecisionDerivative::SpaceTime { terms, .. } => {
                let nobs = terms.first().map(|(_, v)| v.len()).unwrap_or(0);
                let mut out = DMatrix::zeros(nobs, nobs);
                for (q, v) in terms {
                    for r in 0..nobs {
                        out[(*q, r)] += v[r];
                        out[(r, *q)] += v[r];
                    }
                }
                SymMatrix::from_symmetric_unchecked(out)
            }
        }
    }
}

/// Analytic `∂W/∂ζ_i` for the weighted precision `W = Γ_noise⁻¹ ⊙ Θ(ζ)`.
pub fn weighted_precision_derivative(
    noise: &SpaceTimeCovariance,
    spec: &WeightKernelSpec,
    design: &Design,
    times: &[f64],
    i: usize,
    mode: CorrelationMode,
) -> Result<PrecisionDerivative> {
    let nsens = design.len();
    if i >= nsens {
        return Err(OedError::IndexOutOfRange { index: i, limit: nsens });
    }
    let n_t = times.len();
    match mode {
        CorrelationMode::Space => {
            let eta = weight_partials(spec, design, i)?;
            let mut block_vectors = Vec::with_capacity(n_t);
            for m in 0..n_t {
                let rcol = noise.precision_block(m)?.as_matrix().column(i).into_owned();
                block_vectors.push(rcol.component_mul(&eta));
            }
            Ok(PrecisionDerivative::Space {
                sensor: i,
                nsens,
                n_t,
                block_vectors,
            })
        }
        CorrelationMode::SpaceTime => {
            let mut terms = Vec::with_capacity(n_t);
            for m in 0..n_t {
                let q = i + m * nsens;
                let vartheta = weight_partials_spacetime(spec, design, times, i, m)?;
                let pcol = noise.precision_column(q)?;
                terms.push((q, pcol.component_mul(&vartheta)));
            }
            Ok(PrecisionDerivative::SpaceTime { sensor: i, nsens, terms })
        }
    }
}
