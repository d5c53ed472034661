//! Kernel functions, their partial derivatives, and temporal decorrelation.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};

/// Lower clamp for SQRT-domain designs; keeps the `1/√ζ` derivative finite.
pub const SQRT_CLAMP_FLOOR: f64 = 1e-12;

/// Which weighting function populates the entries of `Θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `ω(ζ_i, ζ_j) = √ζ_i √ζ_j` on `[0, 1]`; recovers the standard OED
    /// formulation where the design values are the weights themselves.
    Sqrt,
    /// `ω(ζ_i, ζ_j) = e^{-a ζ_i} e^{-a ζ_j}`, unconstrained design.
    Exp,
    /// `ω(ζ_i, ζ_j) = 1 / (1 + e^{-a (ζ_i + ζ_j)/2})`, unconstrained design
    /// with weights inherently in `[0, 1]`.
    Sigmoid,
}

/// Temporal decorrelation families for space-time weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    /// `ρ(t_m, t_n) = exp(-d / (2 ℓ²))` with `d = |t_m - t_n|`.
    Gaussian,
    /// Fifth-order piecewise-rational function with compact support:
    /// `ρ = 0` for `d/ℓ ≥ 2`.
    GaspariCohn,
}

/// A temporal decorrelation `ρ` with its length scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalDecorrelation {
    pub kind: TemporalKind,
    pub length_scale: f64,
}

impl TemporalDecorrelation {
    pub fn new(kind: TemporalKind, length_scale: f64) -> Result<Self> {
        if length_scale.is_nan() || length_scale <= 0.0 {
            return Err(OedError::InvalidConfig(format!(
                "temporal length scale must be positive, got {length_scale}"
            )));
        }
        Ok(TemporalDecorrelation { kind, length_scale })
    }

    /// Evaluate `ρ(t_m, t_n)`; symmetric, equal to one at zero separation.
    pub fn eval(&self, t_m: f64, t_n: f64) -> f64 {
        let d = (t_m - t_n).abs();
        match self.kind {
            TemporalKind::Gaussian => (-d / (2.0 * self.length_scale * self.length_scale)).exp(),
            TemporalKind::GaspariCohn => gaspari_cohn(d / self.length_scale),
        }
    }
}

/// Gaspari-Cohn fifth-order piecewise-rational correlation function of the
/// normalized separation `υ = d/ℓ`. Compactly supported: zero for `υ ≥ 2`.
pub fn gaspari_cohn(upsilon: f64) -> f64 {
    let u = upsilon.abs();
    if u < 1.0 {
        let u2 = u * u;
        let u3 = u2 * u;
        let u4 = u3 * u;
        let u5 = u4 * u;
        -0.25 * u5 + 0.5 * u4 + 0.625 * u3 - 5.0 / 3.0 * u2 + 1.0
    } else if u < 2.0 {
        let u2 = u * u;
        let u3 = u2 * u;
        let u4 = u3 * u;
        let u5 = u4 * u;
        u5 / 12.0 - 0.5 * u4 + 0.625 * u3 + 5.0 / 3.0 * u2 - 5.0 * u + 4.0 - 2.0 / (3.0 * u)
    } else {
        0.0
    }
}

/// Kernel choice plus its scaling and optional temporal decorrelation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightKernelSpec {
    pub kind: KernelKind,
    /// Scaling coefficient `a ≥ 1` for EXP/SIGMOID; ignored by SQRT.
    pub a: f64,
    pub temporal: Option<TemporalDecorrelation>,
}

impl WeightKernelSpec {
    pub fn new(kind: KernelKind, a: f64, temporal: Option<TemporalDecorrelation>) -> Result<Self> {
        if a.is_nan() || a < 1.0 {
            return Err(OedError::InvalidConfig(format!(
                "kernel scaling must satisfy a >= 1, got {a}"
            )));
        }
        Ok(WeightKernelSpec { kind, a, temporal })
    }

    pub fn sqrt() -> Self {
        WeightKernelSpec {
            kind: KernelKind::Sqrt,
            a: 1.0,
            temporal: None,
        }
    }

    pub fn sigmoid(a: f64) -> Self {
        WeightKernelSpec {
            kind: KernelKind::Sigmoid,
            a,
            temporal: None,
        }
    }

    pub fn exp(a: f64) -> Self {
        WeightKernelSpec {
            kind: KernelKind::Exp,
            a,
            temporal: None,
        }
    }

    pub fn with_temporal(mut self, temporal: TemporalDecorrelation) -> Self {
        self.temporal = Some(temporal);
        self
    }

    /// Kernel value `ω(ζ_i, ζ_j)` and its partial derivatives with respect to
    /// each argument slot. When both arguments refer to the same design
    /// variable, the total derivative is the sum of the two partials.
    pub fn eval_with_partials(&self, zi: f64, zj: f64) -> Result<(f64, f64, f64)> {
        match self.kind {
            KernelKind::Sqrt => {
                for (idx, z) in [zi, zj].into_iter().enumerate() {
                    if z < 0.0 {
                        return Err(OedError::KernelDomain { value: z, index: idx });
                    }
                }
                let si = zi.sqrt();
                let sj = zj.sqrt();
                // Derivative is 1/(2√ζ); evaluated at the clamp floor when ζ
                // sits at the domain boundary.
                let di = 0.5 * sj / si.max(SQRT_CLAMP_FLOOR.sqrt());
                let dj = 0.5 * si / sj.max(SQRT_CLAMP_FLOOR.sqrt());
                Ok((si * sj, di, dj))
            }
            KernelKind::Exp => {
                let w = (-self.a * zi).exp() * (-self.a * zj).exp();
                Ok((w, -self.a * w, -self.a * w))
            }
            KernelKind::Sigmoid => {
                let w = 1.0 / (1.0 + (-self.a * 0.5 * (zi + zj)).exp());
                let d = 0.5 * self.a * w * (1.0 - w);
                Ok((w, d, d))
            }
        }
    }

    /// Kernel value only.
    pub fn eval(&self, zi: f64, zj: f64) -> Result<f64> {
        self.eval_with_partials(zi, zj).map(|(w, _, _)| w)
    }

    /// Diagonal weight `ω(ζ_i, ζ_i)` for every design entry.
    pub fn diagonal_weights(&self, design: &Design) -> Result<DVector<f64>> {
        let mut w = DVector::zeros(design.len());
        for i in 0..design.len() {
            w[i] = self.eval(design.values[i], design.values[i])?;
        }
        Ok(w)
    }

    /// Design value whose diagonal weight is 0.5; the standard initial guess.
    pub fn design_for_half_weight(&self) -> f64 {
        match self.kind {
            KernelKind::Sqrt => 0.5,
            KernelKind::Sigmoid => 0.0,
            KernelKind::Exp => 0.5 * std::f64::consts::LN_2 / self.a,
        }
    }

    /// Box bounds for the optimizer, where the kernel domain requires them.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.kind {
            KernelKind::Sqrt => Some((SQRT_CLAMP_FLOOR, 1.0)),
            KernelKind::Exp | KernelKind::Sigmoid => None,
        }
    }

    /// Clamp a design into the kernel's domain (no-op for unconstrained
    /// kernels).
    pub fn clamp_design(&self, design: &Design) -> Design {
        match self.bounds() {
            Some((lo, hi)) => Design::new(design.values.map(|v| v.clamp(lo, hi))),
            None => design.clone(),
        }
    }
}

/// The OED optimization variable: one value per candidate sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub values: DVector<f64>,
}

impl Design {
    pub fn new(values: DVector<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()), "design entries must be finite");
        Design { values }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Design::new(DVector::from_row_slice(values))
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Design::new(DVector::from_element(n, value))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }
}
