//! Design weighting kernels and the weighted observation precision.
//!
//! The design enters the likelihood through a symmetric weighting matrix
//! applied entrywise to the observation precision: `W(ζ) = Γ_noise⁻¹ ⊙ Θ(ζ)`.
//! This module provides the kernel functions that populate `Θ`, the optional
//! temporal decorrelation factor for space-time weighting, assembly of `Θ` in
//! block-diagonal (space) and dense (space-time) form, and the analytic
//! partial derivatives needed by the criterion gradients.

mod covariance;
mod theta;
mod weight;

pub use covariance::{kronecker_spacetime, CovarianceData, SpaceTimeCovariance};
pub use theta::{
    build_theta, build_theta_binary, build_theta_masked, weight_partials, weight_partials_matrix,
    weight_partials_spacetime, weighted_precision, weighted_precision_derivative, CorrelationMode,
    PrecisionDerivative, StructuredMatrix, WeightMatrix,
};
pub use weight::{
    gaspari_cohn, Design, KernelKind, TemporalDecorrelation, TemporalKind, WeightKernelSpec,
    SQRT_CLAMP_FLOOR,
};
