//! Goal-oriented A/D-optimality criteria, analytic gradients, and the
//! relaxed OED objective.
//!
//! The A-criterion is the trace and the D-criterion the log-determinant of
//! the goal-oriented posterior covariance `P H(ζ)⁻¹ Pᵀ`. Gradients follow the
//! rank-two structure of `∂W/∂ζ_i`: in space mode they reduce to diagonals of
//! small sensor-space products against `R_m⁻¹ ⊙ Θ'`; in space-time mode they
//! contract the per-time derivative vectors against solved forward blocks.
//! The A-criterion (and its gradient) can be estimated with Hutchinson
//! Rademacher probes; the probe set is derived from a fixed seed so criterion
//! and gradient always share identical realizations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes::{weighted_hessian, InverseProblemSpec};
use crate::error::{OedError, Result};
use crate::kernels::{
    build_theta, build_theta_binary, build_theta_masked, weight_partials_matrix,
    weighted_precision, weighted_precision_derivative, Design, PrecisionDerivative,
    StructuredMatrix, WeightKernelSpec, WeightMatrix,
};
use crate::linalg::{rademacher_probes, spd_factorize, CholFactor, SymMatrix};

pub use crate::kernels::CorrelationMode;

/// Which scalar summary of the goal posterior covariance is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriterionKind {
    /// Trace of the goal posterior covariance.
    A,
    /// Log-determinant of the goal posterior covariance.
    D,
}

/// Exact evaluation or Hutchinson trace estimation with `n_r` probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Evaluation {
    Exact,
    Randomized { n_r: usize, seed: u64 },
}

/// Full criterion specification: kind, evaluation, correlation structure,
/// and the sparsity penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionSpec {
    pub kind: CriterionKind,
    pub evaluation: Evaluation,
    pub correlation_mode: CorrelationMode,
    pub penalty_alpha: f64,
    /// Norm order of the penalty; only `p = 1` is supported.
    pub penalty_order: u32,
}

impl CriterionSpec {
    pub fn new(
        kind: CriterionKind,
        evaluation: Evaluation,
        correlation_mode: CorrelationMode,
        penalty_alpha: f64,
    ) -> Result<Self> {
        if matches!(kind, CriterionKind::D) && matches!(evaluation, Evaluation::Randomized { .. }) {
            return Err(OedError::RandomizedDCriterion);
        }
        if penalty_alpha.is_nan() || penalty_alpha < 0.0 {
            return Err(OedError::InvalidConfig(format!(
                "penalty weight must be nonnegative, got {penalty_alpha}"
            )));
        }
        Ok(CriterionSpec {
            kind,
            evaluation,
            correlation_mode,
            penalty_alpha,
            penalty_order: 1,
        })
    }

    pub fn exact_a(mode: CorrelationMode, alpha: f64) -> Self {
        CriterionSpec::new(CriterionKind::A, Evaluation::Exact, mode, alpha).expect("valid spec")
    }

    pub fn exact_d(mode: CorrelationMode, alpha: f64) -> Self {
        CriterionSpec::new(CriterionKind::D, Evaluation::Exact, mode, alpha).expect("valid spec")
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.penalty_alpha = alpha;
        self
    }
}

/// Shared per-design state: one Hessian factorization serves the criterion
/// value and every Hessian solve inside the gradient.
struct Workspace {
    /// `H⁻¹ Pᵀ` (exact) or `H⁻¹ Pᵀ Z` (randomized), one column per solve.
    solved: DMatrix<f64>,
    /// The right-hand sides matching `solved`.
    rhs: DMatrix<f64>,
    /// Rademacher probes for randomized evaluation.
    probes: Option<DMatrix<f64>>,
}

fn probes_for(spec: &CriterionSpec, npred: usize) -> Option<DMatrix<f64>> {
    match spec.evaluation {
        Evaluation::Exact => None,
        Evaluation::Randomized { n_r, seed } => {
            let mut rng = crate::rng::seeded(seed);
            Some(rademacher_probes(npred, n_r, &mut rng))
        }
    }
}

fn workspace(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    weights: &StructuredMatrix,
) -> Result<Workspace> {
    let hessian = weighted_hessian(problem, weights)?;
    let p_t = problem.goal.matrix.transpose();
    let probes = probes_for(spec, problem.npred());
    let rhs = match &probes {
        Some(z) => &p_t * z,
        None => p_t,
    };
    let solved = hessian.solve_mat(&rhs);
    Ok(Workspace {
        solved,
        rhs,
        probes,
    })
}

impl Workspace {
    fn criterion_value(&self, problem: &InverseProblemSpec, spec: &CriterionSpec) -> Result<f64> {
        match spec.kind {
            CriterionKind::A => match &self.probes {
                None => Ok(problem
                    .goal
                    .matrix
                    .transpose()
                    .component_mul(&self.solved)
                    .sum()),
                Some(z) => {
                    let mut acc = 0.0;
                    for r in 0..z.ncols() {
                        acc += self.rhs.column(r).dot(&self.solved.column(r));
                    }
                    Ok(acc / z.ncols() as f64)
                }
            },
            CriterionKind::D => Ok(self.goal_cov_factor(problem)?.logdet()),
        }
    }

    /// Cholesky factor of the goal posterior covariance `P H⁻¹ Pᵀ`.
    fn goal_cov_factor(&self, problem: &InverseProblemSpec) -> Result<CholFactor> {
        let gpred = &problem.goal.matrix * &self.solved;
        let gpred = SymMatrix::from_symmetric_unchecked(0.5 * (&gpred + gpred.transpose()));
        spd_factorize(&gpred).map_err(|e| match e {
            OedError::NotPositiveDefinite { pivot } => OedError::IndefiniteHessian { pivot },
            other => other,
        })
    }
}

fn weights_of_design(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    design: &Design,
) -> Result<(WeightMatrix, StructuredMatrix)> {
    let theta = build_theta(kernel, design, problem.forward.times(), spec.correlation_mode)?;
    let weights = weighted_precision(&problem.noise, &theta)?;
    Ok((theta, weights))
}

/// A-optimality criterion value at a design; exact trace or the randomized
/// Hutchinson estimate, depending on the spec.
pub fn a_criterion(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    design: &Design,
) -> Result<f64> {
    let (_, weights) = weights_of_design(problem, spec, kernel, design)?;
    workspace(problem, spec, &weights)?.criterion_value(problem, spec)
}

/// D-optimality criterion value at a design.
pub fn d_criterion(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    design: &Design,
) -> Result<f64> {
    if !matches!(spec.kind, CriterionKind::D) {
        return Err(OedError::InvalidConfig(
            "d_criterion requires a D-kind criterion spec".into(),
        ));
    }
    let (_, weights) = weights_of_design(problem, spec, kernel, design)?;
    workspace(problem, spec, &weights)?.criterion_value(problem, spec)
}

/// Criterion value for an explicitly assembled weighting matrix.
pub fn criterion_of_theta(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    theta: &StructuredMatrix,
) -> Result<f64> {
    let wm = WeightMatrix {
        theta: theta.clone(),
        kernel: WeightKernelSpec::sqrt(),
        design: Design::constant(problem.forward.nsens(), 1.0),
    };
    let weights = weighted_precision(&problem.noise, &wm)?;
    workspace(problem, spec, &weights)?.criterion_value(problem, spec)
}

/// Criterion value of a design with inactive sensors masked out (thresholded
/// relaxed design semantics).
pub fn criterion_of_masked(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    design: &Design,
    active: &[bool],
) -> Result<f64> {
    let theta = build_theta_masked(
        kernel,
        design,
        problem.forward.times(),
        spec.correlation_mode,
        active,
    )?;
    criterion_of_theta(problem, spec, &theta.theta)
}

/// Criterion value of a binary design with unit weights on active sensors.
pub fn criterion_of_binary(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    active: &[bool],
) -> Result<f64> {
    let theta = build_theta_binary(
        problem.forward.nsens(),
        problem.forward.times(),
        kernel.temporal.as_ref(),
        spec.correlation_mode,
        active,
    )?;
    criterion_of_theta(problem, spec, &theta)
}

/// Gradient of the A-criterion with respect to the design.
pub fn a_gradient(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    design: &Design,
) -> Result<DVector<f64>> {
    criterion_and_gradient(problem, spec, kernel, design).map(|(_, g)| g)
}

/// Gradient of the D-criterion with respect to the design.
pub fn d_gradient(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    design: &Design,
) -> Result<DVector<f64>> {
    criterion_and_gradient(problem, spec, kernel, design).map(|(_, g)| g)
}

/// Criterion value and gradient sharing one Hessian factorization per design.
#[allow(clippy::needless_range_loop)]
pub fn criterion_and_gradient(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    design: &Design,
) -> Result<(f64, DVector<f64>)> {
    let times = problem.forward.times().to_vec();
    let (_, weights) = weights_of_design(problem, spec, kernel, design)?;
    let ws = workspace(problem, spec, &weights)?;
    let value = ws.criterion_value(problem, spec)?;

    let nsens = problem.forward.nsens();
    let n_t = problem.forward.n_t();
    let mut grad = DVector::zeros(nsens);

    match spec.correlation_mode {
        CorrelationMode::Space => {
            // R_m⁻¹ ⊙ Θ' per time block; Θ' holds η_j in column j.
            let theta_prime = weight_partials_matrix(kernel, design)?;
            let weighted_prime: Vec<DMatrix<f64>> = (0..n_t)
                .map(|m| {
                    problem
                        .noise
                        .precision_block(m)
                        .map(|r| r.as_matrix().component_mul(&theta_prime))
                })
                .collect::<Result<_>>()?;
            match (&spec.kind, &ws.probes) {
                (CriterionKind::A, None) => {
                    for m in 0..n_t {
                        let b_m = problem.forward.block(m) * &ws.solved;
                        let g_m = &b_m * b_m.transpose();
                        accumulate_diag(&mut grad, &(g_m * &weighted_prime[m]), -2.0);
                    }
                }
                (CriterionKind::A, Some(z)) => {
                    let n_r = z.ncols();
                    for m in 0..n_t {
                        let xi = problem.forward.block(m) * &ws.solved;
                        for r in 0..n_r {
                            let xi_r = xi.column(r).into_owned();
                            let t = weighted_prime[m].transpose() * &xi_r;
                            grad -= (2.0 / n_r as f64) * xi_r.component_mul(&t);
                        }
                    }
                }
                (CriterionKind::D, _) => {
                    let pred_chol = ws.goal_cov_factor(problem)?;
                    for m in 0..n_t {
                        let b_m = problem.forward.block(m) * &ws.solved;
                        let e_m = pred_chol.solve_mat(&b_m.transpose());
                        let g_m = &b_m * e_m;
                        accumulate_diag(&mut grad, &(g_m * &weighted_prime[m]), -2.0);
                    }
                }
            }
        }
        CorrelationMode::SpaceTime => {
            // Solved forward blocks stacked over time: one column per solve.
            let f = problem.forward.stacked();
            let b = &f * &ws.solved;
            let pred_chol = match spec.kind {
                CriterionKind::D => Some(ws.goal_cov_factor(problem)?),
                CriterionKind::A => None,
            };
            let c = pred_chol.as_ref().map(|chol| chol.solve_mat(&b.transpose()));
            for i in 0..nsens {
                let deriv = weighted_precision_derivative(
                    &problem.noise,
                    kernel,
                    design,
                    &times,
                    i,
                    CorrelationMode::SpaceTime,
                )?;
                let PrecisionDerivative::SpaceTime { terms, .. } = deriv else {
                    unreachable!("space-time derivative mode")
                };
                let mut acc = 0.0;
                match (&spec.kind, &ws.probes) {
                    (CriterionKind::A, None) => {
                        for (q, v) in &terms {
                            let w = b.transpose() * v;
                            acc += b.row(*q).transpose().dot(&w);
                        }
                    }
                    (CriterionKind::A, Some(z)) => {
                        for r in 0..z.ncols() {
                            let psi = b.column(r);
                            for (q, v) in &terms {
                                acc += psi[*q] * v.dot(&psi.into_owned());
                            }
                        }
                        acc /= z.ncols() as f64;
                    }
                    (CriterionKind::D, _) => {
                        let c = c.as_ref().expect("factored for D");
                        for (q, v) in &terms {
                            let col = &b * c.column(*q);
                            acc += v.dot(&col);
                        }
                    }
                }
                grad[i] = -2.0 * acc;
            }
        }
    }
    Ok((value, grad))
}

fn accumulate_diag(grad: &mut DVector<f64>, m: &DMatrix<f64>, scale: f64) {
    for i in 0..grad.len() {
        grad[i] += scale * m[(i, i)];
    }
}

/// The sparsity penalty `Φ(ζ) = Σ_i ω(ζ_i, ζ_i)` and its gradient.
///
/// Kernel values are nonnegative, so the `ℓ1` norm drops the absolute value;
/// each gradient entry is the total derivative of the diagonal weight.
pub fn penalty(kernel: &WeightKernelSpec, design: &Design) -> Result<(f64, DVector<f64>)> {
    let n = design.len();
    let mut value = 0.0;
    let mut grad = DVector::zeros(n);
    for i in 0..n {
        let (w, di, dj) = kernel.eval_with_partials(design.values[i], design.values[i])?;
        value += w;
        grad[i] = di + dj;
    }
    Ok((value, grad))
}

/// The relaxed OED objective `T = Ψ + α Φ` with its gradient.
pub fn oed_objective(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    design: &Design,
) -> Result<(f64, DVector<f64>)> {
    let (psi, mut grad) = criterion_and_gradient(problem, spec, kernel, design)?;
    let mut value = psi;
    if spec.penalty_alpha != 0.0 {
        let (phi, phi_grad) = penalty(kernel, design)?;
        value += spec.penalty_alpha * phi;
        grad += spec.penalty_alpha * phi_grad;
    }
    Ok((value, grad))
}

/// Per-coordinate comparison between an analytic gradient and the central
/// finite difference of an objective.
#[derive(Debug, Clone)]
pub struct GradientCheckReport {
    pub step: f64,
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// Per-coordinate error relative to the gradient magnitude.
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_index: usize,
}

/// Compare an analytic gradient against central finite differences of `f`.
/// Differences are normalized by the larger gradient infinity norm, so
/// coordinates where both gradients vanish score zero.
pub fn fd_compare<F>(
    f: F,
    analytic: &DVector<f64>,
    design: &Design,
    step: f64,
) -> Result<GradientCheckReport>
where
    F: Fn(&Design) -> Result<f64>,
{
    let n = design.len();
    let mut fd = DVector::zeros(n);
    for i in 0..n {
        let mut plus = design.clone();
        plus.values[i] += step;
        let mut minus = design.clone();
        minus.values[i] -= step;
        fd[i] = (f(&plus)? - f(&minus)?) / (2.0 * step);
    }
    let scale = analytic.amax().max(fd.amax());
    let mut rel = vec![0.0; n];
    let mut max_rel = 0.0;
    let mut worst = 0;
    if scale > 0.0 {
        for i in 0..n {
            rel[i] = (analytic[i] - fd[i]).abs() / scale;
            if rel[i] > max_rel {
                max_rel = rel[i];
                worst = i;
            }
        }
    }
    Ok(GradientCheckReport {
        step,
        analytic: analytic.iter().copied().collect(),
        finite_difference: fd.iter().copied().collect(),
        relative_errors: rel,
        max_relative_error: max_rel,
        worst_index: worst,
    })
}

/// Check the analytic objective gradient at a design against central finite
/// differences with the given step.
pub fn gradient_check(
    problem: &InverseProblemSpec,
    spec: &CriterionSpec,
    kernel: &WeightKernelSpec,
    design: &Design,
    step: f64,
) -> Result<GradientCheckReport> {
    let (_, analytic) = oed_objective(problem, spec, kernel, design)?;
    fd_compare(
        |d| oed_objective(problem, spec, kernel, d).map(|(v, _)| v),
        &analytic,
        design,
        step,
    )
}
