//! Linear Gaussian inverse-problem machinery.
//!
//! Observations stack time-major: block `m` of the observation vector holds
//! the `Nsens` sensor readings at time `t_m`. The forward operator applies the
//! per-time blocks `F_{0,m}`; the adjoint uses the mass-matrix-weighted inner
//! product, `F* = M⁻¹ Fᵀ`. Criterion and Hessian operations require an
//! identity mass matrix; a non-identity diagonal mass matrix is supported only
//! by the forward/adjoint pair.

use nalgebra::{DMatrix, DVector};

use crate::error::{OedError, Result};
use crate::kernels::{SpaceTimeCovariance, StructuredMatrix};
use crate::linalg::{spd_factorize, two_pass_eigs, CholFactor, SymMatrix};
use crate::rng::Rng;

/// Linear parameter-to-observable map with one block per observation time.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    /// `F_{0,m}`, each `Nsens × Nθ`.
    blocks: Vec<DMatrix<f64>>,
    /// Diagonal of the mass matrix; `None` means identity.
    mass: Option<DVector<f64>>,
    /// Observation times `t_1 .. t_{n_t}`.
    times: Vec<f64>,
}

impl ForwardModel {
    pub fn new(blocks: Vec<DMatrix<f64>>, times: Vec<f64>, mass: Option<DVector<f64>>) -> Result<Self> {
        if blocks.is_empty() || blocks.len() != times.len() {
            return Err(OedError::dims(
                format!("{} forward blocks", times.len()),
                blocks.len().to_string(),
                "forward model",
            ));
        }
        let nparam = blocks[0].ncols();
        let nsens = blocks[0].nrows();
        if blocks.iter().any(|b| b.ncols() != nparam || b.nrows() != nsens) {
            return Err(OedError::dims(
                format!("{nsens}x{nparam} blocks"),
                "mixed block shapes",
                "forward model",
            ));
        }
        if let Some(m) = &mass {
            if m.len() != nparam {
                return Err(OedError::dims(
                    nparam.to_string(),
                    m.len().to_string(),
                    "mass matrix",
                ));
            }
            if !m.iter().all(|&v| v > 0.0) {
                return Err(OedError::InvalidConfig("mass matrix must be positive".into()));
            }
        }
        Ok(ForwardModel { blocks, mass, times })
    }

    pub fn nsens(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn nparam(&self) -> usize {
        self.blocks[0].ncols()
    }

    pub fn n_t(&self) -> usize {
        self.blocks.len()
    }

    pub fn nobs(&self) -> usize {
        self.nsens() * self.n_t()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn block(&self, m: usize) -> &DMatrix<f64> {
        &self.blocks[m]
    }

    pub fn has_identity_mass(&self) -> bool {
        self.mass.is_none()
    }

    /// Stacked dense forward operator, `Nobs × Nθ`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.nobs(), self.nparam());
        for (m, b) in self.blocks.iter().enumerate() {
            f.view_mut((m * self.nsens(), 0), (self.nsens(), self.nparam()))
                .copy_from(b);
        }
        f
    }
}

/// Gaussian prior on the parameter.
#[derive(Debug, Clone)]
pub struct Prior {
    pub mean: DVector<f64>,
    pub covariance: SymMatrix,
    precision: SymMatrix,
}

impl Prior {
    pub fn new(mean: DVector<f64>, covariance: SymMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(OedError::dims(
                covariance.dim().to_string(),
                mean.len().to_string(),
                "prior mean",
            ));
        }
        let precision = spd_factorize(&covariance)?.inverse();
        Ok(Prior {
            mean,
            covariance,
            precision,
        })
    }

    pub fn nparam(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> &SymMatrix {
        &self.precision
    }
}

/// Linear goal operator mapping the parameter to the prediction quantity.
#[derive(Debug, Clone)]
pub struct GoalOperator {
    /// `P`, `Npred × Nθ`.
    pub matrix: DMatrix<f64>,
}

impl GoalOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 {
            return Err(OedError::InvalidConfig("goal operator needs at least one row".into()));
        }
        Ok(GoalOperator { matrix })
    }

    pub fn identity(nparam: usize) -> Self {
        GoalOperator {
            matrix: DMatrix::identity(nparam, nparam),
        }
    }

    pub fn npred(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.matrix * theta
    }
}

/// The full inverse-problem specification: forward map, prior, goal operator,
/// and observation error covariance.
#[derive(Debug, Clone)]
pub struct InverseProblemSpec {
    pub forward: ForwardModel,
    pub prior: Prior,
    pub goal: GoalOperator,
    pub noise: SpaceTimeCovariance,
}

impl InverseProblemSpec {
    pub fn new(
        forward: ForwardModel,
        prior: Prior,
        goal: GoalOperator,
        noise: SpaceTimeCovariance,
    ) -> Result<Self> {
        if prior.nparam() != forward.nparam() {
            return Err(OedError::dims(
                forward.nparam().to_string(),
                prior.nparam().to_string(),
                "prior dimension",
            ));
        }
        if goal.matrix.ncols() != forward.nparam() {
            return Err(OedError::dims(
                forward.nparam().to_string(),
                goal.matrix.ncols().to_string(),
                "goal operator columns",
            ));
        }
        if noise.nobs() != forward.nobs() || noise.nsens() != forward.nsens() {
            return Err(OedError::dims(
                format!("{} observations", forward.nobs()),
                format!("{} covariance rows", noise.nobs()),
                "noise covariance",
            ));
        }
        Ok(InverseProblemSpec {
            forward,
            prior,
            goal,
            noise,
        })
    }

    pub fn nobs(&self) -> usize {
        self.forward.nobs()
    }

    pub fn nparam(&self) -> usize {
        self.forward.nparam()
    }

    pub fn npred(&self) -> usize {
        self.goal.npred()
    }
}

/// Apply the forward map: stacked `(F_{0,1}θ; …; F_{0,n_t}θ)`.
pub fn forward_apply(model: &ForwardModel, theta: &DVector<f64>) -> Result<DVector<f64>> {
    if theta.len() != model.nparam() {
        return Err(OedError::dims(
            model.nparam().to_string(),
            theta.len().to_string(),
            "forward apply",
        ));
    }
    let nsens = model.nsens();
    let mut out = DVector::zeros(model.nobs());
    for (m, b) in model.blocks.iter().enumerate() {
        out.rows_mut(m * nsens, nsens).copy_from(&(b * theta));
    }
    Ok(out)
}

/// Apply the adjoint `F* w = Σ_m M⁻¹ F_{0,m}ᵀ w_m`; satisfies
/// `⟨Fu, v⟩ = ⟨u, F*v⟩_M` with the `M`-weighted inner product.
pub fn adjoint_apply(model: &ForwardModel, w: &DVector<f64>) -> Result<DVector<f64>> {
    if w.len() != model.nobs() {
        return Err(OedError::dims(
            model.nobs().to_string(),
            w.len().to_string(),
            "adjoint apply",
        ));
    }
    let nsens = model.nsens();
    let mut out = DVector::zeros(model.nparam());
    for (m, b) in model.blocks.iter().enumerate() {
        let seg = w.rows(m * nsens, nsens);
        out += b.transpose() * seg;
    }
    if let Some(mass) = &model.mass {
        out.component_div_assign(mass);
    }
    Ok(out)
}

/// Weighted Hessian `H = Γ_prior⁻¹ + F* W F`, assembled densely and verified
/// symmetric positive definite by factorization.
pub struct WeightedHessian {
    pub matrix: SymMatrix,
    pub factor: CholFactor,
}

impl WeightedHessian {
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve_vec(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve_mat(b)
    }
}

/// Assemble the misfit part `Fᵀ W F` of the Hessian.
fn misfit_hessian(problem: &InverseProblemSpec, weights: &StructuredMatrix) -> Result<DMatrix<f64>> {
    let nparam = problem.nparam();
    if weights.dim() != problem.nobs() {
        return Err(OedError::dims(
            problem.nobs().to_string(),
            weights.dim().to_string(),
            "weighted precision",
        ));
    }
    let mut misfit = DMatrix::zeros(nparam, nparam);
    match weights {
        StructuredMatrix::Blocks(blocks) => {
            for (m, w) in blocks.blocks().iter().enumerate() {
                let f_m = problem.forward.block(m);
                misfit += f_m.transpose() * w.as_matrix() * f_m;
            }
        }
        StructuredMatrix::Dense(w) => {
            let f = problem.forward.stacked();
            misfit += f.transpose() * w.as_matrix() * &f;
        }
    }
    Ok(0.5 * (&misfit + misfit.transpose()))
}

/// `H(ζ) = Γ_prior⁻¹ + F* W F`. Errors with [`OedError::IndefiniteHessian`]
/// when `W` makes the result indefinite (possible for SIGMOID weighting).
pub fn weighted_hessian(
    problem: &InverseProblemSpec,
    weights: &StructuredMatrix,
) -> Result<WeightedHessian> {
    if !problem.forward.has_identity_mass() {
        return Err(OedError::UnsupportedMassMatrix);
    }
    let h = problem.prior.precision().as_matrix() + misfit_hessian(problem, weights)?;
    let matrix = SymMatrix::from_symmetric_unchecked(h);
    let factor = spd_factorize(&matrix).map_err(|e| match e {
        OedError::NotPositiveDefinite { pivot } => OedError::IndefiniteHessian { pivot },
        other => other,
    })?;
    Ok(WeightedHessian { matrix, factor })
}

/// Maximum a posteriori estimate under weighted observations:
/// `θ_MAP = H⁻¹ (Γ_prior⁻¹ θ_b + F* W y)`.
pub fn map_estimate(
    problem: &InverseProblemSpec,
    weights: &StructuredMatrix,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    if y.len() != problem.nobs() {
        return Err(OedError::dims(
            problem.nobs().to_string(),
            y.len().to_string(),
            "observation vector",
        ));
    }
    let hessian = weighted_hessian(problem, weights)?;
    let wy = apply_structured(weights, y);
    let rhs = problem.prior.precision().apply(&problem.prior.mean)
        + adjoint_apply(&problem.forward, &wy)?;
    Ok(hessian.solve_vec(&rhs))
}

pub(crate) fn apply_structured(w: &StructuredMatrix, v: &DVector<f64>) -> DVector<f64> {
    match w {
        StructuredMatrix::Blocks(b) => b.apply(v).expect("dimension checked"),
        StructuredMatrix::Dense(m) => m.as_matrix() * v,
    }
}

/// Goal-oriented posterior covariance `Γ_pred = P H⁻¹ Pᵀ`.
pub fn goal_posterior_cov(
    problem: &InverseProblemSpec,
    weights: &StructuredMatrix,
) -> Result<SymMatrix> {
    let hessian = weighted_hessian(problem, weights)?;
    Ok(goal_cov_from_hessian(problem, &hessian))
}

pub(crate) fn goal_cov_from_hessian(
    problem: &InverseProblemSpec,
    hessian: &WeightedHessian,
) -> SymMatrix {
    let p = &problem.goal.matrix;
    let solved = hessian.solve_mat(&p.transpose());
    let cov = p * solved;
    SymMatrix::from_symmetric_unchecked(0.5 * (&cov + cov.transpose()))
}

/// Low-rank posterior covariance operator built from the leading eigenpairs
/// of the prior-preconditioned data-misfit Hessian.
///
/// With `Γ_prior = L Lᵀ` and eigenpairs `(λ_i, v_i)` of `Lᵀ (F* W F) L`,
/// `H⁻¹ = Γ_prior − U D Uᵀ` where `U = L V` and `D = diag(λ_i / (1 + λ_i))`;
/// exact when the retained rank covers every nonzero eigenvalue.
pub struct LowRankPosterior {
    prior_cov: SymMatrix,
    modes: DMatrix<f64>,
    dvals: DVector<f64>,
    pub rank_deficient: bool,
}

impl LowRankPosterior {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let correction = &self.modes * (self.dvals.component_mul(&(self.modes.transpose() * v)));
        self.prior_cov.apply(v) - correction
    }

    pub fn to_dense(&self) -> SymMatrix {
        let corr = &self.modes * DMatrix::from_diagonal(&self.dvals) * self.modes.transpose();
        SymMatrix::from_symmetric_unchecked(self.prior_cov.as_matrix() - corr)
    }

    /// `trace(P H⁻¹ Pᵀ)` without densifying `H⁻¹`.
    pub fn goal_trace(&self, goal: &GoalOperator) -> f64 {
        let p = &goal.matrix;
        let prior_term = (p * self.prior_cov.as_matrix())
            .component_mul(p)
            .sum();
        let pm = p * &self.modes;
        let correction = pm
            .column_iter()
            .enumerate()
            .map(|(i, c)| self.dvals[i] * c.norm_squared())
            .sum::<f64>();
        prior_term - correction
    }
}

/// Approximate `H⁻¹` from a randomized two-pass eigendecomposition of the
/// prior-preconditioned misfit Hessian, oversampling by `min(10, Nθ − rank)`.
pub fn lowrank_hessian_inverse(
    problem: &InverseProblemSpec,
    weights: &StructuredMatrix,
    rank: usize,
    rng: &mut Rng,
) -> Result<LowRankPosterior> {
    if !problem.forward.has_identity_mass() {
        return Err(OedError::UnsupportedMassMatrix);
    }
    let nparam = problem.nparam();
    if rank > nparam {
        return Err(OedError::IndexOutOfRange {
            index: rank,
            limit: nparam,
        });
    }
    let misfit = misfit_hessian(problem, weights)?;
    if misfit.abs().max() == 0.0 {
        // No data contribution: the posterior is the prior.
        return Ok(LowRankPosterior {
            prior_cov: problem.prior.covariance.clone(),
            modes: DMatrix::zeros(nparam, 0),
            dvals: DVector::zeros(0),
            rank_deficient: false,
        });
    }
    let l = spd_factorize(&problem.prior.covariance)?.l();
    let preconditioned = l.transpose() * &misfit * &l;
    let oversample = 10.min(nparam - rank);
    let pairs = two_pass_eigs(
        |x| &preconditioned * x,
        nparam,
        rank,
        oversample,
        rng,
    )?;
    let modes = &l * &pairs.vectors;
    let dvals = pairs.values.map(|lam| lam / (1.0 + lam));
    Ok(LowRankPosterior {
        prior_cov: problem.prior.covariance.clone(),
        modes,
        dvals,
        rank_deficient: pairs.rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{
        build_theta, weighted_precision, CorrelationMode, Design, WeightKernelSpec,
    };
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar_problem() -> InverseProblemSpec {
        // Γ_prior = 1, F = 1, one sensor, one time.
        let forward = ForwardModel::new(vec![dmatrix![1.0]], vec![1.0], None).unwrap();
        let prior = Prior::new(DVector::from_vec(vec![0.0]), SymMatrix::identity(1)).unwrap();
        let goal = GoalOperator::identity(1);
        let noise =
            SpaceTimeCovariance::diagonal_stationary(&DVector::from_element(1, 1.0), 1).unwrap();
        InverseProblemSpec::new(forward, prior, goal, noise).unwrap()
    }

    use crate::testutil::random_problem;

    fn unit_weights(problem: &InverseProblemSpec) -> StructuredMatrix {
        let design = Design::constant(problem.forward.nsens(), 1.0);
        let theta = build_theta(
            &WeightKernelSpec::sqrt(),
            &design,
            problem.forward.times(),
            CorrelationMode::Space,
        )
        .unwrap();
        weighted_precision(&problem.noise, &theta).unwrap()
    }

    #[test]
    fn forward_is_linear_and_zero_maps_to_zero() {
        let p = random_problem(6, 3, 2, 2, 1);
        let zero = DVector::zeros(6);
        assert_eq!(forward_apply(&p.forward, &zero).unwrap(), DVector::zeros(6));
        let u = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        let v = DVector::from_fn(6, |i, _| 0.5 * i as f64);
        let lhs = forward_apply(&p.forward, &(2.0 * &u + 3.0 * &v)).unwrap();
        let rhs = 2.0 * forward_apply(&p.forward, &u).unwrap() + 3.0 * forward_apply(&p.forward, &v).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn length_mismatches_error() {
        let p = random_problem(5, 2, 2, 1, 3);
        assert!(forward_apply(&p.forward, &DVector::zeros(4)).is_err());
        assert!(adjoint_apply(&p.forward, &DVector::zeros(3)).is_err());
        let w = StructuredMatrix::Dense(SymMatrix::zeros(4));
        assert!(map_estimate(&p, &w, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn single_time_identity_forward() {
        let forward = ForwardModel::new(vec![DMatrix::identity(3, 3)], vec![0.5], None).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(forward_apply(&forward, &e1).unwrap(), e1);
    }

    #[test]
    fn adjoint_is_transpose_for_identity_mass() {
        let p = random_problem(5, 2, 3, 1, 2);
        let w = DVector::from_fn(6, |i, _| (i as f64).sin());
        let expected = p.forward.stacked().transpose() * &w;
        assert_relative_eq!(adjoint_apply(&p.forward, &w).unwrap(), expected, epsilon = 1e-13);
        assert_eq!(
            adjoint_apply(&p.forward, &DVector::zeros(6)).unwrap(),
            DVector::zeros(5)
        );
    }

    #[test]
    fn adjoint_satisfies_mass_weighted_identity() {
        let mut rng = crate::rng::seeded(3);
        let nparam = 5;
        let nsens = 3;
        let blocks = vec![DMatrix::from_fn(nsens, nparam, |_, _| {
            crate::rng::uniform(&mut rng, -1.0, 1.0)
        })];
        let mass = DVector::from_fn(nparam, |_, _| crate::rng::uniform(&mut rng, 0.5, 2.0));
        let model = ForwardModel::new(blocks, vec![1.0], Some(mass.clone())).unwrap();
        let u = DVector::from_fn(nparam, |_, _| crate::rng::uniform(&mut rng, -1.0, 1.0));
        let v = DVector::from_fn(nsens, |_, _| crate::rng::uniform(&mut rng, -1.0, 1.0));
        let fu_v = forward_apply(&model, &u).unwrap().dot(&v);
        let fstar_v = adjoint_apply(&model, &v).unwrap();
        let u_fstarv_mass = u.dot(&mass.component_mul(&fstar_v));
        let scale = fu_v.abs().max(1.0);
        assert!((fu_v - u_fstarv_mass).abs() <= 1e-12 * scale);
    }

    #[test]
    fn zero_weights_give_prior_hessian() {
        let p = random_problem(4, 2, 2, 2, 4);
        let w = StructuredMatrix::Dense(SymMatrix::zeros(4));
        let h = weighted_hessian(&p, &w).unwrap();
        assert_relative_eq!(
            h.matrix.as_matrix(),
            p.prior.precision().as_matrix(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn scalar_hessian_is_two() {
        let p = scalar_problem();
        let w = unit_weights(&p);
        let h = weighted_hessian(&p, &w).unwrap();
        assert_relative_eq!(h.matrix.entry(0, 0), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn hessian_matches_direct_assembly_oracle() {
        let p = random_problem(7, 3, 2, 2, 5);
        let w = unit_weights(&p);
        let h = weighted_hessian(&p, &w).unwrap();
        // Oracle: posterior precision with Γ_noise⁻¹ replaced by W, assembled
        // from the stacked dense forward operator.
        let f = p.forward.stacked();
        let oracle = p.prior.precision().as_matrix() + f.transpose() * w.to_dense().as_matrix() * &f;
        assert!((h.matrix.as_matrix() - oracle).abs().max() <= 1e-10);
    }

    #[test]
    fn scalar_map_estimate() {
        let p = scalar_problem();
        let w = unit_weights(&p);
        let y = DVector::from_vec(vec![2.0]);
        let map = map_estimate(&p, &w, &y).unwrap();
        assert_relative_eq!(map[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn map_at_prior_mean_for_consistent_data() {
        let p = random_problem(5, 2, 2, 1, 6);
        let w = unit_weights(&p);
        let y = forward_apply(&p.forward, &p.prior.mean).unwrap();
        let map = map_estimate(&p, &w, &y).unwrap();
        assert_relative_eq!(map, p.prior.mean, epsilon = 1e-10);
    }

    #[test]
    fn map_with_zero_weights_is_prior_mean() {
        let p = random_problem(5, 2, 2, 1, 7);
        let w = StructuredMatrix::Dense(SymMatrix::zeros(4));
        let y = DVector::from_fn(4, |i, _| i as f64);
        let map = map_estimate(&p, &w, &y).unwrap();
        assert_relative_eq!(map, p.prior.mean, epsilon = 1e-12);
    }

    #[test]
    fn map_gradient_is_stationary() {
        // The objective gradient Γ_prior⁻¹(θ−θ_b) + Fᵀ W (Fθ−y) vanishes at
        // the MAP point, and its Hessian equals the posterior precision.
        let p = random_problem(6, 3, 2, 2, 8);
        let w = unit_weights(&p);
        let mut rng = crate::rng::seeded(80);
        let y = DVector::from_fn(6, |_, _| crate::rng::uniform(&mut rng, -1.0, 1.0));
        let map = map_estimate(&p, &w, &y).unwrap();
        let resid = forward_apply(&p.forward, &map).unwrap() - &y;
        let grad = p.prior.precision().apply(&(&map - &p.prior.mean))
            + adjoint_apply(&p.forward, &apply_structured(&w, &resid)).unwrap();
        let scale = y.norm().max(1.0);
        assert!(grad.norm() <= 1e-8 * scale, "gradient norm {}", grad.norm());
        let h = weighted_hessian(&p, &w).unwrap();
        let f = p.forward.stacked();
        let hess_oracle = p.prior.precision().as_matrix() + f.transpose() * w.to_dense().as_matrix() * f;
        assert!((h.matrix.as_matrix() - hess_oracle).abs().max() <= 1e-10);
    }

    #[test]
    fn goal_cov_reduces_to_prior_for_zero_weights() {
        let mut p = random_problem(5, 2, 2, 1, 9);
        p.goal = GoalOperator::identity(5);
        let w = StructuredMatrix::Dense(SymMatrix::zeros(4));
        let cov = goal_posterior_cov(&p, &w).unwrap();
        assert!((cov.as_matrix() - p.prior.covariance.as_matrix()).abs().max() <= 1e-10);
    }

    #[test]
    fn scalar_goal_posterior_is_half() {
        let p = scalar_problem();
        let w = unit_weights(&p);
        let cov = goal_posterior_cov(&p, &w).unwrap();
        assert_relative_eq!(cov.entry(0, 0), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn goal_cov_matches_dense_inverse_oracle() {
        let p = random_problem(5, 3, 2, 3, 10);
        let w = unit_weights(&p);
        let cov = goal_posterior_cov(&p, &w).unwrap();
        let h = weighted_hessian(&p, &w).unwrap();
        let hinv = h.factor.inverse();
        let oracle = &p.goal.matrix * hinv.as_matrix() * p.goal.matrix.transpose();
        assert!((cov.as_matrix() - oracle).abs().max() <= 1e-10);
    }

    #[test]
    fn goal_cov_monotone_in_weights() {
        // Adding a PSD increment to W never increases trace(Γ_pred).
        let p = random_problem(6, 3, 2, 2, 11);
        let mut rng = crate::rng::seeded(110);
        for _ in 0..10 {
            let w0 = crate::testutil::random_spd(6, &mut rng).scale(0.3);
            let incr_g = DMatrix::from_fn(6, 2, |_, _| crate::rng::uniform(&mut rng, -1.0, 1.0));
            let incr = SymMatrix::from_matrix(&incr_g * incr_g.transpose()).unwrap();
            let t0 = goal_posterior_cov(&p, &StructuredMatrix::Dense(w0.clone()))
                .unwrap()
                .trace();
            let t1 = goal_posterior_cov(&p, &StructuredMatrix::Dense(w0.add(&incr).unwrap()))
                .unwrap()
                .trace();
            assert!(t1 <= t0 + 1e-12, "trace increased from {t0} to {t1}");
        }
    }

    #[test]
    fn hessian_is_affine_in_theta() {
        let p = random_problem(5, 3, 2, 2, 12);
        let spec = WeightKernelSpec::sigmoid(1.0);
        let times = p.forward.times().to_vec();
        let d1 = Design::from_slice(&[0.3, -0.2, 0.8]);
        let d2 = Design::from_slice(&[-0.5, 0.4, 0.1]);
        let th1 = build_theta(&spec, &d1, &times, CorrelationMode::Space).unwrap();
        let th2 = build_theta(&spec, &d2, &times, CorrelationMode::Space).unwrap();
        for t in [0.0, 0.3, 1.0] {
            let mixed = th1.theta.to_dense().scale(t).add(&th2.theta.to_dense().scale(1.0 - t)).unwrap();
            let w_mixed = weighted_precision(
                &p.noise,
                &crate::kernels::WeightMatrix {
                    theta: StructuredMatrix::Dense(mixed),
                    kernel: spec,
                    design: d1.clone(),
                },
            )
            .unwrap();
            let h_mixed = weighted_hessian(&p, &w_mixed).unwrap();
            let w1 = weighted_precision(&p.noise, &th1).unwrap();
            let w2 = weighted_precision(&p.noise, &th2).unwrap();
            let h1 = weighted_hessian(&p, &w1).unwrap();
            let h2 = weighted_hessian(&p, &w2).unwrap();
            let combo = h1.matrix.scale(t).add(&h2.matrix.scale(1.0 - t)).unwrap();
            assert!((h_mixed.matrix.as_matrix() - combo.as_matrix()).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn unbiased_at_desk_scale() {
        // With W = Γ_noise⁻¹, the MAP estimator is unbiased; the empirical
        // mean over 200 noise draws stays within three posterior standard
        // deviations (summed) of the truth.
        let p = random_problem(4, 3, 2, 1, 13);
        let w = unit_weights(&p);
        let mut rng = crate::rng::seeded(131);
        let theta_true = DVector::from_fn(4, |_, _| crate::rng::uniform(&mut rng, -1.0, 1.0));
        let y0 = forward_apply(&p.forward, &theta_true).unwrap();
        let mut mean = DVector::zeros(4);
        let n = 200;
        for _ in 0..n {
            let delta = p.noise.sample_noise(&mut rng).unwrap();
            let map = map_estimate(&p, &w, &(&y0 + delta)).unwrap();
            mean += map;
        }
        mean /= n as f64;
        // Bias of the mean estimator: prior pull plus Monte Carlo noise.
        let h = weighted_hessian(&p, &w).unwrap();
        let hinv = h.factor.inverse();
        let post_std_sum: f64 = hinv.diagonal().map(f64::sqrt).sum();
        let bias = (&mean - &theta_true).norm();
        assert!(
            bias <= 3.0 * post_std_sum,
            "bias {bias} vs posterior std sum {post_std_sum}"
        );
    }

    #[test]
    fn lowrank_full_rank_matches_dense_inverse() {
        let p = random_problem(6, 3, 2, 2, 14);
        let w = unit_weights(&p);
        let mut rng = crate::rng::seeded(140);
        let lr = lowrank_hessian_inverse(&p, &w, 6, &mut rng).unwrap();
        let dense = weighted_hessian(&p, &w).unwrap().factor.inverse();
        let rel = (lr.to_dense().as_matrix() - dense.as_matrix()).norm() / dense.as_matrix().norm();
        assert!(rel <= 1e-8, "relative error {rel}");
    }

    #[test]
    fn lowrank_zero_weights_is_prior() {
        let p = random_problem(5, 2, 2, 1, 15);
        let w = StructuredMatrix::Dense(SymMatrix::zeros(4));
        let mut rng = crate::rng::seeded(150);
        let lr = lowrank_hessian_inverse(&p, &w, 3, &mut rng).unwrap();
        let v = DVector::from_fn(5, |i, _| i as f64 + 1.0);
        assert_relative_eq!(lr.apply(&v), p.prior.covariance.apply(&v), epsilon = 1e-12);
    }

    #[test]
    fn lowrank_trace_captures_dominant_eigenmass() {
        let p = random_problem(12, 4, 3, 3, 16);
        let w = unit_weights(&p);
        let dense_cov = goal_posterior_cov(&p, &w).unwrap();
        let exact = dense_cov.trace();
        // Pick the rank covering at least 99% of the preconditioned-misfit
        // eigenvalue mass, via a dense eigendecomposition oracle.
        let f = p.forward.stacked();
        let misfit = f.transpose() * w.to_dense().as_matrix() * &f;
        let l = spd_factorize(&p.prior.covariance).unwrap().l();
        let pre = l.transpose() * misfit * &l;
        let mut eigs: Vec<f64> = nalgebra::SymmetricEigen::new(0.5 * (&pre + pre.transpose()))
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let total: f64 = eigs.iter().sum();
        let mut mass = 0.0;
        let mut rank = 0;
        for (i, lam) in eigs.iter().enumerate() {
            mass += lam;
            if mass >= 0.99 * total {
                rank = i + 1;
                break;
            }
        }
        let mut rng = crate::rng::seeded(160);
        let lr = lowrank_hessian_inverse(&p, &w, rank, &mut rng).unwrap();
        let approx_trace = lr.goal_trace(&p.goal);
        let rel = (approx_trace - exact).abs() / exact;
        assert!(rel <= 0.01, "trace rel err {rel} at rank {rank}");
    }

    #[test]
    fn lowrank_rejects_excess_rank() {
        let p = random_problem(4, 2, 1, 1, 17);
        let w = unit_weights(&p);
        let mut rng = crate::rng::seeded(170);
        assert!(lowrank_hessian_inverse(&p, &w, 5, &mut rng).is_err());
    }
}
