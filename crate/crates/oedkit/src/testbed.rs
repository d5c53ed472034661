//! Self-contained advection-diffusion testbed on the unit square.
//!
//! A finite-difference discretization on cell centers with implicit Euler
//! time stepping: unconditionally stable diffusion (Neumann no-flux walls)
//! plus first-order upwind advection through an analytic divergence-free
//! velocity field derived from the stream function `ψ = sin(πx) sin(πy)`.
//! The module assembles forward blocks, Gaspari-Cohn observation
//! covariances, a smoothing prior, the goal operator at a future prediction
//! time, synthetic data, and the RAE/RMSE error metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes::{forward_apply, ForwardModel, GoalOperator, Prior};
use crate::error::{OedError, Result};
use crate::kernels::{gaspari_cohn, SpaceTimeCovariance};
use crate::linalg::{BlockDiag, SymMatrix};
use crate::rng::Rng;

/// Axis-aligned rectangle used for obstacle masks, `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Advection-diffusion model configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Cells along x and y on the unit square.
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    /// Diffusivity; must be positive.
    pub kappa: f64,
    /// Maximum speed of the stream-function velocity field; zero disables
    /// advection.
    pub max_speed: f64,
    /// Observation times, each an integer multiple of `dt`.
    pub obs_times: Vec<f64>,
    /// Prediction time, beyond the last observation.
    pub prediction_time: f64,
    /// Optional rectangular obstacles; cells inside are decoupled.
    pub obstacles: Vec<Rect>,
}

impl ModelConfig {
    /// The default desk-scale configuration: 24x24 grid, six observation
    /// times `1.0, 1.2, …, 2.0`, prediction at `2.2`.
    pub fn default_desk() -> Self {
        ModelConfig {
            nx: 24,
            ny: 24,
            dt: 0.2,
            kappa: 0.01,
            max_speed: 1.0,
            obs_times: (0..6).map(|s| 1.0 + 0.2 * s as f64).collect(),
            prediction_time: 2.2,
            obstacles: Vec::new(),
        }
    }

    pub fn ncells(&self) -> usize {
        self.nx * self.ny
    }
}

/// A Gaussian bump used to build the true initial condition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Blob {
    pub center: (f64, f64),
    pub width: f64,
    pub amplitude: f64,
}

/// Candidate sensor locations with their bilinear restriction operator.
#[derive(Debug, Clone)]
pub struct SensorGrid {
    pub locations: Vec<(f64, f64)>,
    /// Restriction `H` (`Nsens × Nθ`); every row sums to one.
    pub interpolation: DMatrix<f64>,
}

impl SensorGrid {
    pub fn nsens(&self) -> usize {
        self.locations.len()
    }
}

/// Quasi-uniform sensor locations: `count` nodes picked evenly from the
/// smallest cell-centered square grid that holds them.
pub fn uniform_sensor_locations(count: usize) -> Vec<(f64, f64)> {
    assert!(count >= 1);
    let g = (count as f64).sqrt().ceil() as usize;
    let total = g * g;
    let mut locations = Vec::with_capacity(count);
    for j in 0..count {
        let node = if count == 1 {
            total / 2
        } else {
            ((j as f64) * ((total - 1) as f64) / ((count - 1) as f64)).round() as usize
        };
        let ix = node % g;
        let iy = node / g;
        locations.push(((ix as f64 + 0.5) / g as f64, (iy as f64 + 0.5) / g as f64));
    }
    locations
}

/// The assembled discretization: operator, factored step matrix, and cell
/// mask. Built once per configuration and shared by the forward model, goal
/// operator, and prior.
pub struct Testbed {
    config: ModelConfig,
    /// Dense spatial operator `A` with `u_t + A u = 0`.
    operator: DMatrix<f64>,
    /// LU factorization of `(I + dt A)ᵀ` for propagating restriction rows.
    step_transpose_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// LU factorization of `I + dt A` for state stepping.
    step_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// False for cells inside an obstacle.
    active: Vec<bool>,
    /// Negative FD Laplacian (no advection), used by the prior.
    neg_laplacian: DMatrix<f64>,
}

impl Testbed {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.kappa.is_nan() || config.kappa <= 0.0 {
            return Err(OedError::InvalidConfig(format!(
                "diffusivity must be positive, got {}",
                config.kappa
            )));
        }
        if config.dt.is_nan() || config.dt <= 0.0 {
            return Err(OedError::InvalidConfig("timestep must be positive".into()));
        }
        if config.nx < 2 || config.ny < 2 {
            return Err(OedError::InvalidConfig("grid must be at least 2x2".into()));
        }
        for &t in &config.obs_times {
            steps_for(&config, t)?;
        }
        let max_obs = config.obs_times.iter().cloned().fold(0.0, f64::max);
        if config.prediction_time <= max_obs {
            return Err(OedError::InvalidConfig(format!(
                "prediction time {} must exceed the last observation time {max_obs}",
                config.prediction_time
            )));
        }

        let n = config.ncells();
        let active: Vec<bool> = (0..n)
            .map(|c| {
                let (x, y) = cell_center(&config, c);
                !config.obstacles.iter().any(|r| r.contains(x, y))
            })
            .collect();

        let mut operator = DMatrix::zeros(n, n);
        let mut neg_laplacian = DMatrix::zeros(n, n);
        let hx = 1.0 / config.nx as f64;
        let hy = 1.0 / config.ny as f64;
        let speed_scale = config.max_speed / std::f64::consts::PI;
        for c in 0..n {
            if !active[c] {
                continue;
            }
            let ix = c % config.nx;
            let iy = c / config.nx;
            let (x, y) = cell_center(&config, c);
            let neighbor = |dx: isize, dy: isize| -> Option<usize> {
                let jx = ix as isize + dx;
                let jy = iy as isize + dy;
                if jx < 0 || jy < 0 || jx >= config.nx as isize || jy >= config.ny as isize {
                    return None;
                }
                let idx = jy as usize * config.nx + jx as usize;
                active[idx].then_some(idx)
            };

            // Diffusion: -κ Δ with no-flux links.
            for (nb, h) in [
                (neighbor(-1, 0), hx),
                (neighbor(1, 0), hx),
                (neighbor(0, -1), hy),
                (neighbor(0, 1), hy),
            ] {
                if let Some(nb) = nb {
                    let w = config.kappa / (h * h);
                    operator[(c, c)] += w;
                    operator[(c, nb)] -= w;
                    neg_laplacian[(c, c)] += 1.0 / (h * h);
                    neg_laplacian[(c, nb)] -= 1.0 / (h * h);
                }
            }

            // First-order upwind advection from the stream-function field.
            if config.max_speed > 0.0 {
                let pi = std::f64::consts::PI;
                let vx = speed_scale * pi * (pi * x).sin() * (pi * y).cos();
                let vy = -speed_scale * pi * (pi * x).cos() * (pi * y).sin();
                if vx > 0.0 {
                    if let Some(w) = neighbor(-1, 0) {
                        operator[(c, c)] += vx / hx;
                        operator[(c, w)] -= vx / hx;
                    }
                } else if vx < 0.0 {
                    if let Some(e) = neighbor(1, 0) {
                        operator[(c, c)] -= vx / hx;
                        operator[(c, e)] += vx / hx;
                    }
                }
                if vy > 0.0 {
                    if let Some(s) = neighbor(0, -1) {
                        operator[(c, c)] += vy / hy;
                        operator[(c, s)] -= vy / hy;
                    }
                } else if vy < 0.0 {
                    if let Some(nn) = neighbor(0, 1) {
                        operator[(c, c)] -= vy / hy;
                        operator[(c, nn)] += vy / hy;
                    }
                }
            }
        }

        let step = DMatrix::identity(n, n) + config.dt * &operator;
        let step_lu = nalgebra::LU::new(step.clone());
        let step_transpose_lu = nalgebra::LU::new(step.transpose());
        if !step_lu.is_invertible() {
            return Err(OedError::InvalidConfig(
                "implicit Euler step matrix is singular".into(),
            ));
        }
        Ok(Testbed {
            config,
            operator,
            step_transpose_lu,
            step_lu,
            active,
            neg_laplacian,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Spatial operator `A` (dense), for oracle comparisons.
    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    /// One implicit Euler step: solve `(I + dt A) u_next = u`.
    pub fn step(&self, u: &DVector<f64>) -> DVector<f64> {
        self.step_lu.solve(u).expect("step matrix invertible")
    }

    /// Dense single-step propagator `(I + dt A)⁻¹`, for oracle comparisons.
    pub fn step_matrix(&self) -> DMatrix<f64> {
        let n = self.config.ncells();
        self.step_lu
            .solve(&DMatrix::identity(n, n))
            .expect("step matrix invertible")
    }

    fn cell_active(&self, x: f64, y: f64) -> bool {
        !self.config.obstacles.iter().any(|r| r.contains(x, y))
    }

    /// Bilinear restriction rows from cell-centered values to points.
    fn restriction(&self, points: &[(f64, f64)]) -> Result<DMatrix<f64>> {
        let cfg = &self.config;
        let n = cfg.ncells();
        let mut h = DMatrix::zeros(points.len(), n);
        for (r, &(x, y)) in points.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(OedError::InvalidConfig(format!(
                    "point ({x}, {y}) lies outside the unit square"
                )));
            }
            if !self.cell_active(x, y) {
                return Err(OedError::InvalidConfig(format!(
                    "point ({x}, {y}) lies inside an obstacle"
                )));
            }
            let gx = (x * cfg.nx as f64 - 0.5).clamp(0.0, (cfg.nx - 1) as f64);
            let gy = (y * cfg.ny as f64 - 0.5).clamp(0.0, (cfg.ny - 1) as f64);
            let ix = gx.floor() as usize;
            let iy = gy.floor() as usize;
            let ix1 = (ix + 1).min(cfg.nx - 1);
            let iy1 = (iy + 1).min(cfg.ny - 1);
            let wx = gx - ix as f64;
            let wy = gy - iy as f64;
            for (jx, jy, w) in [
                (ix, iy, (1.0 - wx) * (1.0 - wy)),
                (ix1, iy, wx * (1.0 - wy)),
                (ix, iy1, (1.0 - wx) * wy),
                (ix1, iy1, wx * wy),
            ] {
                let c = jy * cfg.nx + jx;
                if w > 0.0 && !self.active[c] {
                    return Err(OedError::InvalidConfig(format!(
                        "point ({x}, {y}) interpolates into an obstacle cell"
                    )));
                }
                h[(r, c)] += w;
            }
        }
        Ok(h)
    }

    /// Sensor grid from explicit coordinates.
    pub fn sensor_grid(&self, locations: Vec<(f64, f64)>) -> Result<SensorGrid> {
        let interpolation = self.restriction(&locations)?;
        Ok(SensorGrid {
            locations,
            interpolation,
        })
    }

    /// Forward blocks `F_{0,m} = H (I + dt A)^{-n_m}` for every observation
    /// time, with an identity mass matrix.
    pub fn forward_model(&self, sensors: &SensorGrid) -> Result<ForwardModel> {
        let steps: Vec<usize> = self
            .config
            .obs_times
            .iter()
            .map(|&t| steps_for(&self.config, t))
            .collect::<Result<_>>()?;
        let max_steps = steps.iter().copied().max().unwrap_or(0);
        let mut rows = sensors.interpolation.clone();
        let mut blocks: Vec<Option<DMatrix<f64>>> = vec![None; steps.len()];
        for (m, &s) in steps.iter().enumerate() {
            if s == 0 {
                blocks[m] = Some(rows.clone());
            }
        }
        for k in 1..=max_steps {
            // rows ← rows · (I + dt A)⁻¹, via the transposed factorization.
            let solved = self
                .step_transpose_lu
                .solve(&rows.transpose())
                .expect("step matrix invertible");
            rows = solved.transpose();
            for (m, &s) in steps.iter().enumerate() {
                if s == k {
                    blocks[m] = Some(rows.clone());
                }
            }
        }
        let blocks: Vec<DMatrix<f64>> = blocks.into_iter().map(|b| b.expect("filled")).collect();
        ForwardModel::new(blocks, self.config.obs_times.clone(), None)
    }

    /// Goal operator `P = C_p (I + dt A)^{-n_p}` mapping the initial
    /// condition to predicted concentrations at the prediction points.
    pub fn goal_operator(&self, prediction_points: &[(f64, f64)]) -> Result<GoalOperator> {
        if self.config.prediction_time <= 0.0 {
            return Err(OedError::InvalidConfig(
                "prediction time must be positive".into(),
            ));
        }
        let n_p = steps_for(&self.config, self.config.prediction_time)?;
        let mut rows = self.restriction(prediction_points)?;
        for _ in 0..n_p {
            let solved = self
                .step_transpose_lu
                .solve(&rows.transpose())
                .expect("step matrix invertible");
            rows = solved.transpose();
        }
        GoalOperator::new(rows)
    }

    /// Smoothing prior `Γ_prior = γ (δ I + L)⁻²` with `L` the Neumann FD
    /// Laplacian, scaled so the largest diagonal variance equals `variance`.
    pub fn prior(&self, delta: f64, variance: f64, mean_value: f64) -> Result<Prior> {
        if !(delta > 0.0 && variance > 0.0) {
            return Err(OedError::InvalidConfig(
                "prior delta and variance must be positive".into(),
            ));
        }
        let n = self.config.ncells();
        let shifted = DMatrix::identity(n, n) * delta + &self.neg_laplacian;
        let inv = nalgebra::LU::new(shifted)
            .solve(&DMatrix::identity(n, n))
            .ok_or_else(|| OedError::InvalidConfig("prior operator is singular".into()))?;
        let squared = &inv * &inv;
        let squared = 0.5 * (&squared + squared.transpose());
        let max_var = squared.diagonal().amax();
        let cov = SymMatrix::from_symmetric_unchecked(squared * (variance / max_var));
        Prior::new(DVector::from_element(n, mean_value), cov)
    }

    /// Initial condition from Gaussian bumps, zeroed inside obstacles.
    pub fn initial_condition(&self, blobs: &[Blob]) -> DVector<f64> {
        let n = self.config.ncells();
        DVector::from_fn(n, |c, _| {
            if !self.active[c] {
                return 0.0;
            }
            let (x, y) = cell_center(&self.config, c);
            blobs
                .iter()
                .map(|b| {
                    let dx = x - b.center.0;
                    let dy = y - b.center.1;
                    b.amplitude * (-(dx * dx + dy * dy) / (2.0 * b.width * b.width)).exp()
                })
                .sum()
        })
    }

    /// Prediction points covering a rectangle with an `nx × ny` point grid.
    pub fn prediction_points(&self, region: Rect, nx: usize, ny: usize) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let fx = if nx == 1 { 0.5 } else { i as f64 / (nx - 1) as f64 };
                let fy = if ny == 1 { 0.5 } else { j as f64 / (ny - 1) as f64 };
                pts.push((
                    region.x0 + fx * (region.x1 - region.x0),
                    region.y0 + fy * (region.y1 - region.y0),
                ));
            }
        }
        pts
    }
}

fn cell_center(config: &ModelConfig, c: usize) -> (f64, f64) {
    let ix = c % config.nx;
    let iy = c / config.nx;
    (
        (ix as f64 + 0.5) / config.nx as f64,
        (iy as f64 + 0.5) / config.ny as f64,
    )
}

fn steps_for(config: &ModelConfig, t: f64) -> Result<usize> {
    let steps = (t / config.dt).round();
    if (steps * config.dt - t).abs() > 1e-9 * config.dt.max(1.0) || steps < 0.0 {
        return Err(OedError::InvalidConfig(format!(
            "time {t} is not a nonnegative multiple of dt = {}",
            config.dt
        )));
    }
    Ok(steps as usize)
}

/// Spatial observation covariance from a Gaspari-Cohn correlation with
/// length scale `ell`, scaled by the noise variance `sigma_obs²` and
/// repeated identically over `n_t` observation times. `ell = 0` yields the
/// uncorrelated diagonal covariance.
pub fn build_gc_covariance(
    sensors: &SensorGrid,
    ell: f64,
    sigma_obs: f64,
    n_t: usize,
) -> Result<SpaceTimeCovariance> {
    if sigma_obs.is_nan() || sigma_obs <= 0.0 {
        return Err(OedError::InvalidConfig(format!(
            "observation noise must be positive, got {sigma_obs}"
        )));
    }
    if ell < 0.0 {
        return Err(OedError::InvalidConfig("length scale must be nonnegative".into()));
    }
    let nsens = sensors.nsens();
    let var = sigma_obs * sigma_obs;
    if ell == 0.0 {
        return SpaceTimeCovariance::diagonal_stationary(&DVector::from_element(nsens, var), n_t);
    }
    let block = DMatrix::from_fn(nsens, nsens, |i, j| {
        let (xi, yi) = sensors.locations[i];
        let (xj, yj) = sensors.locations[j];
        let dist = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
        var * gaspari_cohn(dist / ell)
    });
    let block = SymMatrix::from_matrix(block)?;
    SpaceTimeCovariance::from_blocks(BlockDiag::repeated(block, n_t))
}

/// Observation noise level as a fraction of the largest noiseless
/// observation magnitude.
pub fn relative_noise_sigma(
    forward: &ForwardModel,
    theta_true: &DVector<f64>,
    fraction: f64,
) -> Result<f64> {
    let y0 = forward_apply(forward, theta_true)?;
    let max_obs = y0.amax();
    if max_obs == 0.0 {
        return Err(OedError::InvalidConfig(
            "noiseless observations are identically zero; cannot set a relative noise level"
                .into(),
        ));
    }
    Ok(fraction * max_obs)
}

/// Synthetic observations `y = F θ_true + δ` with `δ ~ N(0, Γ_noise)`.
/// `zero_noise` skips the perturbation (useful for benchmarks).
pub fn synth_data(
    forward: &ForwardModel,
    noise: &SpaceTimeCovariance,
    theta_true: &DVector<f64>,
    zero_noise: bool,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    let clean = forward_apply(forward, theta_true)?;
    if zero_noise {
        return Ok(clean);
    }
    Ok(clean + noise.sample_noise(rng)?)
}

/// Elementwise relative absolute error and the root mean squared error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// `|(est - truth)/truth|` per entry; `None` where the truth is zero.
    pub rae: Vec<Option<f64>>,
    pub rmse: f64,
}

impl ErrorMetrics {
    pub fn masked_indices(&self) -> Vec<usize> {
        self.rae
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.is_none().then_some(i))
            .collect()
    }
}

/// Compute RAE (zeros in the truth masked) and RMSE. Errs with
/// [`OedError::AllZeroTruth`] carrying the RMSE when no entry of the truth
/// is nonzero.
pub fn error_metrics(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<ErrorMetrics> {
    if estimate.len() != truth.len() {
        return Err(OedError::dims(
            truth.len().to_string(),
            estimate.len().to_string(),
            "error metrics",
        ));
    }
    let n = estimate.len();
    let rmse = ((estimate - truth).norm_squared() / n as f64).sqrt();
    if truth.iter().all(|&v| v == 0.0) {
        return Err(OedError::AllZeroTruth { rmse });
    }
    let rae = (0..n)
        .map(|i| {
            (truth[i] != 0.0).then(|| ((estimate[i] - truth[i]) / truth[i]).abs())
        })
        .collect();
    Ok(ErrorMetrics { rae, rmse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_config() -> ModelConfig {
        ModelConfig {
            nx: 6,
            ny: 6,
            dt: 0.2,
            kappa: 0.01,
            max_speed: 1.0,
            obs_times: vec![0.4, 0.6],
            prediction_time: 1.0,
            obstacles: Vec::new(),
        }
    }

    #[test]
    fn zero_parameter_maps_to_zero_observations() {
        let tb = Testbed::new(small_config()).unwrap();
        let sensors = tb
            .sensor_grid(uniform_sensor_locations(4))
            .unwrap();
        let fwd = tb.forward_model(&sensors).unwrap();
        let y = forward_apply(&fwd, &DVector::zeros(36)).unwrap();
        assert_eq!(y, DVector::zeros(8));
    }

    #[test]
    fn pure_diffusion_contracts_range_monotonically() {
        let mut cfg = small_config();
        cfg.max_speed = 0.0;
        let tb = Testbed::new(cfg).unwrap();
        let mut u = tb.initial_condition(&[Blob {
            center: (0.3, 0.3),
            width: 0.1,
            amplitude: 1.0,
        }]);
        let mut range = u.max() - u.min();
        for _ in 0..20 {
            let next = tb.step(&u);
            // Discrete maximum principle: values stay inside the previous
            // bounds.
            assert!(next.max() <= u.max() + 1e-12);
            assert!(next.min() >= u.min() - 1e-12);
            let next_range = next.max() - next.min();
            assert!(next_range <= range + 1e-12);
            range = next_range;
            u = next;
        }
    }

    #[test]
    fn single_step_matches_dense_inverse_oracle() {
        let cfg = ModelConfig {
            nx: 3,
            ny: 3,
            dt: 0.1,
            kappa: 0.05,
            max_speed: 0.7,
            obs_times: vec![0.1],
            prediction_time: 0.2,
            obstacles: Vec::new(),
        };
        let tb = Testbed::new(cfg).unwrap();
        // Oracle: dense (I + dt·A)⁻¹ assembled independently.
        let a = tb.operator().clone();
        let dense = (DMatrix::identity(9, 9) + 0.1 * a)
            .try_inverse()
            .unwrap();
        let err = (tb.step_matrix() - &dense).abs().max();
        assert!(err <= 1e-12, "step matrix error {err}");

        // θ = e_1 through the sensor-block path matches the oracle too.
        let sensors = tb.sensor_grid(vec![(0.5, 0.5)]).unwrap();
        let fwd = tb.forward_model(&sensors).unwrap();
        let mut theta = DVector::zeros(9);
        theta[0] = 1.0;
        let y = forward_apply(&fwd, &theta).unwrap();
        let oracle = &sensors.interpolation * &dense * &theta;
        assert_relative_eq!(y[0], oracle[0], epsilon = 1e-12);
    }

    #[test]
    fn forward_pipeline_is_linear() {
        let tb = Testbed::new(small_config()).unwrap();
        let sensors = tb.sensor_grid(uniform_sensor_locations(5)).unwrap();
        let fwd = tb.forward_model(&sensors).unwrap();
        let mut rng = crate::rng::seeded(800);
        let u = DVector::from_fn(36, |_, _| crate::rng::uniform(&mut rng, -1.0, 1.0));
        let v = DVector::from_fn(36, |_, _| crate::rng::uniform(&mut rng, -1.0, 1.0));
        let lhs = forward_apply(&fwd, &(1.5 * &u - 2.5 * &v)).unwrap();
        let rhs = 1.5 * forward_apply(&fwd, &u).unwrap() - 2.5 * forward_apply(&fwd, &v).unwrap();
        assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn interpolation_rows_sum_to_one() {
        let tb = Testbed::new(small_config()).unwrap();
        let sensors = tb
            .sensor_grid(vec![(0.11, 0.94), (0.5, 0.5), (0.98, 0.02)])
            .unwrap();
        for r in 0..3 {
            let sum: f64 = sensors.interpolation.row(r).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gc_covariance_structure() {
        let tb = Testbed::new(small_config()).unwrap();
        let sensors = tb.sensor_grid(uniform_sensor_locations(6)).unwrap();
        // ℓ = 0: diagonal.
        let diag = build_gc_covariance(&sensors, 0.0, 0.5, 2).unwrap();
        assert!(diag.is_temporally_uncorrelated());
        assert_eq!(diag.precision_dense().entry(0, 0), 4.0);
        // ℓ > 0: same variance on the diagonal, compact support beyond 2ℓ.
        let ell = 0.15;
        let cov = build_gc_covariance(&sensors, ell, 0.5, 2).unwrap();
        let dense = cov.data().to_dense();
        for i in 0..6 {
            assert_relative_eq!(dense.entry(i, i), 0.25, epsilon = 1e-14);
            for j in 0..6 {
                let (xi, yi) = sensors.locations[i];
                let (xj, yj) = sensors.locations[j];
                let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                if d >= 2.0 * ell {
                    assert_eq!(dense.entry(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn gc_covariance_is_spd_for_various_scales() {
        let tb = Testbed::new(small_config()).unwrap();
        let sensors = tb.sensor_grid(uniform_sensor_locations(9)).unwrap();
        for ell in [0.05, 0.15, 0.3, 0.6, 1.5] {
            // Construction inverts blockwise via Cholesky, so success is the
            // SPD check.
            build_gc_covariance(&sensors, ell, 0.3, 2).unwrap();
        }
    }

    #[test]
    fn prior_is_spd_and_smoothing() {
        let tb = Testbed::new(small_config()).unwrap();
        let prior = tb.prior(30.0, 1.0, 0.0).unwrap();
        // SPD: factorization succeeded inside Prior::new. Smoothness:
        // adjacent cells correlate more strongly than distant ones.
        let cov = &prior.covariance;
        let c_adjacent = cov.entry(0, 1) / (cov.entry(0, 0) * cov.entry(1, 1)).sqrt();
        let far = 35;
        let c_far = cov.entry(0, far) / (cov.entry(0, 0) * cov.entry(far, far)).sqrt();
        assert!(c_adjacent > c_far, "adjacent {c_adjacent} vs far {c_far}");
        assert_relative_eq!(cov.diagonal().amax(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn prior_large_shift_approaches_scaled_identity() {
        // The off-diagonal to diagonal ratio decays toward zero as the shift
        // grows; the Laplacian couplings scale like 1/h², so the ratio is
        // roughly 2/(δ h²).
        let tb = Testbed::new(small_config()).unwrap();
        let ratio_at = |delta: f64| {
            let prior = tb.prior(delta, 1.0, 0.0).unwrap();
            let cov = &prior.covariance;
            let mut max_off = 0.0f64;
            for i in 0..36 {
                for j in 0..36 {
                    if i != j {
                        max_off = max_off.max(cov.entry(i, j).abs());
                    }
                }
            }
            max_off / cov.entry(0, 0)
        };
        let r30 = ratio_at(30.0);
        let r300 = ratio_at(300.0);
        let r1000 = ratio_at(1e3);
        assert!(r300 < r30 && r1000 < r300, "ratios {r30}, {r300}, {r1000}");
        assert!(r1000 < 0.1, "ratio at delta = 1e3 is {r1000}");
    }

    #[test]
    fn goal_operator_at_time_zero_is_restriction() {
        // With prediction points on all cell centers and zero steps, the
        // goal operator reduces to the identity restriction.
        let mut cfg = small_config();
        cfg.obs_times = vec![0.0];
        cfg.prediction_time = 0.2;
        let tb = Testbed::new(cfg.clone()).unwrap();
        let centers: Vec<(f64, f64)> = (0..36).map(|c| cell_center(&cfg, c)).collect();
        let rows = tb.restriction(&centers).unwrap();
        let err = (&rows - DMatrix::identity(36, 36)).abs().max();
        assert!(err <= 1e-12);
        let goal = tb.goal_operator(&centers).unwrap();
        assert_eq!(goal.matrix.nrows(), 36);
        assert_eq!(goal.apply(&DVector::zeros(36)), DVector::zeros(36));
    }

    #[test]
    fn goal_rows_match_propagated_oracle() {
        let tb = Testbed::new(small_config()).unwrap();
        let points = vec![(0.62, 0.31), (0.8, 0.75)];
        let goal = tb.goal_operator(&points).unwrap();
        let n_p = 5; // 1.0 / 0.2
        let mut oracle = tb.restriction(&points).unwrap();
        let step = tb.step_matrix();
        for _ in 0..n_p {
            oracle = &oracle * &step;
        }
        let err = (&goal.matrix - &oracle).abs().max();
        assert!(err <= 1e-10, "goal operator error {err}");
    }

    #[test]
    fn synthetic_data_errors_scale_with_sigma() {
        let tb = Testbed::new(small_config()).unwrap();
        let sensors = tb.sensor_grid(uniform_sensor_locations(4)).unwrap();
        let fwd = tb.forward_model(&sensors).unwrap();
        let theta = tb.initial_condition(&[Blob {
            center: (0.4, 0.6),
            width: 0.15,
            amplitude: 1.0,
        }]);
        let sigma = relative_noise_sigma(&fwd, &theta, 0.005).unwrap();
        assert!(sigma > 0.0);
        let noise = build_gc_covariance(&sensors, 0.0, sigma, 2).unwrap();
        let mut rng = crate::rng::seeded(900);
        let clean = synth_data(&fwd, &noise, &theta, true, &mut rng).unwrap();
        assert_eq!(clean, forward_apply(&fwd, &theta).unwrap());
        let noisy = synth_data(&fwd, &noise, &theta, false, &mut rng).unwrap();
        assert!((noisy - &clean).amax() <= 6.0 * sigma);
        // Same seed, same draw.
        let mut rng_a = crate::rng::seeded(901);
        let mut rng_b = crate::rng::seeded(901);
        let y_a = synth_data(&fwd, &noise, &theta, false, &mut rng_a).unwrap();
        let y_b = synth_data(&fwd, &noise, &theta, false, &mut rng_b).unwrap();
        assert_eq!(y_a, y_b);
    }

    #[test]
    fn error_metric_examples() {
        let est = DVector::from_vec(vec![1.0, 2.0]);
        let truth = DVector::from_vec(vec![1.0, 2.0]);
        let m = error_metrics(&est, &truth).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert!(m.rae.iter().all(|v| v == &Some(0.0)));

        let m = error_metrics(&(2.0 * &truth), &truth).unwrap();
        assert!(m.rae.iter().all(|v| v == &Some(1.0)));

        // Zero truth entry is masked; RMSE still uses every entry.
        let est = DVector::from_vec(vec![1.0, 2.0]);
        let truth = DVector::from_vec(vec![0.0, 2.0]);
        let m = error_metrics(&est, &truth).unwrap();
        assert_eq!(m.rae[0], None);
        assert_eq!(m.masked_indices(), vec![0]);
        assert_relative_eq!(m.rmse, (0.5f64).sqrt(), epsilon = 1e-14);

        let err = error_metrics(&est, &DVector::zeros(2)).unwrap_err();
        match err {
            OedError::AllZeroTruth { rmse } => {
                assert_relative_eq!(rmse, (2.5f64).sqrt(), epsilon = 1e-14)
            }
            other => panic!("expected AllZeroTruth, got {other:?}"),
        }
    }

    #[test]
    fn negative_kappa_rejected() {
        let mut cfg = small_config();
        cfg.kappa = -0.1;
        assert!(Testbed::new(cfg).is_err());
    }

    #[test]
    fn obstacle_cells_are_decoupled() {
        let mut cfg = small_config();
        cfg.obstacles = vec![Rect {
            x0: 0.3,
            y0: 0.3,
            x1: 0.55,
            y1: 0.55,
        }];
        let tb = Testbed::new(cfg).unwrap();
        // A state supported inside the obstacle stays put.
        let mut inside = DVector::zeros(36);
        let idx = 2 * 6 + 2; // cell center (0.417, 0.417)
        inside[idx] = 1.0;
        let stepped = tb.step(&inside);
        assert_relative_eq!(stepped[idx], 1.0, epsilon = 1e-12);
        assert!(stepped.iter().enumerate().all(|(i, &v)| i == idx || v.abs() < 1e-12));
        // Sensors may not sit inside obstacles.
        assert!(tb.sensor_grid(vec![(0.42, 0.42)]).is_err());
    }

    #[test]
    fn sensor_layout_counts() {
        for n in [1usize, 4, 12, 43] {
            let locs = uniform_sensor_locations(n);
            assert_eq!(locs.len(), n);
            let mut unique = locs.clone();
            unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
            unique.dedup();
            assert_eq!(unique.len(), n, "duplicate sensor locations for n = {n}");
            assert!(locs
                .iter()
                .all(|&(x, y)| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y)));
        }
    }
}
