//! Shared helpers for unit tests.

use nalgebra::{DMatrix, DVector};

use crate::bayes::{ForwardModel, GoalOperator, InverseProblemSpec, Prior};
use crate::kernels::SpaceTimeCovariance;
use crate::linalg::SymMatrix;
use crate::rng::Rng;

pub(crate) fn random_sym(n: usize, rng: &mut Rng) -> SymMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| crate::rng::uniform(rng, -1.0, 1.0));
    SymMatrix::from_matrix(0.5 * (&g + g.transpose())).unwrap()
}

pub(crate) fn random_spd(n: usize, rng: &mut Rng) -> SymMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| crate::rng::uniform(rng, -1.0, 1.0));
    let m = &g * g.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.1);
    SymMatrix::from_matrix(m).unwrap()
}

/// Small random inverse problem with diagonal noise, identity mass, and a
/// forward map scaled to keep sigmoid-weighted Hessians positive definite.
pub(crate) fn random_problem(
    nparam: usize,
    nsens: usize,
    n_t: usize,
    npred: usize,
    seed: u64,
) -> InverseProblemSpec {
    let mut rng = crate::rng::seeded(seed);
    let scale = 0.6 / (nsens as f64).sqrt();
    let blocks: Vec<DMatrix<f64>> = (0..n_t)
        .map(|_| {
            DMatrix::from_fn(nsens, nparam, |_, _| {
                scale * crate::rng::uniform(&mut rng, -1.0, 1.0)
            })
        })
        .collect();
    let times: Vec<f64> = (0..n_t).map(|m| 1.0 + 0.2 * m as f64).collect();
    let forward = ForwardModel::new(blocks, times, None).unwrap();
    let prior_cov = random_spd(nparam, &mut rng)
        .scale(1.0 / nparam as f64)
        .add(&SymMatrix::identity(nparam))
        .unwrap();
    let mean = DVector::from_fn(nparam, |_, _| crate::rng::uniform(&mut rng, -1.0, 1.0));
    let prior = Prior::new(mean, prior_cov).unwrap();
    let goal = GoalOperator::new(DMatrix::from_fn(npred, nparam, |_, _| {
        crate::rng::uniform(&mut rng, -1.0, 1.0)
    }))
    .unwrap();
    let vars = DVector::from_fn(nsens, |_, _| crate::rng::uniform(&mut rng, 0.5, 2.0));
    let noise = SpaceTimeCovariance::diagonal_stationary(&vars, n_t).unwrap();
    InverseProblemSpec::new(forward, prior, goal, noise).unwrap()
}
