//! Shared builders for the integration test suites.

use nalgebra::{DMatrix, DVector};
use oedkit::bayes::{ForwardModel, GoalOperator, InverseProblemSpec, Prior};
use oedkit::kernels::{gaspari_cohn, kronecker_spacetime, SpaceTimeCovariance};
use oedkit::linalg::{BlockDiag, SymMatrix};
use oedkit::rng::{seeded, uniform, Rng};

/// Observation-error covariance structure of a generated instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseStructure {
    Diagonal,
    SpaceBlocks,
    DenseSpaceTime,
}

pub struct RandomInstance {
    pub problem: InverseProblemSpec,
    pub nsens: usize,
}

/// A random linear Gaussian instance with the requested noise structure.
/// The forward map is scaled down so sigmoid-weighted Hessians stay positive
/// definite across the designs the tests visit.
pub fn random_instance(structure: NoiseStructure, seed: u64) -> RandomInstance {
    let mut rng = seeded(seed);
    let nparam = 8 + (uniform(&mut rng, 0.0, 1.0) * 13.0) as usize; // 8..=20
    let nsens = 3 + (uniform(&mut rng, 0.0, 1.0) * 6.0) as usize; // 3..=8
    let n_t = 1 + (uniform(&mut rng, 0.0, 1.0) * 4.0) as usize; // 1..=4
    let npred = 1 + (uniform(&mut rng, 0.0, 1.0) * 5.0) as usize; // 1..=5

    let scale = 0.6 / (nsens as f64).sqrt();
    let blocks: Vec<DMatrix<f64>> = (0..n_t)
        .map(|_| DMatrix::from_fn(nsens, nparam, |_, _| scale * uniform(&mut rng, -1.0, 1.0)))
        .collect();
    let times: Vec<f64> = (0..n_t).map(|m| 1.0 + 0.2 * m as f64).collect();
    let forward = ForwardModel::new(blocks, times.clone(), None).unwrap();

    let prior_cov = random_spd(nparam, &mut rng)
        .scale(1.0 / nparam as f64)
        .add(&SymMatrix::identity(nparam))
        .unwrap();
    let mean = DVector::from_fn(nparam, |_, _| uniform(&mut rng, -1.0, 1.0));
    let prior = Prior::new(mean, prior_cov).unwrap();
    let goal = GoalOperator::new(DMatrix::from_fn(npred, nparam, |_, _| {
        uniform(&mut rng, -1.0, 1.0)
    }))
    .unwrap();

    let spatial = random_spd(nsens, &mut rng)
        .scale(0.4)
        .add(&SymMatrix::identity(nsens))
        .unwrap();
    let noise = match structure {
        NoiseStructure::Diagonal => {
            let vars = DVector::from_fn(nsens, |_, _| uniform(&mut rng, 0.5, 2.0));
            SpaceTimeCovariance::diagonal_stationary(&vars, n_t).unwrap()
        }
        NoiseStructure::SpaceBlocks => {
            SpaceTimeCovariance::from_blocks(BlockDiag::repeated(spatial, n_t)).unwrap()
        }
        NoiseStructure::DenseSpaceTime => {
            let tcorr = SymMatrix::from_matrix(DMatrix::from_fn(n_t, n_t, |a, b| {
                gaspari_cohn((times[a] - times[b]).abs() / 0.3)
            }))
            .unwrap();
            kronecker_spacetime(&tcorr, &spatial).unwrap()
        }
    };

    RandomInstance {
        problem: InverseProblemSpec::new(forward, prior, goal, noise).unwrap(),
        nsens,
    }
}

pub fn random_spd(n: usize, rng: &mut Rng) -> SymMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| uniform(rng, -1.0, 1.0));
    let m = &g * g.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.1);
    SymMatrix::from_matrix(m).unwrap()
}

pub fn active_indices(active: &[bool]) -> Vec<usize> {
    active
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| a.then_some(i))
        .collect()
}
