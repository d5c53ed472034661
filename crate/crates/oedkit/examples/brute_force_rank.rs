//! Rank the thresholded OED designs inside the full brute-force enumeration
//! of sensor subsets, and check the single most important sensor.
//!
//! ```bash
//! cargo run --example brute_force_rank
//! ```

use nalgebra::DVector;
use oedkit::config::ExperimentConfig;
use oedkit::driver::assemble;
use oedkit::kernels::{KernelKind, WeightKernelSpec};
use oedkit::optimize::{brute_force_enumerate, solve_oed, threshold_to_budget};

fn active_indices(active: &[bool]) -> Vec<usize> {
    active
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| a.then_some(i))
        .collect()
}

fn main() -> oedkit::Result<()> {
    let mut config = ExperimentConfig::default();
    config.sensors.count = 12;
    config.sensors.length_scale = 2.0; // strongly correlated observation errors
    config.criterion.budget = 3;
    config.criterion.alpha = 3e-3;
    config.optimizer.pgtol = 1e-8;
    config.optimizer.max_iters = 500;
    let exp = assemble(config)?;

    let subsets = brute_force_enumerate(&exp.problem, &exp.criterion, &exp.kernel, 3, 1_000_000)?;
    println!(
        "enumerated all {} subsets of 3 sensors: best {:.4e} ({:?}), worst {:.4e}",
        subsets.len(),
        subsets[0].1,
        active_indices(&subsets[0].0),
        subsets.last().unwrap().1
    );
    let singles = brute_force_enumerate(&exp.problem, &exp.criterion, &exp.kernel, 1, 1_000_000)?;
    println!(
        "best single sensor by brute force: {:?} at {:.4e}\n",
        active_indices(&singles[0].0),
        singles[0].1
    );

    for kind in [KernelKind::Sqrt, KernelKind::Sigmoid] {
        let kernel = WeightKernelSpec::new(kind, 1.0, None)?;
        let result = solve_oed(&exp.problem, &exp.criterion, &kernel, &exp.optimizer, 3)?;
        let rank = subsets
            .iter()
            .position(|(a, _)| *a == result.binary_design)
            .unwrap();
        let top1 = threshold_to_budget(&DVector::from_row_slice(&result.weights), 1)?;
        println!(
            "{kind:?}: thresholded design {:?} ranks {rank} of {} (criterion {:.4e});",
            active_indices(&result.binary_design),
            subsets.len(),
            result.criterion_thresholded_binary
        );
        println!(
            "  top-weighted sensor {:?} {} the brute-force single-sensor optimum",
            active_indices(&top1),
            if top1 == singles[0].0 { "matches" } else { "differs from" }
        );
    }
    Ok(())
}
