//! Continuation over the sigmoid scaling: re-solve with increasing
//! steepness, warm-starting each stage, and watch the weights drift toward
//! a binary design.
//!
//! ```bash
//! cargo run --example continuation
//! ```

use oedkit::config::{ExperimentConfig, SigmaSpec};
use oedkit::driver::assemble;
use oedkit::kernels::WeightKernelSpec;
use oedkit::optimize::continuation;

fn main() -> oedkit::Result<()> {
    let mut config = ExperimentConfig::default();
    config.model.grid = [12, 12];
    config.sensors.count = 12;
    config.sensors.length_scale = 0.4;
    config.sensors.sigma = SigmaSpec::Relative { relative: 0.05 };
    config.criterion.budget = 3;
    config.criterion.alpha = 1e-3;
    config.optimizer.pgtol = 1e-9;
    config.optimizer.max_iters = 300;
    let exp = assemble(config)?;

    let kernel = WeightKernelSpec::sigmoid(1.0);
    let schedule = [1.0, 2.0, 5.0, 10.0];
    let (final_result, stages) = continuation(
        &exp.problem,
        &exp.criterion,
        &kernel,
        &exp.optimizer,
        exp.budget,
        &schedule,
    )?;

    println!(
        "{:>8} {:>14} {:>16} {:>18}",
        "scaling", "relaxed", "thresh. binary", "dist to binary"
    );
    for s in &stages {
        println!(
            "{:>8} {:>14.6e} {:>16.6e} {:>18.4}",
            s.scaling, s.criterion_relaxed, s.criterion_thresholded_binary, s.mean_distance_to_binary
        );
    }
    let active: Vec<usize> = final_result
        .binary_design
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| a.then_some(i))
        .collect();
    println!(
        "\nfinal deployment after continuation: sensors {active:?} (criterion {:.6e})",
        final_result.criterion_thresholded_binary
    );
    Ok(())
}
