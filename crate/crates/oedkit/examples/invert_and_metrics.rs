//! Bayesian inversion with an optimized sensor deployment: synthesize data,
//! estimate the initial condition, and report goal-prediction errors.
//!
//! ```bash
//! cargo run --example invert_and_metrics
//! ```

use oedkit::bayes::map_estimate;
use oedkit::config::{ExperimentConfig, SigmaSpec};
use oedkit::driver::assemble;
use oedkit::kernels::{build_theta_binary, weighted_precision, Design, WeightMatrix};
use oedkit::optimize::{quantile, random_baseline, solve_oed};
use oedkit::testbed::error_metrics;

fn main() -> oedkit::Result<()> {
    let mut config = ExperimentConfig::default();
    config.sensors.length_scale = 0.5;
    config.sensors.sigma = SigmaSpec::Relative { relative: 0.1 };
    config.optimizer.pgtol = 1e-9;
    config.optimizer.max_iters = 300;
    let exp = assemble(config)?;

    // Optimize, then invert with the thresholded binary deployment.
    let result = solve_oed(&exp.problem, &exp.criterion, &exp.kernel, &exp.optimizer, exp.budget)?;
    let theta_bin = build_theta_binary(
        exp.problem.forward.nsens(),
        exp.problem.forward.times(),
        exp.kernel.temporal.as_ref(),
        exp.criterion.correlation_mode,
        &result.binary_design,
    )?;
    let wm = WeightMatrix {
        theta: theta_bin,
        kernel: exp.kernel,
        design: Design::constant(exp.problem.forward.nsens(), 1.0),
    };
    let weights = weighted_precision(&exp.problem.noise, &wm)?;
    let map = map_estimate(&exp.problem, &weights, &exp.observations)?;
    let prediction = exp.problem.goal.apply(&map);
    let metrics = error_metrics(&prediction, &exp.goal_true)?;

    println!(
        "OED deployment of {} sensors: goal RMSE {:.4e}",
        exp.budget, metrics.rmse
    );
    let rae: Vec<f64> = metrics.rae.iter().flatten().copied().collect();
    println!(
        "relative absolute error over {} prediction points: median {:.3e}, worst {:.3e}",
        rae.len(),
        quantile(&rae, 0.5),
        rae.iter().cloned().fold(0.0, f64::max),
    );

    // Context: the same inversion under 50 random deployments.
    let mut rng = oedkit::rng::seeded(17);
    let samples = random_baseline(
        &exp.problem,
        &exp.criterion,
        &exp.kernel,
        exp.budget,
        50,
        &exp.observations,
        &exp.goal_true,
        &mut rng,
    )?;
    let rmses: Vec<f64> = samples.iter().map(|s| s.rmse).collect();
    println!(
        "random deployments: q25 {:.4e}, median {:.4e}, q75 {:.4e}",
        quantile(&rmses, 0.25),
        quantile(&rmses, 0.5),
        quantile(&rmses, 0.75)
    );
    Ok(())
}
