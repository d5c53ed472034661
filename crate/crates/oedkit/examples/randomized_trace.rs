//! Hutchinson trace estimation of the goal posterior covariance: spread of
//! the randomized A-criterion against the exact trace as the sample size
//! grows.
//!
//! ```bash
//! cargo run --example randomized_trace
//! ```

use oedkit::config::{ExperimentConfig, SigmaSpec};
use oedkit::criteria::{a_criterion, CorrelationMode, CriterionKind, CriterionSpec, Evaluation};
use oedkit::driver::assemble;
use oedkit::kernels::Design;
use oedkit::optimize::quantile;

fn main() -> oedkit::Result<()> {
    let mut config = ExperimentConfig::default();
    config.prediction.region = [0.1, 0.1, 0.9, 0.9];
    config.sensors.length_scale = 0.5;
    config.sensors.sigma = SigmaSpec::Relative { relative: 0.01 };
    let exp = assemble(config)?;
    let design = Design::constant(
        exp.problem.forward.nsens(),
        exp.kernel.design_for_half_weight(),
    );

    let exact_spec = CriterionSpec::exact_a(CorrelationMode::Space, 0.0);
    let exact = a_criterion(&exp.problem, &exact_spec, &exp.kernel, &design)?;
    println!("exact posterior trace: {exact:.6e}\n");
    println!(
        "{:>5} {:>12} {:>12} {:>12} {:>10}",
        "n_r", "q25", "median", "q75", "rel err"
    );

    for n_r in [1usize, 5, 30] {
        let estimates: Vec<f64> = (0..100u64)
            .map(|rep| {
                let spec = CriterionSpec::new(
                    CriterionKind::A,
                    Evaluation::Randomized { n_r, seed: 1000 + rep },
                    CorrelationMode::Space,
                    0.0,
                )
                .unwrap();
                a_criterion(&exp.problem, &spec, &exp.kernel, &design).unwrap()
            })
            .collect();
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        println!(
            "{n_r:>5} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.4}",
            quantile(&estimates, 0.25),
            quantile(&estimates, 0.5),
            quantile(&estimates, 0.75),
            (mean - exact).abs() / exact
        );
    }
    println!("\n(each row summarizes 100 repetitions with fresh Rademacher probes)");
    Ok(())
}
