//! Verify the analytic criterion gradients against central finite
//! differences, including the classic V-shaped error curve over the step
//! size.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use oedkit::config::{ExperimentConfig, SigmaSpec};
use oedkit::criteria::{gradient_check, CriterionKind, CriterionSpec, Evaluation};
use oedkit::driver::assemble;
use oedkit::kernels::{CorrelationMode, Design, KernelKind, WeightKernelSpec};

fn main() -> oedkit::Result<()> {
    let mut config = ExperimentConfig::default();
    config.model.grid = [10, 10];
    config.sensors.count = 8;
    config.sensors.length_scale = 0.3;
    config.sensors.sigma = SigmaSpec::Relative { relative: 0.05 };
    // Spread prediction points keep the goal covariance well conditioned,
    // which matters for the log-determinant criterion.
    config.prediction.region = [0.1, 0.1, 0.9, 0.9];
    config.prediction.grid = [3, 3];
    config.criterion.budget = 3;
    let exp = assemble(config)?;

    for kind in [CriterionKind::A, CriterionKind::D] {
        for kernel_kind in [KernelKind::Sqrt, KernelKind::Exp, KernelKind::Sigmoid] {
            let kernel = WeightKernelSpec::new(kernel_kind, 1.0, None)?;
            let design = match kernel_kind {
                KernelKind::Sqrt => Design::constant(8, 0.5),
                _ => Design::constant(8, kernel.design_for_half_weight()),
            };
            let spec = CriterionSpec::new(
                kind,
                Evaluation::Exact,
                CorrelationMode::Space,
                1e-3,
            )?;
            let report = gradient_check(&exp.problem, &spec, &kernel, &design, 1e-5)?;
            println!(
                "{kind:?} criterion, {kernel_kind:?} kernel: max relative error {:.3e} (worst index {})",
                report.max_relative_error, report.worst_index
            );
        }
    }

    // Step sweep: truncation error dominates large steps, roundoff the
    // small ones.
    println!("\nstep sweep for the A-criterion with the sigmoid kernel:");
    let spec = CriterionSpec::exact_a(CorrelationMode::Space, 0.0);
    let kernel = WeightKernelSpec::sigmoid(1.0);
    let design = Design::constant(8, 0.0);
    for step in [1e-3, 1e-5, 1e-7] {
        let report = gradient_check(&exp.problem, &spec, &kernel, &design, step)?;
        println!("  step {step:>7.0e}: max relative error {:.3e}", report.max_relative_error);
    }
    Ok(())
}
