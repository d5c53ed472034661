//! Configuration-driven front end behind the `oedkit` binary.
//!
//! Subcommands: `solve`, `invert`, `check`, `enumerate`, `baseline`, and
//! `sweep`, each taking `--config PATH` plus optional `--seed N` and
//! `--out DIR` overrides. Every output file embeds the fully resolved
//! configuration and the seed, so a result can always be reproduced from the
//! file alone. Exit codes: 0 success, 1 configuration or validation error,
//! 2 optimizer hit its iteration cap, 3 enumeration cap exceeded.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bayes::{lowrank_hessian_inverse, map_estimate, InverseProblemSpec};
use crate::config::{
    CorrelationModeSection, CriterionKindSection, DesignChoice, EvaluationSection,
    ExperimentConfig, HessianSection, SigmaSpec,
};
use crate::criteria::{
    criterion_of_binary, gradient_check, CorrelationMode, CriterionKind, CriterionSpec, Evaluation,
};
use crate::error::{OedError, Result};
use crate::kernels::{
    build_theta, kronecker_spacetime, weighted_precision, CovarianceData, Design,
    TemporalDecorrelation, WeightKernelSpec,
};
use crate::linalg::SymMatrix;
use crate::optimize::{
    brute_force_enumerate, quantile, random_baseline, solve_oed, threshold_to_budget,
    OptimizerConfig,
};
use crate::testbed::{
    build_gc_covariance, error_metrics, relative_noise_sigma, synth_data, uniform_sensor_locations,
    Rect, SensorGrid, Testbed,
};

#[derive(Parser)]
#[command(name = "oedkit", version, about = "Goal-oriented optimal sensor placement with correlated observation errors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the relaxed OED problem and threshold to the sensor budget.
    Solve(CommonArgs),
    /// Solve the Bayesian inversion with a stored design and report errors.
    Invert {
        #[command(flatten)]
        common: CommonArgs,
        /// Design file written by `solve` (or a minimal `{"binary": [...]}`).
        #[arg(long)]
        design: PathBuf,
    },
    /// Compare analytic gradients against finite differences.
    Check(CommonArgs),
    /// Enumerate every budget-subset by brute force.
    Enumerate(CommonArgs),
    /// Evaluate random sensor subsets as a baseline.
    Baseline(CommonArgs),
    /// Criterion of thresholded designs for every budget up to a cap.
    Sweep(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Clap handles --help/--version with its own success exit.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Solve(c) => with_config(c, cmd_solve),
        Command::Invert { common, design } => {
            with_config(common, |cfg, out| cmd_invert(cfg, design, out))
        }
        Command::Check(c) => with_config(c, cmd_check),
        Command::Enumerate(c) => with_config(c, cmd_enumerate),
        Command::Baseline(c) => with_config(c, cmd_baseline),
        Command::Sweep(c) => with_config(c, cmd_sweep),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                OedError::EnumerationCapExceeded { .. } => 3,
                _ => 1,
            }
        }
    }
}

fn with_config<F>(common: &CommonArgs, f: F) -> Result<i32>
where
    F: FnOnce(ExperimentConfig, &Path) -> Result<i32>,
{
    let mut config = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output.dir = out.to_string_lossy().into_owned();
    }
    let out_dir = PathBuf::from(&config.output.dir);
    std::fs::create_dir_all(&out_dir)?;
    f(config, &out_dir)
}

/// Everything the subcommands need, assembled once from the configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: InverseProblemSpec,
    pub sensors: SensorGrid,
    pub prediction_points: Vec<(f64, f64)>,
    pub theta_true: DVector<f64>,
    pub goal_true: DVector<f64>,
    pub observations: DVector<f64>,
    pub sigma_obs: f64,
    pub kernel: WeightKernelSpec,
    pub criterion: CriterionSpec,
    pub optimizer: OptimizerConfig,
    pub budget: usize,
}

/// Assemble the testbed, problem, synthetic data, and solver settings.
pub fn assemble(config: ExperimentConfig) -> Result<Experiment> {
    let testbed = Testbed::new(config.model_config())?;
    let locations = match &config.sensors.coordinates {
        Some(coords) => coords.iter().map(|c| (c[0], c[1])).collect(),
        None => uniform_sensor_locations(config.sensors.count),
    };
    let sensors = testbed.sensor_grid(locations)?;
    let forward = testbed.forward_model(&sensors)?;
    let n_t = forward.n_t();

    let blobs: Vec<_> = config.truth.blobs.iter().map(|&b| b.into()).collect();
    let theta_true = testbed.initial_condition(&blobs);
    let sigma_obs = match config.sensors.sigma {
        SigmaSpec::Relative { relative } => relative_noise_sigma(&forward, &theta_true, relative)?,
        SigmaSpec::Absolute { absolute } => absolute,
    };

    let spatial = build_gc_covariance(&sensors, config.sensors.length_scale, sigma_obs, n_t)?;
    let noise = if config.sensors.time_length_scale > 0.0 {
        // Dense space-time covariance: Gaspari-Cohn in time ⊗ spatial block.
        let times = forward.times();
        let tcorr = SymMatrix::from_matrix(nalgebra::DMatrix::from_fn(n_t, n_t, |a, b| {
            crate::kernels::gaspari_cohn(
                (times[a] - times[b]).abs() / config.sensors.time_length_scale,
            )
        }))?;
        let spatial_block = match spatial.data() {
            CovarianceData::SpaceBlocks(b) => b.block(0).clone(),
            CovarianceData::Diagonal(d) => {
                SymMatrix::from_diagonal(&d.rows(0, sensors.nsens()).into_owned())
            }
            CovarianceData::Dense(_) => unreachable!("spatial covariance is structured"),
        };
        kronecker_spacetime(&tcorr, &spatial_block)?
    } else {
        spatial
    };

    let prior = testbed.prior(config.prior.delta, config.prior.variance, config.prior.mean)?;
    let region = Rect {
        x0: config.prediction.region[0],
        y0: config.prediction.region[1],
        x1: config.prediction.region[2],
        y1: config.prediction.region[3],
    };
    let prediction_points =
        testbed.prediction_points(region, config.prediction.grid[0], config.prediction.grid[1]);
    let goal = testbed.goal_operator(&prediction_points)?;
    let goal_true = goal.apply(&theta_true);

    let problem = InverseProblemSpec::new(forward, prior, goal, noise)?;
    let mut rng = crate::rng::seeded(crate::rng::child_seed(config.seed, 1));
    let observations = synth_data(&problem.forward, &problem.noise, &theta_true, false, &mut rng)?;

    let temporal = config
        .kernel
        .temporal
        .map(|t| TemporalDecorrelation::new(t.kind, t.length_scale))
        .transpose()?;
    let kernel = WeightKernelSpec::new(config.kernel.kind, config.kernel.a, temporal)?;

    let mode = match config.criterion.correlation_mode {
        CorrelationModeSection::Space => CorrelationMode::Space,
        CorrelationModeSection::Spacetime => CorrelationMode::SpaceTime,
    };
    let evaluation = match config.criterion.evaluation {
        EvaluationSection::Exact => Evaluation::Exact,
        EvaluationSection::Randomized => Evaluation::Randomized {
            n_r: config.criterion.n_r,
            seed: crate::rng::child_seed(config.seed, 2),
        },
    };
    let kind = match config.criterion.kind {
        CriterionKindSection::A => CriterionKind::A,
        CriterionKindSection::D => CriterionKind::D,
    };
    let criterion = CriterionSpec::new(kind, evaluation, mode, config.criterion.alpha)?;

    let optimizer = OptimizerConfig {
        pgtol: config.optimizer.pgtol,
        max_iters: config.optimizer.max_iters,
        memory: config.optimizer.memory,
        initial_design: config.optimizer.initial.clone(),
        seed: config.seed,
    };
    let budget = config.criterion.budget;

    Ok(Experiment {
        config,
        problem,
        sensors,
        prediction_points,
        theta_true,
        goal_true,
        observations,
        sigma_obs,
        kernel,
        criterion,
        optimizer,
        budget,
    })
}

fn config_line(config: &ExperimentConfig) -> String {
    serde_json::to_string(config).expect("config serializes")
}

fn write_csv(path: &Path, schema: &str, config: &ExperimentConfig, header: &str, rows: &[String]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# schema: {schema}")?;
    writeln!(f, "# seed: {}", config.seed)?;
    writeln!(f, "# config: {}", config_line(config))?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    writeln!(f, "{text}")?;
    Ok(())
}

fn sensors_label(active: &[bool]) -> String {
    active
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a)
        .map(|(i, _)| i.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Design file written by `solve` and read back by `invert`.
#[derive(Debug, Serialize, Deserialize)]
pub struct DesignFile {
    pub schema: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub budget: usize,
    pub relaxed: Vec<f64>,
    pub weights: Vec<f64>,
    pub binary: Vec<bool>,
    pub criteria: CriterionTriple,
    pub iterations: usize,
    pub converged: bool,
    pub sensor_locations: Vec<[f64; 2]>,
    pub prediction_points: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lowrank_diagnostics: Option<LowRankDiagnostics>,
}

/// The three criterion columns: relaxed, thresholded relaxed, thresholded
/// binary.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CriterionTriple {
    pub relaxed: f64,
    pub thresholded_relaxed: f64,
    pub thresholded_binary: f64,
}

/// Comparison of the low-rank posterior trace against the dense value at the
/// relaxed design (opt-in via `criterion.hessian = "lowrank"`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LowRankDiagnostics {
    pub rank: usize,
    pub trace_lowrank: f64,
    pub trace_dense: f64,
}

/// A minimal design file: any of the full fields, or just `binary`/`relaxed`.
#[derive(Debug, Deserialize)]
struct DesignFileLoose {
    #[serde(default)]
    relaxed: Option<Vec<f64>>,
    #[serde(default)]
    binary: Option<Vec<bool>>,
}

fn cmd_solve(config: ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let exp = assemble(config)?;
    let result = solve_oed(&exp.problem, &exp.criterion, &exp.kernel, &exp.optimizer, exp.budget)?;

    let lowrank_diagnostics = match exp.config.criterion.hessian {
        HessianSection::Dense => None,
        HessianSection::Lowrank => {
            let design = Design::from_slice(&result.relaxed_design);
            let theta = build_theta(
                &exp.kernel,
                &design,
                exp.problem.forward.times(),
                exp.criterion.correlation_mode,
            )?;
            let weights = weighted_precision(&exp.problem.noise, &theta)?;
            let rank = exp.config.criterion.lowrank_rank.min(exp.problem.nparam());
            let mut rng = crate::rng::seeded(crate::rng::child_seed(exp.config.seed, 3));
            let lr = lowrank_hessian_inverse(&exp.problem, &weights, rank, &mut rng)?;
            let dense = crate::bayes::goal_posterior_cov(&exp.problem, &weights)?.trace();
            Some(LowRankDiagnostics {
                rank,
                trace_lowrank: lr.goal_trace(&exp.problem.goal),
                trace_dense: dense,
            })
        }
    };

    let design_file = DesignFile {
        schema: "oedkit-design-v1".into(),
        seed: exp.config.seed,
        config: exp.config.clone(),
        budget: result.budget,
        relaxed: result.relaxed_design.clone(),
        weights: result.weights.clone(),
        binary: result.binary_design.clone(),
        criteria: CriterionTriple {
            relaxed: result.criterion_relaxed,
            thresholded_relaxed: result.criterion_thresholded_relaxed,
            thresholded_binary: result.criterion_thresholded_binary,
        },
        iterations: result.iterations,
        converged: result.converged,
        sensor_locations: exp.sensors.locations.iter().map(|&(x, y)| [x, y]).collect(),
        prediction_points: exp.prediction_points.iter().map(|&(x, y)| [x, y]).collect(),
        lowrank_diagnostics,
    };
    write_json(&out_dir.join("design.json"), &design_file)?;

    let rows: Vec<String> = result
        .objective_history
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{i},{v}"))
        .collect();
    write_csv(
        &out_dir.join("history.csv"),
        "oedkit-history-v1",
        &exp.config,
        "iteration,objective",
        &rows,
    )?;

    println!(
        "solve: criterion relaxed {:.6e}, thresholded relaxed {:.6e}, thresholded binary {:.6e} ({} iterations, converged: {})",
        result.criterion_relaxed,
        result.criterion_thresholded_relaxed,
        result.criterion_thresholded_binary,
        result.iterations,
        result.converged
    );
    Ok(if result.converged { 0 } else { 2 })
}

/// Metrics file written by `invert`.
#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub design_kind: String,
    pub rmse: f64,
    pub rae: Vec<Option<f64>>,
    pub rae_masked_indices: Vec<usize>,
    pub prediction: Vec<f64>,
    pub prediction_true: Vec<f64>,
}

fn cmd_invert(config: ExperimentConfig, design_path: &Path, out_dir: &Path) -> Result<i32> {
    let exp = assemble(config)?;
    let text = std::fs::read_to_string(design_path)?;
    let loose: DesignFileLoose = serde_json::from_str(&text)
        .map_err(|e| OedError::InvalidConfig(format!("design file: {e}")))?;

    let nsens = exp.problem.forward.nsens();
    let use_binary = match exp.config.invert.design {
        DesignChoice::Binary => true,
        DesignChoice::Relaxed => false,
        DesignChoice::Auto => loose.binary.is_some(),
    };
    let (weights, kind_label) = if use_binary {
        let binary = loose.binary.ok_or_else(|| {
            OedError::InvalidConfig("design file lacks a binary design".into())
        })?;
        if binary.len() != nsens {
            return Err(OedError::dims(
                nsens.to_string(),
                binary.len().to_string(),
                "binary design",
            ));
        }
        let theta = crate::kernels::build_theta_binary(
            nsens,
            exp.problem.forward.times(),
            exp.kernel.temporal.as_ref(),
            exp.criterion.correlation_mode,
            &binary,
        )?;
        let wm = crate::kernels::WeightMatrix {
            theta,
            kernel: exp.kernel,
            design: Design::constant(nsens, 1.0),
        };
        (weighted_precision(&exp.problem.noise, &wm)?, "binary")
    } else {
        let relaxed = loose.relaxed.ok_or_else(|| {
            OedError::InvalidConfig("design file lacks a relaxed design".into())
        })?;
        if relaxed.len() != nsens {
            return Err(OedError::dims(
                nsens.to_string(),
                relaxed.len().to_string(),
                "relaxed design",
            ));
        }
        let design = Design::from_slice(&relaxed);
        let theta = build_theta(
            &exp.kernel,
            &design,
            exp.problem.forward.times(),
            exp.criterion.correlation_mode,
        )?;
        (weighted_precision(&exp.problem.noise, &theta)?, "relaxed")
    };

    let map = map_estimate(&exp.problem, &weights, &exp.observations)?;
    let prediction = exp.problem.goal.apply(&map);
    let metrics = match error_metrics(&prediction, &exp.goal_true) {
        Ok(m) => m,
        Err(OedError::AllZeroTruth { rmse }) => crate::testbed::ErrorMetrics {
            rae: vec![None; prediction.len()],
            rmse,
        },
        Err(e) => return Err(e),
    };

    let metrics_file = MetricsFile {
        schema: "oedkit-metrics-v1".into(),
        seed: exp.config.seed,
        config: exp.config.clone(),
        design_kind: kind_label.into(),
        rmse: metrics.rmse,
        rae_masked_indices: metrics.masked_indices(),
        rae: metrics.rae.clone(),
        prediction: prediction.iter().copied().collect(),
        prediction_true: exp.goal_true.iter().copied().collect(),
    };
    write_json(&out_dir.join("metrics.json"), &metrics_file)?;

    let nx = exp.config.model.grid[0];
    let rows: Vec<String> = map
        .iter()
        .enumerate()
        .map(|(c, v)| {
            let x = ((c % nx) as f64 + 0.5) / nx as f64;
            let y = ((c / nx) as f64 + 0.5) / exp.config.model.grid[1] as f64;
            format!("{c},{x},{y},{v}")
        })
        .collect();
    write_csv(
        &out_dir.join("map.csv"),
        "oedkit-map-v1",
        &exp.config,
        "cell,x,y,theta_map",
        &rows,
    )?;

    println!("invert: {} design, goal RMSE {:.6e}", kind_label, metrics.rmse);
    Ok(0)
}

fn cmd_check(config: ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let exp = assemble(config)?;
    let initial = match &exp.optimizer.initial_design {
        Some(v) => Design::from_slice(v),
        None => Design::constant(
            exp.problem.forward.nsens(),
            exp.kernel.design_for_half_weight(),
        ),
    };
    let mut rows = Vec::new();
    let mut max_err: f64 = 0.0;
    for &step in &exp.config.check.steps {
        let report = gradient_check(&exp.problem, &exp.criterion, &exp.kernel, &initial, step)?;
        max_err = max_err.max(report.max_relative_error);
        rows.push(format!(
            "{step},{},{}",
            report.max_relative_error, report.worst_index
        ));
    }
    write_csv(
        &out_dir.join("check.csv"),
        "oedkit-check-v1",
        &exp.config,
        "step,max_rel_err,worst_index",
        &rows,
    )?;
    println!("check: max relative error {max_err:.3e} across {} steps", rows.len());
    Ok(0)
}

fn cmd_enumerate(config: ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let exp = assemble(config)?;
    let entries = brute_force_enumerate(
        &exp.problem,
        &exp.criterion,
        &exp.kernel,
        exp.config.enumerate.k,
        exp.config.enumerate.cap as u128,
    )?;
    let rows: Vec<String> = entries
        .iter()
        .enumerate()
        .map(|(rank, (active, value))| format!("{rank},{},{value}", sensors_label(active)))
        .collect();
    write_csv(
        &out_dir.join("enumerate.csv"),
        "oedkit-enumerate-v1",
        &exp.config,
        "rank,sensors,criterion",
        &rows,
    )?;
    println!(
        "enumerate: {} subsets of size {}, best criterion {:.6e}",
        entries.len(),
        exp.config.enumerate.k,
        entries[0].1
    );
    Ok(0)
}

fn cmd_baseline(config: ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let exp = assemble(config)?;
    let mut rng = crate::rng::seeded(crate::rng::child_seed(exp.config.seed, 4));
    let samples = random_baseline(
        &exp.problem,
        &exp.criterion,
        &exp.kernel,
        exp.budget,
        exp.config.baseline.samples,
        &exp.observations,
        &exp.goal_true,
        &mut rng,
    )?;
    let mut rows: Vec<String> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{i},{},{},{}", sensors_label(&s.active), s.criterion, s.rmse))
        .collect();
    let criteria: Vec<f64> = samples.iter().map(|s| s.criterion).collect();
    let rmses: Vec<f64> = samples.iter().map(|s| s.rmse).collect();
    for (label, q) in [("q25", 0.25), ("median", 0.5), ("q75", 0.75)] {
        rows.push(format!(
            "{label},,{},{}",
            quantile(&criteria, q),
            quantile(&rmses, q)
        ));
    }
    write_csv(
        &out_dir.join("baseline.csv"),
        "oedkit-baseline-v1",
        &exp.config,
        "sample,sensors,criterion,rmse",
        &rows,
    )?;
    println!(
        "baseline: {} samples, median criterion {:.6e}, median RMSE {:.6e}",
        samples.len(),
        quantile(&criteria, 0.5),
        quantile(&rmses, 0.5)
    );
    Ok(0)
}

fn cmd_sweep(config: ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let exp = assemble(config)?;
    let result = solve_oed(&exp.problem, &exp.criterion, &exp.kernel, &exp.optimizer, exp.budget)?;
    let weights = DVector::from_row_slice(&result.weights);
    let max_k = exp.config.sweep.max_k.min(exp.problem.forward.nsens());
    let pure = CriterionSpec {
        penalty_alpha: 0.0,
        ..exp.criterion
    };
    let mut rows = Vec::new();
    for k in 1..=max_k {
        let active = threshold_to_budget(&weights, k)?;
        let value = criterion_of_binary(&exp.problem, &pure, &exp.kernel, &active)?;
        rows.push(format!("thresholded,{k},{},{value}", sensors_label(&active)));
    }
    // Brute-force optimum for a single active sensor, as a reference marker.
    let singles = brute_force_enumerate(&exp.problem, &pure, &exp.kernel, 1, exp.config.enumerate.cap as u128)?;
    let (best_active, best_value) = &singles[0];
    rows.push(format!(
        "brute_force_k1,1,{},{best_value}",
        sensors_label(best_active)
    ));
    write_csv(
        &out_dir.join("sweep.csv"),
        "oedkit-sweep-v1",
        &exp.config,
        "kind,k,sensors,criterion",
        &rows,
    )?;
    println!(
        "sweep: thresholded criteria for k = 1..{max_k}; brute-force single-sensor optimum {:.6e}",
        best_value
    );
    Ok(0)
}
