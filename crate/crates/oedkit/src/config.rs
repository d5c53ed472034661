//! JSON experiment configuration.
//!
//! A single structured file drives every subcommand. The standard
//! constants are defaults (`pgtol = 1e-5`, `a = 1`, `n_r = 5`, budget 8,
//! sigmoid kernel, 43 candidate sensors on a 24x24 grid); unknown keys are
//! rejected so typos fail loudly.

use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::kernels::{KernelKind, TemporalKind};
use crate::testbed::{Blob, ModelConfig, Rect};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub sensors: SensorSection,
    pub prior: PriorSection,
    pub truth: TruthSection,
    pub prediction: PredictionSection,
    pub kernel: KernelSection,
    pub criterion: CriterionSection,
    pub optimizer: OptimizerSection,
    pub output: OutputSection,
    pub enumerate: EnumerateSection,
    pub baseline: BaselineSection,
    pub sweep: SweepSection,
    pub check: CheckSection,
    pub invert: InvertSection,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSection::default(),
            sensors: SensorSection::default(),
            prior: PriorSection::default(),
            truth: TruthSection::default(),
            prediction: PredictionSection::default(),
            kernel: KernelSection::default(),
            criterion: CriterionSection::default(),
            optimizer: OptimizerSection::default(),
            output: OutputSection::default(),
            enumerate: EnumerateSection::default(),
            baseline: BaselineSection::default(),
            sweep: SweepSection::default(),
            check: CheckSection::default(),
            invert: InvertSection::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub grid: [usize; 2],
    pub kappa: f64,
    pub dt: f64,
    pub obs_times: ObsTimes,
    pub prediction_time: f64,
    pub max_speed: f64,
    /// Obstacle rectangles as `[x0, y0, x1, y1]`.
    pub obstacles: Vec<[f64; 4]>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            grid: [24, 24],
            kappa: 0.01,
            dt: 0.2,
            obs_times: ObsTimes::default(),
            prediction_time: 2.2,
            max_speed: 1.0,
            obstacles: Vec::new(),
        }
    }
}

/// Observation times as an explicit list or a uniform ramp.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObsTimes {
    List(Vec<f64>),
    Ramp { first: f64, step: f64, count: usize },
}

impl Default for ObsTimes {
    fn default() -> Self {
        ObsTimes::Ramp {
            first: 1.0,
            step: 0.2,
            count: 6,
        }
    }
}

impl ObsTimes {
    pub fn expand(&self) -> Vec<f64> {
        match self {
            ObsTimes::List(v) => v.clone(),
            ObsTimes::Ramp { first, step, count } => {
                (0..*count).map(|s| first + step * s as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    /// Number of quasi-uniform candidate locations (ignored when explicit
    /// coordinates are given).
    pub count: usize,
    pub coordinates: Option<Vec<[f64; 2]>>,
    /// Gaspari-Cohn spatial correlation length scale; zero for uncorrelated
    /// observation errors.
    pub length_scale: f64,
    /// Temporal correlation length scale of the observation errors; zero
    /// keeps the covariance block diagonal over time.
    pub time_length_scale: f64,
    pub sigma: SigmaSpec,
}

impl Default for SensorSection {
    fn default() -> Self {
        SensorSection {
            count: 43,
            coordinates: None,
            length_scale: 0.0,
            time_length_scale: 0.0,
            sigma: SigmaSpec::default(),
        }
    }
}

/// Observation noise level, either relative to the largest noiseless
/// observation or absolute.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Relative { relative: f64 },
    Absolute { absolute: f64 },
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::Relative { relative: 0.005 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub delta: f64,
    pub variance: f64,
    pub mean: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            delta: 50.0,
            variance: 1.0,
            mean: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthSection {
    pub blobs: Vec<BlobSection>,
}

impl Default for TruthSection {
    fn default() -> Self {
        TruthSection {
            blobs: vec![BlobSection {
                center: [0.35, 0.7],
                width: 0.12,
                amplitude: 1.0,
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSection {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: f64,
}

impl From<BlobSection> for Blob {
    fn from(b: BlobSection) -> Blob {
        Blob {
            center: (b.center[0], b.center[1]),
            width: b.width,
            amplitude: b.amplitude,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionSection {
    /// Rectangle `[x0, y0, x1, y1]` holding the prediction points.
    pub region: [f64; 4],
    /// Point grid within the region.
    pub grid: [usize; 2],
}

impl Default for PredictionSection {
    fn default() -> Self {
        PredictionSection {
            region: [0.55, 0.15, 0.85, 0.45],
            grid: [4, 4],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub kind: KernelKind,
    pub a: f64,
    pub temporal: Option<TemporalSection>,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            kind: KernelKind::Sigmoid,
            a: 1.0,
            temporal: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalSection {
    pub kind: TemporalKind,
    pub length_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriterionSection {
    pub kind: CriterionKindSection,
    pub evaluation: EvaluationSection,
    /// Hutchinson sample size for randomized evaluation.
    pub n_r: usize,
    pub correlation_mode: CorrelationModeSection,
    pub alpha: f64,
    pub budget: usize,
    pub hessian: HessianSection,
    /// Retained rank when `hessian = "lowrank"`.
    pub lowrank_rank: usize,
}

impl Default for CriterionSection {
    fn default() -> Self {
        CriterionSection {
            kind: CriterionKindSection::A,
            evaluation: EvaluationSection::Exact,
            n_r: 5,
            correlation_mode: CorrelationModeSection::Space,
            alpha: 0.0,
            budget: 8,
            hessian: HessianSection::Dense,
            lowrank_rank: 80,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriterionKindSection {
    A,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationSection {
    Exact,
    Randomized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationModeSection {
    Space,
    Spacetime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianSection {
    Dense,
    Lowrank,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub pgtol: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub initial: Option<Vec<f64>>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            pgtol: 1e-5,
            max_iters: 200,
            memory: 10,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            formats: vec!["json".into(), "csv".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnumerateSection {
    pub k: usize,
    pub cap: u64,
}

impl Default for EnumerateSection {
    fn default() -> Self {
        EnumerateSection { k: 1, cap: 1_000_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub samples: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { samples: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub max_k: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { max_k: 12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub steps: Vec<f64>,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            steps: vec![1e-3, 1e-5, 1e-7],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvertSection {
    /// Which design to invert with when the design file carries both:
    /// `auto` prefers the binary design.
    pub design: DesignChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DesignChoice {
    #[default]
    Auto,
    Binary,
    Relaxed,
}

impl Default for InvertSection {
    fn default() -> Self {
        InvertSection {
            design: DesignChoice::Auto,
        }
    }
}

impl ExperimentConfig {
    /// Parse from a JSON string. Errors name the line, column, and byte
    /// offset of the first problem.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            let offset = byte_offset(text, e.line(), e.column());
            OedError::InvalidConfig(format!(
                "{e} (line {}, column {}, byte offset {offset})",
                e.line(),
                e.column()
            ))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.sensors.count == 0 && self.sensors.coordinates.is_none() {
            return Err(OedError::InvalidConfig(
                "sensors.count must be positive or coordinates given".into(),
            ));
        }
        let nsens = self
            .sensors
            .coordinates
            .as_ref()
            .map(|c| c.len())
            .unwrap_or(self.sensors.count);
        if self.criterion.budget == 0 || self.criterion.budget > nsens {
            return Err(OedError::InvalidConfig(format!(
                "budget {} outside 1..={nsens}",
                self.criterion.budget
            )));
        }
        if matches!(self.criterion.kind, CriterionKindSection::D)
            && matches!(self.criterion.evaluation, EvaluationSection::Randomized)
        {
            return Err(OedError::RandomizedDCriterion);
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                return Err(OedError::InvalidConfig(format!("unknown output format {f}")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            nx: self.model.grid[0],
            ny: self.model.grid[1],
            dt: self.model.dt,
            kappa: self.model.kappa,
            max_speed: self.model.max_speed,
            obs_times: self.model.obs_times.expand(),
            prediction_time: self.model.prediction_time,
            obstacles: self
                .model
                .obstacles
                .iter()
                .map(|r| Rect {
                    x0: r[0],
                    y0: r[1],
                    x1: r[2],
                    y1: r[3],
                })
                .collect(),
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}
