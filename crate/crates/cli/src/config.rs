//! Experiment configuration. Every section except `model`, `sensors` and
//! `task` has defaults; unknown keys are rejected everywhere.

use pbdw::boxqp::BoxLsqConfig;
use pbdw::minimax::MinimaxConfig;
use pbdw::piecewise::PiecewiseConfig;
use pbdw::sensing::{default_layout, NoiseSpec, SensorSpec};
use pbdw::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Task {
    GreedyDecay,
    FitAffine,
    BuildPw,
    EstimateState,
    EstimateParam,
    BenchOracle,
    CompareAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SensorsConfig {
    /// Equispaced local averages.
    Layout { m: usize, width: f64 },
    Specs(Vec<SensorSpec>),
}

impl SensorsConfig {
    pub fn specs(&self, dx: usize) -> Vec<SensorSpec> {
        match self {
            SensorsConfig::Layout { m, width } => default_layout(dx, *m, *width),
            SensorsConfig::Specs(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizedSettings {
    pub eps: f64,
    pub eta: f64,
    pub c_n: f64,
}

impl Default for RandomizedSettings {
    fn default() -> Self {
        Self { eps: 1e-2, eta: 1e-2, c_n: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedySettings {
    /// Tensor training grid resolution.
    pub training_per_dim: usize,
    pub n_max: usize,
    pub tol: Option<f64>,
    /// Fresh random training sets per step instead of the tensor grid.
    pub randomized: Option<RandomizedSettings>,
}

impl Default for GreedySettings {
    fn default() -> Self {
        Self { training_per_dim: 5, n_max: 12, tol: None, randomized: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineSettings {
    /// Dimension of the greedy space `U_L`.
    pub n_l: usize,
    pub minimax: MinimaxConfig,
    /// Random states used to measure the net fineness.
    pub held_out: usize,
}

impl Default for AffineSettings {
    fn default() -> Self {
        Self { n_l: 7, minimax: MinimaxConfig::default(), held_out: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub net_per_dim: usize,
    pub eps: Vec<f64>,
    pub n_slices: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { net_per_dim: 11, eps: vec![0.0, 1e-3, 1e-2], n_slices: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSettings {
    /// Synthetic observations drawn when no observation file is given.
    pub count: usize,
    pub noise: NoiseSpec,
    /// Use the piecewise estimator instead of the one-space map.
    pub piecewise: bool,
    pub projection: BoxLsqConfig,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self { count: 10, noise: NoiseSpec::None, piecewise: false, projection: BoxLsqConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub sensors: SensorsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub greedy: GreedySettings,
    #[serde(default)]
    pub affine: AffineSettings,
    #[serde(default)]
    pub piecewise: PiecewiseConfig,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub estimate: EstimateSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// A schema violation with the path of the offending key.
#[derive(Debug)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        SchemaError { path, message: e.into_inner().to_string() }
    })
}
