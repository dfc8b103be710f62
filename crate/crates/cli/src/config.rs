//! Run configuration: one JSON file, every section optional, unknown keys
//! rejected. Command-line flags override fields after loading.

use std::path::Path;

use serde::{Deserialize, Serialize};
use subspacenet::geometry::{SceneSpec, StructureKind};
use subspacenet::inference::{SelectMethod, DEFAULT_K_MAX, DEFAULT_RESTARTS};
use subspacenet::losses::LossKind;
use subspacenet::network::{Activation, NetworkConfig};
use subspacenet::training::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Taken from the data when absent.
    #[serde(default)]
    pub input_dim: Option<usize>,
    #[serde(default = "d_width")]
    pub hidden_width: usize,
    #[serde(default = "d_blocks")]
    pub num_blocks: usize,
    #[serde(default = "d_embed")]
    pub output_dim: usize,
    #[serde(default = "d_true")]
    pub use_l2norm_output: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

fn d_width() -> usize {
    128
}
fn d_blocks() -> usize {
    50
}
fn d_embed() -> usize {
    5
}
fn d_true() -> bool {
    true
}

impl Default for NetworkSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl NetworkSection {
    pub fn resolve(&self, data_dim: usize) -> Result<NetworkConfig, CliError> {
        if let Some(d) = self.input_dim {
            if d != data_dim {
                return Err(CliError::Validation(format!(
                    "network.input_dim is {d} but the data has dimension {data_dim}"
                )));
            }
        }
        let c = NetworkConfig {
            input_dim: data_dim,
            hidden_width: self.hidden_width,
            num_blocks: self.num_blocks,
            output_dim: self.output_dim,
            use_l2norm_output: self.use_l2norm_output,
            activation: self.activation,
            seed: self.seed,
        };
        c.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    /// Fixed K; None selects K automatically.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "d_method")]
    pub method: SelectMethod,
    #[serde(default = "d_kmax")]
    pub k_max: usize,
    #[serde(default = "d_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_method() -> SelectMethod {
    SelectMethod::Sod
}
fn d_kmax() -> usize {
    DEFAULT_K_MAX
}
fn d_restarts() -> usize {
    DEFAULT_RESTARTS
}

impl Default for InferenceSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    #[serde(default = "d_train")]
    pub train: usize,
    #[serde(default)]
    pub val: usize,
    #[serde(default)]
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_train() -> usize {
    100
}

impl Default for GenSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub kind: StructureKind,
    #[serde(default = "d_one")]
    pub count: usize,
}

fn d_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    /// Model types to fit, in order; empty means "infer from the instance
    /// metadata" when it names its structures.
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default = "d_iters")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_threshold() -> f64 {
    0.125
}
fn d_iters() -> usize {
    1000
}

impl Default for BaselineSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn default_train() -> TrainConfig {
    TrainConfig::new(LossKind::Mimi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub scene: Option<SceneSpec>,
    #[serde(default)]
    pub gen: GenSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub baseline: BaselineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(RunConfig::default()), Self::load)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses `line:1,circle:1,ellipse:2` (count defaults to 1).
pub fn parse_schedule(text: &str) -> Result<Vec<ScheduleEntry>, CliError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (kind, count) = match item.split_once(':') {
                Some((k, c)) => (k, c.trim().parse().map_err(|_| CliError::Validation(format!("bad count in {item:?}")))?),
                None => (item, 1),
            };
            let kind = kind.trim().parse().map_err(|e| CliError::Validation(format!("{e}")))?;
            Ok(ScheduleEntry { kind, count })
        })
        .collect()
}
