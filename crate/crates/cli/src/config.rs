//! Run configurations read from TOML. Every table rejects unknown keys; all
//! fields have defaults, so an empty file (or no file) is a valid config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use drapenet::model::{ModelConfig, Variant};
use drapenet::pipeline::{BenchConfig, GenConfig, Split, TrainConfig};
use drapenet::sim::{BodyPose, BodyShape, GarmentSpec, Tessellation};

/// Name of the effective config written into every output directory.
pub const ECHO_FILE: &str = "config.toml";

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
}

pub fn echo<T: Serialize>(cfg: &T, dir: &Path) -> Result<()> {
    let text = toml::to_string(cfg).context("cannot serialize the effective config")?;
    let path = dir.join(ECHO_FILE);
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Model widths: `preset` picks a base (`full`, `desk` or `tiny`) and any other
/// key overrides one field of it.
pub fn resolve_model(table: &toml::Table, variant: Option<Variant>) -> Result<ModelConfig> {
    let mut table = table.clone();
    let preset = match table.remove("preset") {
        None => "full".to_string(),
        Some(toml::Value::String(s)) => s,
        Some(v) => bail!("model.preset must be a string, got {v}"),
    };
    let base = match preset.as_str() {
        "full" => ModelConfig::default(),
        "desk" => ModelConfig::desk(Variant::Local),
        "tiny" => ModelConfig::tiny(Variant::Local),
        other => bail!("unknown model.preset `{other}` (expected full, desk or tiny)"),
    };
    let mut merged = toml::Table::try_from(&base)?;
    merged.extend(table);
    let mut cfg: ModelConfig = merged.try_into().context("invalid [model] table")?;
    if let Some(v) = variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn model_table(cfg: &ModelConfig) -> Result<toml::Table> {
    Ok(toml::Table::try_from(cfg)?)
}

/// Makes a path absolute so the echoed config does not depend on the working
/// directory it is replayed from.
pub fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("cannot resolve path {}", p.display()))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataRun {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub dataset: GenConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Dataset directory written by `gen-data`.
    pub data: Option<PathBuf>,
    /// Start from these parameters instead of a fresh initialization.
    pub init_checkpoint: Option<PathBuf>,
    pub model: toml::Table,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRun {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
}

impl Default for EvalRun {
    fn default() -> Self {
        EvalRun {
            out: None,
            data: None,
            checkpoint: None,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferRun {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Without a checkpoint a fresh model is built from `[model]` and `seed`;
    /// its zero output layer makes the prediction equal the skinned garment.
    pub checkpoint: Option<PathBuf>,
    pub model: toml::Table,
    pub seed: u64,
    pub garment: GarmentSpec,
    pub weight_falloff: f64,
    pub shape: BodyShape,
    pub pose: BodyPose,
    pub tessellation: Tessellation,
    pub condition: Option<Vec<f64>>,
}

impl Default for InferRun {
    fn default() -> Self {
        InferRun {
            out: None,
            checkpoint: None,
            model: toml::Table::new(),
            seed: 0,
            garment: GarmentSpec::default(),
            weight_falloff: GenConfig::default().weight_falloff,
            shape: BodyShape::default(),
            pose: BodyPose::default(),
            tessellation: Tessellation::default(),
            condition: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchRun {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub model: toml::Table,
    /// Initialization seed of a fresh model; timing does not depend on it.
    pub model_seed: u64,
    pub bench: BenchConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckRun {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub instances: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for GradCheckRun {
    fn default() -> Self {
        GradCheckRun {
            out: None,
            instances: 10,
            seed: 0,
            tolerance: drapenet::pipeline::GRAD_TOLERANCE,
        }
    }
}
