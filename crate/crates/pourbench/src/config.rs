//! Optional JSON config file. Every field may be omitted; command-line
//! flags take precedence over values found here.

use std::path::{Path, PathBuf};

use pourbench_core::{SensorModel, SimConfig};
use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError};

pub const CONFIG_ENV: &str = "POURBENCH_CONFIG";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub format_version: Option<u32>,
    pub seed: Option<u64>,
    /// Resolved relative to the config file.
    pub registry: Option<PathBuf>,
    pub sim: Option<SimConfig>,
    pub sensor: Option<SensorModel>,
    pub gen_data: GenDataSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataSection {
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub clip_norm: Option<f64>,
    pub hidden: Option<usize>,
    pub val_frac: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub pours: Option<usize>,
    pub timeout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub port: Option<u16>,
    pub host: Option<String>,
    pub ui: Option<PathBuf>,
}

impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, FormatError> {
        serde_json::from_str(text).map_err(|e| FormatError::parse(origin, 0, &e))
    }

    /// Loads `path` and makes relative paths inside it relative to its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let mut cfg = Self::parse(&format::read_to_string(path)?, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut().filter(|q| q.is_relative()) {
                *q = base.join(&*q);
            }
        };
        rebase(&mut cfg.registry);
        rebase(&mut cfg.serve.ui);
        Ok(cfg)
    }

    pub fn sim(&self) -> SimConfig {
        self.sim.clone().unwrap_or_default()
    }

    pub fn sensor(&self) -> SensorModel {
        self.sensor.clone().unwrap_or_default()
    }
}
