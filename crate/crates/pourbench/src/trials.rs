//! Trial JSON-lines files and the dataset manifest sidecar.
//!
//! One trial per line with the fields `vol_total`, `vol_2pour`, `d`, `h`,
//! `dt`, `theta`, `vol` and `omega`. Unknown fields are ignored and a
//! missing `omega` is derived from `theta` by forward differences.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use pourbench_core::{derive_omega, ContainerSpec, SensorModel, SimConfig, Trial};
use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError, FORMAT_VERSION};

#[derive(Debug, Serialize, Deserialize)]
struct TrialRecord {
    vol_total: f64,
    vol_2pour: f64,
    d: f64,
    h: f64,
    dt: f64,
    theta: Vec<f64>,
    vol: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega: Option<Vec<f64>>,
}

impl From<&Trial> for TrialRecord {
    fn from(t: &Trial) -> Self {
        Self {
            vol_total: t.vol_total,
            vol_2pour: t.vol_2pour,
            d: t.d,
            h: t.h,
            dt: t.dt,
            theta: t.theta.clone(),
            vol: t.vol.clone(),
            omega: Some(t.omega.clone()),
        }
    }
}

impl TrialRecord {
    fn into_trial(self) -> Result<Trial, String> {
        let omega = match self.omega {
            Some(o) => o,
            None => derive_omega(&self.theta, self.dt).map_err(|e| e.to_string())?,
        };
        let trial = Trial {
            vol_total: self.vol_total,
            vol_2pour: self.vol_2pour,
            d: self.d,
            h: self.h,
            dt: self.dt,
            theta: self.theta,
            vol: self.vol,
            omega,
        };
        trial.validate().map_err(|e| e.to_string())?;
        Ok(trial)
    }
}

/// One JSON line, without the newline.
pub fn trial_to_line(t: &Trial) -> String {
    serde_json::to_string(&TrialRecord::from(t)).expect("in-memory JSON serialisation")
}

pub fn write_trials<W: Write>(mut w: W, trials: &[Trial]) -> std::io::Result<()> {
    for t in trials {
        w.write_all(trial_to_line(t).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Parses a JSON-lines stream. Blank lines are skipped; `origin` names the
/// source in error messages.
pub fn read_trials<R: BufRead>(r: R, origin: &str) -> Result<Vec<Trial>, FormatError> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| FormatError::InvalidLine {
            origin: origin.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord =
            serde_json::from_str(&line).map_err(|e| FormatError::parse(origin, line_no - 1, &e))?;
        let trial = record.into_trial().map_err(|message| FormatError::InvalidLine {
            origin: origin.to_string(),
            line: line_no,
            message,
        })?;
        out.push(trial);
    }
    Ok(out)
}

pub fn save_trials(path: &Path, trials: &[Trial]) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    write_trials(&mut buf, trials).map_err(|e| FormatError::io(path, e))?;
    format::write_file(path, &buf)
}

pub fn load_trials(path: &Path) -> Result<Vec<Trial>, FormatError> {
    let file = std::fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    read_trials(std::io::BufReader::new(file), &path.display().to_string())
}

/// Sidecar describing how a generated dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub count: usize,
    pub seed: u64,
    pub containers: Vec<ContainerSpec>,
    pub generator_version: String,
    pub sim: SimConfig,
    pub sensor: SensorModel,
}

impl DatasetManifest {
    pub fn new(count: usize, seed: u64, containers: Vec<ContainerSpec>, sim: SimConfig, sensor: SensorModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            count,
            seed,
            containers,
            generator_version: generator_version(),
            sim,
            sensor,
        }
    }
}

pub fn generator_version() -> String {
    format!("pourbench {}", env!("CARGO_PKG_VERSION"))
}

/// `trials.jsonl` -> `trials.manifest.json`.
pub fn manifest_path(trials_path: &Path) -> PathBuf {
    trials_path.with_extension("manifest.json")
}

pub fn save_manifest(path: &Path, m: &DatasetManifest) -> Result<(), FormatError> {
    format::write_file(path, &format::to_json_bytes(m))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, FormatError> {
    let text = format::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| FormatError::parse(&path.display().to_string(), 0, &e))
}
