//! Model checkpoint JSON.
//!
//! Matrices are stored as nested arrays with one row per hidden unit, the
//! readout `w_out` as a `1 x hidden` matrix and `b_out` as a number. Floats
//! are written in shortest round-trip form, so loading restores every
//! parameter bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use pourbench_core::rnn::{EpochLoss, TrainConfig};
use pourbench_core::{LstmParams, NormStats};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::format::{self, FormatError, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub trials: usize,
    pub train: Option<TrainConfig>,
    /// Entry 0 is the initial model.
    pub losses: Vec<EpochLoss>,
    pub generator_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub params: LstmParams,
    pub norm: NormStats,
    pub metadata: CheckpointMetadata,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u32,
    input_dim: usize,
    hidden: usize,
    params: BTreeMap<String, Value>,
    norm: NormStats,
    #[serde(default)]
    metadata: CheckpointMetadata,
}

fn tensor_cols(p: &LstmParams, name: &str) -> Option<usize> {
    match name {
        "w_xi" | "w_xf" | "w_xc" | "w_xo" => Some(p.input_dim),
        "w_hi" | "w_hf" | "w_hc" | "w_ho" => Some(p.hidden),
        "w_out" => Some(p.hidden),
        _ => None,
    }
}

impl ModelCheckpoint {
    pub fn to_json(&self) -> Vec<u8> {
        let p = &self.params;
        let mut params = BTreeMap::new();
        for (name, data) in p.tensors() {
            let value = if name == "b_out" {
                Value::from(data[0])
            } else if let Some(cols) = tensor_cols(p, name) {
                Value::Array(data.chunks(cols).map(|row| Value::from(row.to_vec())).collect())
            } else {
                Value::from(data.to_vec())
            };
            params.insert(name.to_string(), value);
        }
        let doc = Document {
            format_version: FORMAT_VERSION,
            input_dim: p.input_dim,
            hidden: p.hidden,
            params,
            norm: self.norm.clone(),
            metadata: self.metadata.clone(),
        };
        format::to_json_bytes(&doc)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, FormatError> {
        let doc: Document = serde_json::from_str(text).map_err(|e| FormatError::parse(origin, 0, &e))?;
        let invalid = |m: String| FormatError::invalid(origin, m);
        if doc.format_version != FORMAT_VERSION {
            return Err(invalid(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        if doc.input_dim == 0 || doc.hidden == 0 {
            return Err(invalid("input_dim and hidden must be positive".into()));
        }
        let mut params = LstmParams::zeros(doc.input_dim, doc.hidden);
        let shape = params.clone();
        if let Some(extra) = doc.params.keys().find(|k| !shape.tensors().iter().any(|(n, _)| n == k)) {
            return Err(invalid(format!("unknown tensor `{extra}`")));
        }
        for (name, slot) in params.tensors_mut() {
            let value = doc.params.get(name).ok_or_else(|| invalid(format!("missing tensor `{name}`")))?;
            let flat = flatten(&shape, name, value).map_err(|m| invalid(format!("tensor `{name}`: {m}")))?;
            slot.copy_from_slice(&flat);
        }
        params.validate().map_err(|e| invalid(e.to_string()))?;
        if !params.is_finite() {
            return Err(invalid("parameters must be finite".into()));
        }
        doc.norm.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(Self { params, norm: doc.norm, metadata: doc.metadata })
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_file(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = format::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }
}

fn numbers(value: &Value, expected: usize) -> Result<Vec<f64>, String> {
    let items = value.as_array().ok_or("expected an array")?;
    if items.len() != expected {
        return Err(format!("expected {expected} entries, got {}", items.len()));
    }
    items.iter().map(|v| v.as_f64().ok_or_else(|| format!("non-numeric entry {v}"))).collect()
}

fn flatten(shape: &LstmParams, name: &str, value: &Value) -> Result<Vec<f64>, String> {
    let len = shape.expected_len(name);
    if name == "b_out" {
        return value.as_f64().map(|v| vec![v]).ok_or_else(|| "expected a number".into());
    }
    match tensor_cols(shape, name) {
        Some(cols) => {
            let rows = value.as_array().ok_or("expected an array of rows")?;
            if rows.len() * cols != len {
                return Err(format!("expected {} rows, got {}", len / cols, rows.len()));
            }
            let mut out = Vec::with_capacity(len);
            for (r, row) in rows.iter().enumerate() {
                out.extend(numbers(row, cols).map_err(|m| format!("row {r}: {m}"))?);
            }
            Ok(out)
        }
        None => numbers(value, len),
    }
}
