//! Sweep reports as CSV and JSON.

use std::path::Path;

use pourbench_core::eval::{
    ConditionResult, PourOutcome, SweepKind, SweepReport, SweepSettings, PHYSICAL_REFERENCE_CONTAINERS,
    PHYSICAL_REFERENCE_LIQUIDS,
};
use pourbench_core::policy::PolicyParams;
use pourbench_core::{ContainerRegistry, RegistryEntry};
use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError, FORMAT_VERSION};
use crate::registry::INVENTED_DIMENSIONS_NOTE;

/// Physical-world error of the human subjects, `(mu_e, sigma_e)` in mL.
pub const PHYSICAL_REFERENCE_HUMAN: (f64, f64) = (12.37, 9.80);

pub const PHYSICAL_REFERENCE_NOTE: &str =
    "Measured on real hardware; shown for context only and not comparable in magnitude to simulated errors.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerInfo {
    Lstm { hidden: usize, seed: u64, best_epoch: usize, trials: usize },
    Baseline { params: PolicyParams },
    Human { sessions: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: String,
    pub container: String,
    pub liquid: String,
    pub viscosity: f64,
    pub in_training: bool,
    pub n: usize,
    pub mu_e_ml: f64,
    pub sigma_e_ml: f64,
    pub errors: Vec<f64>,
    pub pours: Vec<PourOutcome>,
}

impl From<&ConditionResult> for ReportRow {
    fn from(r: &ConditionResult) -> Self {
        Self {
            condition: r.condition.clone(),
            container: r.container.clone(),
            liquid: r.liquid.clone(),
            viscosity: r.viscosity,
            in_training: r.in_training,
            n: r.stats.n,
            mu_e_ml: r.stats.mu_e,
            sigma_e_ml: r.stats.sigma_e,
            errors: r.errors(),
            pours: r.pours.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub condition: String,
    pub mu_e_ml: f64,
    pub sigma_e_ml: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalReference {
    pub note: String,
    pub rows: Vec<ReferenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub controller: ControllerInfo,
    pub settings: SweepSettings,
    pub registry_note: String,
    pub registry: Vec<RegistryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format_version: u32,
    pub kind: SweepKind,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub physical_reference: PhysicalReference,
    pub config: ReportConfig,
}

pub fn physical_reference(kind: SweepKind) -> PhysicalReference {
    let table: &[(&str, f64, f64)] = match kind {
        SweepKind::Containers => &PHYSICAL_REFERENCE_CONTAINERS,
        SweepKind::Viscosity => &PHYSICAL_REFERENCE_LIQUIDS,
    };
    PhysicalReference {
        note: PHYSICAL_REFERENCE_NOTE.to_string(),
        rows: table
            .iter()
            .map(|&(c, mu, sigma)| ReferenceRow { condition: c.to_string(), mu_e_ml: mu, sigma_e_ml: sigma })
            .collect(),
    }
}

pub fn report_document(report: &SweepReport, controller: ControllerInfo, registry: &ContainerRegistry) -> ReportDocument {
    ReportDocument {
        format_version: FORMAT_VERSION,
        kind: report.kind,
        seed: report.settings.seed,
        rows: report.rows.iter().map(ReportRow::from).collect(),
        physical_reference: physical_reference(report.kind),
        config: ReportConfig {
            controller,
            settings: report.settings.clone(),
            registry_note: INVENTED_DIMENSIONS_NOTE.to_string(),
            registry: registry.containers.clone(),
        },
    }
}

pub const CSV_HEADER: [&str; 6] = ["condition", "in_training", "n", "mu_e_ml", "sigma_e_ml", "seed"];

pub fn to_csv(doc: &ReportDocument) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory CSV");
    for r in &doc.rows {
        w.write_record([
            r.condition.clone(),
            r.in_training.to_string(),
            r.n.to_string(),
            r.mu_e_ml.to_string(),
            r.sigma_e_ml.to_string(),
            doc.seed.to_string(),
        ])
        .expect("in-memory CSV");
    }
    w.into_inner().expect("in-memory CSV")
}

pub fn to_json(doc: &ReportDocument) -> Vec<u8> {
    format::to_json_bytes(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Output files for `--out base`: an explicit `.csv` or `.json` path writes
/// that format only; a directory receives `<stem>.csv` and `<stem>.json`;
/// anything else gets both extensions appended.
pub fn report_targets(base: &Path, stem: &str) -> Vec<(std::path::PathBuf, ReportFormat)> {
    match base.extension().and_then(|e| e.to_str()) {
        Some("csv") => vec![(base.to_path_buf(), ReportFormat::Csv)],
        Some("json") => vec![(base.to_path_buf(), ReportFormat::Json)],
        _ => {
            let stem_path = if base.is_dir() { base.join(stem) } else { base.to_path_buf() };
            let with = |ext: &str| {
                let mut s = stem_path.clone().into_os_string();
                s.push(".");
                s.push(ext);
                std::path::PathBuf::from(s)
            };
            vec![(with("csv"), ReportFormat::Csv), (with("json"), ReportFormat::Json)]
        }
    }
}

pub fn emit_report(doc: &ReportDocument, path: &Path, fmt: ReportFormat) -> Result<(), FormatError> {
    let bytes = match fmt {
        ReportFormat::Csv => to_csv(doc),
        ReportFormat::Json => to_json(doc),
    };
    format::write_file(path, &bytes)
}

pub fn load_report(path: &Path) -> Result<ReportDocument, FormatError> {
    let text = format::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| FormatError::parse(&path.display().to_string(), 0, &e))
}

/// Fixed-width table for terminals.
pub fn render_table(doc: &ReportDocument) -> String {
    let mut out = format!("{:<16} {:>11} {:>3} {:>9} {:>10}\n", "condition", "in_training", "n", "mu_e_ml", "sigma_e_ml");
    for r in &doc.rows {
        out.push_str(&format!(
            "{:<16} {:>11} {:>3} {:>9.3} {:>10.3}\n",
            r.condition, r.in_training, r.n, r.mu_e_ml, r.sigma_e_ml
        ));
    }
    out
}
