//! Per-step simulator traces as JSON lines.

use std::io::BufRead;
use std::path::Path;

use pourbench_core::{Controller, PourRun, RunConfig, RunResult};
use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError};

/// State after one step and the command that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub theta: f64,
    pub omega_cmd: f64,
    pub v_in: f64,
    pub v_poured: f64,
    pub q: f64,
    pub sensor: f64,
}

/// Like [`pourbench_core::run_closed_loop`], also recording every step.
pub fn run_traced<C: Controller + ?Sized>(
    controller: &mut C,
    rc: &RunConfig,
) -> Result<(RunResult, Vec<StepRecord>), pourbench_core::ControlError> {
    let mut run = PourRun::new(rc.clone())?;
    controller.reset(rc)?;
    let mut trace = Vec::new();
    loop {
        let omega = controller.command(&run.observation());
        let stop = run.advance(omega);
        if omega.is_finite() {
            let s = run.simulator().state();
            trace.push(StepRecord {
                t: s.t,
                theta: s.theta,
                omega_cmd: omega,
                v_in: s.v_in,
                v_poured: s.v_poured,
                q: s.q,
                sensor: s.sensor,
            });
        }
        if stop.is_some() {
            return Ok((run.finish(), trace));
        }
    }
}

pub fn save_trace(path: &Path, trace: &[StepRecord]) -> Result<(), FormatError> {
    let mut out = Vec::new();
    for r in trace {
        out.extend(serde_json::to_vec(r).expect("in-memory JSON serialisation"));
        out.push(b'\n');
    }
    format::write_file(path, &out)
}

pub fn load_trace(path: &Path) -> Result<Vec<StepRecord>, FormatError> {
    let origin = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FormatError::parse(&origin, k, &e))?);
    }
    Ok(out)
}
