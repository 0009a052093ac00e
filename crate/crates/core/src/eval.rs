//! Error statistics and the container / viscosity sweeps.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control::{run_closed_loop, ControlError, Controller, RunConfig, StopReason};
use crate::data::{sample_targets, DataError};
use crate::geometry::ContainerSpec;
use crate::seed::{derive_seed, label_hash};
use crate::sim::{LiquidSpec, SensorModel, SimConfig};

pub const DEFAULT_POURS: usize = 15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("error list is empty")]
    Empty,
    #[error("duplicate container name `{0}` in registry")]
    DuplicateName(String),
    #[error("container `{0}` is not in the registry")]
    UnknownContainer(String),
    #[error("registry has no containers {0}")]
    NoContainers(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorStats {
    pub mu_e: f64,
    pub sigma_e: f64,
    pub n: usize,
}

/// Mean and sample standard deviation (divisor `n - 1`; zero for a single
/// value).
pub fn error_stats(errors: &[f64]) -> Result<ErrorStats, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = errors.len();
    let mu = errors.iter().sum::<f64>() / n as f64;
    let sigma = if n == 1 {
        0.0
    } else {
        libm::sqrt(errors.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / (n - 1) as f64)
    };
    Ok(ErrorStats { mu_e: mu, sigma_e: sigma, n })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegistryEntry {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub container: ContainerSpec,
    /// Demonstrations were recorded with this container.
    pub in_training: bool,
    /// Included in the container sweep.
    #[cfg_attr(feature = "serde", serde(default = "default_true"))]
    pub evaluate: bool,
}

#[cfg(feature = "serde")]
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContainerRegistry {
    pub containers: Vec<RegistryEntry>,
}

impl ContainerRegistry {
    pub fn new(containers: Vec<RegistryEntry>) -> Result<Self, EvalError> {
        let reg = Self { containers };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for (k, e) in self.containers.iter().enumerate() {
            e.container.validate().map_err(|g| ControlError::Sim(g.into()))?;
            if self.containers[..k].iter().any(|o| o.container.name == e.container.name) {
                return Err(EvalError::DuplicateName(e.container.name.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&RegistryEntry, EvalError> {
        self.containers
            .iter()
            .find(|e| e.container.name == name)
            .ok_or_else(|| EvalError::UnknownContainer(name.into()))
    }

    pub fn training(&self) -> Vec<ContainerSpec> {
        self.containers.iter().filter(|e| e.in_training).map(|e| e.container.clone()).collect()
    }

    pub fn evaluation(&self) -> Vec<&RegistryEntry> {
        self.containers.iter().filter(|e| e.evaluate).collect()
    }
}

/// Shared settings of every pour in a sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepSettings {
    pub pours: usize,
    pub seed: u64,
    pub sim: SimConfig,
    pub sensor: SensorModel,
    pub timeout: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            pours: DEFAULT_POURS,
            seed: 0,
            sim: SimConfig::default(),
            sensor: SensorModel::default(),
            timeout: crate::control::DEFAULT_TIMEOUT,
        }
    }
}

/// A single evaluation pour. Targets and scale noise depend only on the
/// sweep seed, the container name and the pour index, so the same pours are
/// repeated for every liquid and every controller.
#[derive(Debug, Clone, PartialEq)]
pub struct PourJob {
    pub condition: usize,
    pub index: usize,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionPlan {
    pub name: String,
    pub container: String,
    pub liquid: LiquidSpec,
    pub in_training: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SweepKind {
    Containers,
    Viscosity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub kind: SweepKind,
    pub settings: SweepSettings,
    pub conditions: Vec<ConditionPlan>,
    pub jobs: Vec<PourJob>,
}

fn pour_jobs(
    condition: usize,
    container: &ContainerSpec,
    liquid: &LiquidSpec,
    s: &SweepSettings,
) -> Result<Vec<PourJob>, EvalError> {
    (0..s.pours)
        .map(|index| {
            let stream = derive_seed(s.seed, &[label_hash(&container.name), index as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let (vol_total, vol_2pour) = sample_targets(container, &mut rng)?;
            let mut run = RunConfig::new(container.clone(), liquid.clone(), vol_total, vol_2pour);
            run.sim = s.sim.clone();
            run.sensor = s.sensor.with_seed(derive_seed(stream, &[1]));
            run.timeout = s.timeout;
            Ok(PourJob { condition, index, run })
        })
        .collect()
}

/// Every evaluated container, pouring `liquid`.
pub fn plan_container_sweep(
    registry: &ContainerRegistry,
    liquid: &LiquidSpec,
    settings: &SweepSettings,
) -> Result<SweepPlan, EvalError> {
    let entries = registry.evaluation();
    if entries.is_empty() {
        return Err(EvalError::NoContainers("marked for evaluation"));
    }
    let mut conditions = Vec::new();
    let mut jobs = Vec::new();
    for (k, e) in entries.iter().enumerate() {
        conditions.push(ConditionPlan {
            name: e.container.name.clone(),
            container: e.container.name.clone(),
            liquid: liquid.clone(),
            in_training: e.in_training,
        });
        jobs.extend(pour_jobs(k, &e.container, liquid, settings)?);
    }
    Ok(SweepPlan { kind: SweepKind::Containers, settings: settings.clone(), conditions, jobs })
}

/// One container, one condition per liquid.
pub fn plan_viscosity_sweep(
    registry: &ContainerRegistry,
    container: &str,
    liquids: &[LiquidSpec],
    settings: &SweepSettings,
) -> Result<SweepPlan, EvalError> {
    let entry = registry.get(container)?;
    let mut conditions = Vec::new();
    let mut jobs = Vec::new();
    for (k, liquid) in liquids.iter().enumerate() {
        conditions.push(ConditionPlan {
            name: liquid.name.clone(),
            container: entry.container.name.clone(),
            liquid: liquid.clone(),
            in_training: entry.in_training,
        });
        jobs.extend(pour_jobs(k, &entry.container, liquid, settings)?);
    }
    Ok(SweepPlan { kind: SweepKind::Viscosity, settings: settings.clone(), conditions, jobs })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PourOutcome {
    pub index: usize,
    pub vol_total: f64,
    pub vol_2pour: f64,
    pub v_poured: f64,
    pub error: f64,
    pub overpoured: bool,
    pub stop_reason: StopReason,
}

pub fn execute_job<C: Controller + ?Sized>(job: &PourJob, controller: &mut C) -> Result<PourOutcome, EvalError> {
    let r = run_closed_loop(controller, &job.run)?;
    Ok(PourOutcome {
        index: job.index,
        vol_total: job.run.vol_total,
        vol_2pour: job.run.vol_2pour,
        v_poured: r.v_poured,
        error: r.final_error,
        overpoured: r.overpoured,
        stop_reason: r.stop_reason,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConditionResult {
    pub condition: String,
    pub container: String,
    pub liquid: String,
    pub viscosity: f64,
    pub in_training: bool,
    pub stats: ErrorStats,
    pub pours: Vec<PourOutcome>,
}

impl ConditionResult {
    pub fn errors(&self) -> Vec<f64> {
        self.pours.iter().map(|p| p.error).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepReport {
    pub kind: SweepKind,
    pub settings: SweepSettings,
    pub rows: Vec<ConditionResult>,
}

impl SweepReport {
    pub fn row(&self, condition: &str) -> Option<&ConditionResult> {
        self.rows.iter().find(|r| r.condition == condition)
    }
}

/// Groups outcomes (in job order) into per-condition rows. Container sweeps
/// are ordered by increasing mean error; viscosity sweeps keep liquid order.
pub fn assemble(plan: &SweepPlan, outcomes: &[PourOutcome]) -> Result<SweepReport, EvalError> {
    let mut rows: Vec<ConditionResult> = plan
        .conditions
        .iter()
        .map(|c| ConditionResult {
            condition: c.name.clone(),
            container: c.container.clone(),
            liquid: c.liquid.name.clone(),
            viscosity: c.liquid.viscosity,
            in_training: c.in_training,
            stats: ErrorStats { mu_e: 0.0, sigma_e: 0.0, n: 0 },
            pours: Vec::new(),
        })
        .collect();
    for (job, outcome) in plan.jobs.iter().zip(outcomes) {
        rows[job.condition].pours.push(outcome.clone());
    }
    for row in &mut rows {
        row.stats = error_stats(&row.errors())?;
    }
    if plan.kind == SweepKind::Containers {
        rows.sort_by(|a, b| a.stats.mu_e.total_cmp(&b.stats.mu_e).then_with(|| a.condition.cmp(&b.condition)));
    }
    Ok(SweepReport { kind: plan.kind, settings: plan.settings.clone(), rows })
}

/// Runs every job serially with a fresh controller from `make`.
pub fn run_plan<C: Controller>(plan: &SweepPlan, mut make: impl FnMut() -> C) -> Result<SweepReport, EvalError> {
    let outcomes = plan
        .jobs
        .iter()
        .map(|job| execute_job(job, &mut make()))
        .collect::<Result<Vec<_>, _>>()?;
    assemble(plan, &outcomes)
}

pub fn run_container_sweep<C: Controller>(
    make: impl FnMut() -> C,
    registry: &ContainerRegistry,
    liquid: &LiquidSpec,
    settings: &SweepSettings,
) -> Result<SweepReport, EvalError> {
    run_plan(&plan_container_sweep(registry, liquid, settings)?, make)
}

pub fn run_viscosity_sweep<C: Controller>(
    make: impl FnMut() -> C,
    registry: &ContainerRegistry,
    container: &str,
    liquids: &[LiquidSpec],
    settings: &SweepSettings,
) -> Result<SweepReport, EvalError> {
    run_plan(&plan_viscosity_sweep(registry, container, liquids, settings)?, make)
}

/// Liquids of the viscosity experiment.
pub fn default_liquids() -> [LiquidSpec; 3] {
    [LiquidSpec::water(), LiquidSpec::oil(), LiquidSpec::syrup()]
}

/// Real-world reference measurements `(condition, mu_e, sigma_e)` in mL,
/// reported next to simulated results for context only.
pub const PHYSICAL_REFERENCE_CONTAINERS: [(&str, f64, f64); 7] = [
    ("red", 3.71, 3.88),
    ("slender_bottle", 4.12, 4.29),
    ("bubble", 6.77, 5.76),
    ("glass", 7.32, 8.24),
    ("human", 12.37, 9.80),
    ("measuring_cup", 11.29, 12.82),
    ("fat_bottle", 12.35, 8.88),
];

pub const PHYSICAL_REFERENCE_LIQUIDS: [(&str, f64, f64); 3] =
    [("water", 3.71, 3.88), ("oil", 4.11, 4.80), ("syrup", 15.66, 3.43)];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::BaselineController;
    use alloc::vec;

    fn registry() -> ContainerRegistry {
        ContainerRegistry::new(vec![
            RegistryEntry { container: ContainerSpec::new("red", 70.0, 107.0).unwrap(), in_training: true, evaluate: true },
            RegistryEntry { container: ContainerSpec::new("glass", 65.0, 120.0).unwrap(), in_training: false, evaluate: true },
            RegistryEntry { container: ContainerSpec::new("extra", 80.0, 120.0).unwrap(), in_training: true, evaluate: false },
        ])
        .unwrap()
    }

    #[test]
    fn stats_examples() {
        assert_eq!(error_stats(&[4.0, 4.0, 4.0]).unwrap(), ErrorStats { mu_e: 4.0, sigma_e: 0.0, n: 3 });
        let s = error_stats(&[3.0, 5.0]).unwrap();
        assert_eq!(s.mu_e, 4.0);
        assert!((s.sigma_e - core::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(error_stats(&[5.0]).unwrap().sigma_e, 0.0);
        assert_eq!(error_stats(&[]).unwrap_err(), EvalError::Empty);
    }

    #[test]
    fn registry_rejects_duplicates() {
        let e = RegistryEntry { container: ContainerSpec::new("a", 70.0, 100.0).unwrap(), in_training: false, evaluate: true };
        assert_eq!(ContainerRegistry::new(vec![e.clone(), e]).unwrap_err(), EvalError::DuplicateName("a".into()));
        assert!(registry().get("nope").is_err());
        assert_eq!(registry().training().len(), 2);
        assert_eq!(registry().evaluation().len(), 2);
    }

    #[test]
    fn targets_do_not_depend_on_liquid() {
        let s = SweepSettings { pours: 4, seed: 3, ..SweepSettings::default() };
        let plan = plan_viscosity_sweep(&registry(), "red", &default_liquids(), &s).unwrap();
        assert_eq!(plan.jobs.len(), 12);
        for k in 0..4 {
            let (a, b) = (&plan.jobs[k].run, &plan.jobs[8 + k].run);
            assert_eq!((a.vol_total, a.vol_2pour, a.sensor.seed), (b.vol_total, b.vol_2pour, b.sensor.seed));
            assert_eq!(b.liquid.name, "syrup");
        }
    }

    #[test]
    fn baseline_container_sweep_shape() {
        let s = SweepSettings { pours: 3, seed: 1, ..SweepSettings::default() };
        let rep = run_container_sweep(BaselineController::new, &registry(), &LiquidSpec::water(), &s).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows.iter().all(|r| r.stats.n == 3));
        assert!(rep.rows[0].stats.mu_e <= rep.rows[1].stats.mu_e);
        let again = run_container_sweep(BaselineController::new, &registry(), &LiquidSpec::water(), &s).unwrap();
        assert_eq!(rep, again);
    }
}
