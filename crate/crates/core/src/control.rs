//! Closed-loop pouring executor and controllers.

use alloc::vec::Vec;

use thiserror::Error;

use crate::data::{NormStats, Trial};
use crate::geometry::ContainerSpec;
use crate::policy::{PolicyParams, ScriptedPolicy};
use crate::rnn::{lstm_step, LstmParams, LstmState, RnnError, INPUT_DIM};
use crate::sim::{LiquidSpec, SensorModel, SimConfig, SimError, Simulator};

/// Tilt (rad) below which a finished pour counts as back upright.
pub const UPRIGHT_TOL: f64 = 0.01;
pub const DEFAULT_TIMEOUT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("vol_2pour {vol_2pour} mL must be positive and below vol_total {vol_total} mL")]
    InvalidTarget { vol_total: f64, vol_2pour: f64 },
    #[error("timeout must be positive")]
    InvalidTimeout,
    #[error("checkpoint expects {expected} input features, the executor provides {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error(transparent)]
    Rnn(#[from] RnnError),
}

/// Everything the controller is allowed to see at one step.
///
/// The scale reading is the only information about the poured volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub dt: f64,
    pub theta: f64,
    pub sensor: f64,
    pub vol_total: f64,
    pub vol_2pour: f64,
    pub d: f64,
    pub h: f64,
}

impl Observation {
    /// Features in network order: vol_total, vol_2pour, d, h, theta, vol.
    pub fn features(&self) -> [f64; INPUT_DIM] {
        [self.vol_total, self.vol_2pour, self.d, self.h, self.theta, self.sensor]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub container: ContainerSpec,
    pub liquid: LiquidSpec,
    pub vol_total: f64,
    pub vol_2pour: f64,
    pub sim: SimConfig,
    pub sensor: SensorModel,
    /// Seconds of simulated time before the run is abandoned.
    pub timeout: f64,
}

impl RunConfig {
    pub fn new(container: ContainerSpec, liquid: LiquidSpec, vol_total: f64, vol_2pour: f64) -> Self {
        Self {
            container,
            liquid,
            vol_total,
            vol_2pour,
            sim: SimConfig::default(),
            sensor: SensorModel::default(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        self.container.validate().map_err(SimError::from)?;
        self.liquid.validate()?;
        self.sim.validate()?;
        self.sensor.validate()?;
        let capacity = self.container.capacity_upright();
        if !(self.vol_total > 0.0 && self.vol_total <= capacity) {
            return Err(SimError::VolumeExceedsCapacity { vol_total: self.vol_total, capacity }.into());
        }
        if !(self.vol_2pour > 0.0 && self.vol_2pour < self.vol_total) {
            return Err(ControlError::InvalidTarget { vol_total: self.vol_total, vol_2pour: self.vol_2pour });
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(ControlError::InvalidTimeout);
        }
        Ok(())
    }

    /// Most steps a run may take.
    pub fn max_steps(&self) -> usize {
        libm::ceil(self.timeout / self.sim.dt - 1e-9) as usize
    }
}

/// Produces an angular velocity command each step.
pub trait Controller {
    /// Clears per-run state before a new pour.
    fn reset(&mut self, rc: &RunConfig) -> Result<(), ControlError>;
    fn command(&mut self, obs: &Observation) -> f64;
}

impl<C: Controller + ?Sized> Controller for &mut C {
    fn reset(&mut self, rc: &RunConfig) -> Result<(), ControlError> {
        (**self).reset(rc)
    }

    fn command(&mut self, obs: &Observation) -> f64 {
        (**self).command(obs)
    }
}

/// Fixed-parameter scripted policy.
#[derive(Debug, Clone)]
pub struct BaselineController {
    params: PolicyParams,
    policy: Option<ScriptedPolicy>,
}

impl BaselineController {
    pub fn new() -> Self {
        Self::with_params(PolicyParams::mid_range())
    }

    pub fn with_params(params: PolicyParams) -> Self {
        Self { params, policy: None }
    }

    pub fn policy(&self) -> Option<&ScriptedPolicy> {
        self.policy.as_ref()
    }
}

impl Default for BaselineController {
    fn default() -> Self {
        Self::new()
    }
}

impl Controller for BaselineController {
    fn reset(&mut self, rc: &RunConfig) -> Result<(), ControlError> {
        self.policy = Some(ScriptedPolicy::new(
            self.params,
            &rc.container,
            &rc.liquid,
            rc.vol_total,
            rc.vol_2pour,
            &rc.sim,
            &rc.sensor,
        ));
        Ok(())
    }

    fn command(&mut self, obs: &Observation) -> f64 {
        match self.policy.as_mut() {
            Some(p) => p.command(obs),
            None => 0.0,
        }
    }
}

/// Peephole LSTM velocity generator with the normalisation it was trained
/// with.
#[derive(Debug, Clone)]
pub struct LstmController {
    params: LstmParams,
    norm: NormStats,
    state: LstmState,
    omega_limit: f64,
}

impl LstmController {
    pub fn new(params: LstmParams, norm: NormStats) -> Result<Self, ControlError> {
        params.validate()?;
        if params.input_dim != INPUT_DIM {
            return Err(ControlError::FeatureDim { expected: params.input_dim, got: INPUT_DIM });
        }
        let state = LstmState::zeros(params.hidden);
        Ok(Self { params, norm, state, omega_limit: f64::INFINITY })
    }

    pub fn params(&self) -> &LstmParams {
        &self.params
    }
}

impl Controller for LstmController {
    fn reset(&mut self, rc: &RunConfig) -> Result<(), ControlError> {
        self.state = LstmState::zeros(self.params.hidden);
        self.omega_limit = rc.sim.omega_limit;
        Ok(())
    }

    fn command(&mut self, obs: &Observation) -> f64 {
        let x = self.norm.normalize(&obs.features());
        match lstm_step(&self.params, &self.state, &x) {
            Ok((next, omega)) => {
                self.state = next;
                if omega.is_finite() {
                    omega.clamp(-self.omega_limit, self.omega_limit)
                } else {
                    omega
                }
            }
            Err(_) => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    Retracted,
    Timeout,
    ControllerFault,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// |v_poured - vol_2pour| at the end of the run (mL).
    pub final_error: f64,
    pub v_poured: f64,
    pub overpoured: bool,
    pub stop_reason: StopReason,
    pub steps: usize,
    pub trajectory: Trial,
}

/// Step-by-step executor; [`run_closed_loop`] drives one to completion and
/// interactive sessions drive one from incoming commands.
#[derive(Debug, Clone)]
pub struct PourRun {
    rc: RunConfig,
    sim: Simulator,
    theta: Vec<f64>,
    vol: Vec<f64>,
    omega: Vec<f64>,
    pour_entered: bool,
    stop: Option<StopReason>,
    max_steps: usize,
}

impl PourRun {
    pub fn new(rc: RunConfig) -> Result<Self, ControlError> {
        rc.validate()?;
        let sim = Simulator::new(rc.container.clone(), rc.liquid.clone(), rc.vol_total, rc.sim.clone(), &rc.sensor)?;
        let max_steps = rc.max_steps();
        Ok(Self {
            rc,
            sim,
            theta: Vec::new(),
            vol: Vec::new(),
            omega: Vec::new(),
            pour_entered: false,
            stop: None,
            max_steps,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.rc
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn observation(&self) -> Observation {
        let s = self.sim.state();
        Observation {
            t: s.t,
            dt: self.rc.sim.dt,
            theta: s.theta,
            sensor: s.sensor,
            vol_total: self.rc.vol_total,
            vol_2pour: self.rc.vol_2pour,
            d: self.rc.container.d,
            h: self.rc.container.h,
        }
    }

    pub fn steps(&self) -> usize {
        self.omega.len()
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn pour_entered(&self) -> bool {
        self.pour_entered
    }

    /// Applies one command. Returns the stop reason once the run is over;
    /// later calls are ignored.
    pub fn advance(&mut self, omega: f64) -> Option<StopReason> {
        if self.stop.is_some() {
            return self.stop;
        }
        if !omega.is_finite() {
            self.stop = Some(StopReason::ControllerFault);
            return self.stop;
        }
        let s = *self.sim.state();
        self.theta.push(s.theta);
        self.vol.push(s.sensor);
        self.omega.push(omega);
        let next = *self.sim.step(omega);
        if next.q > 0.0 {
            self.pour_entered = true;
        }
        if self.pour_entered && next.theta <= UPRIGHT_TOL && next.q == 0.0 {
            self.stop = Some(StopReason::Retracted);
        } else if self.steps() >= self.max_steps {
            self.stop = Some(StopReason::Timeout);
        }
        self.stop
    }

    /// Ends the run early (e.g. an interactive subject gave up).
    pub fn abort(&mut self) {
        if self.stop.is_none() {
            self.stop = Some(StopReason::Timeout);
        }
    }

    pub fn finish(self) -> RunResult {
        let v_poured = self.sim.state().v_poured;
        let signed = v_poured - self.rc.vol_2pour;
        RunResult {
            final_error: libm::fabs(signed),
            v_poured,
            overpoured: signed > 0.0,
            stop_reason: self.stop.unwrap_or(StopReason::Timeout),
            steps: self.omega.len(),
            trajectory: Trial {
                vol_total: self.rc.vol_total,
                vol_2pour: self.rc.vol_2pour,
                d: self.rc.container.d,
                h: self.rc.container.h,
                dt: self.rc.sim.dt,
                theta: self.theta,
                vol: self.vol,
                omega: self.omega,
            },
        }
    }
}

/// Runs `controller` against a fresh simulator until it retracts, faults or
/// times out.
pub fn run_closed_loop<C: Controller + ?Sized>(controller: &mut C, rc: &RunConfig) -> Result<RunResult, ControlError> {
    let mut run = PourRun::new(rc.clone())?;
    controller.reset(rc)?;
    loop {
        let obs = run.observation();
        let omega = controller.command(&obs);
        if run.advance(omega).is_some() {
            return Ok(run.finish());
        }
    }
}
