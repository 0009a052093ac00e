//! Quasi-static pouring simulator.
//!
//! Each step applies a commanded angular velocity to the source container,
//! drains whatever retained liquid sits above the rim plane with a
//! viscosity-dependent time constant, and produces a lagged, fluctuating
//! reading of the poured volume.

use alloc::collections::VecDeque;
use alloc::string::String;
use core::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{tilted_capacity, ContainerSpec, GeometryError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("vol_total {vol_total} mL must be positive and at most the container capacity {capacity} mL")]
    VolumeExceedsCapacity { vol_total: f64, capacity: f64 },
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LiquidSpec {
    pub name: String,
    /// Dynamic viscosity in centipoise.
    pub viscosity: f64,
}

impl LiquidSpec {
    pub fn new(name: impl Into<String>, viscosity: f64) -> Result<Self, SimError> {
        let liquid = Self { name: name.into(), viscosity };
        liquid.validate()?;
        Ok(liquid)
    }

    pub fn water() -> Self {
        Self { name: "water".into(), viscosity: 1.0 }
    }

    pub fn oil() -> Self {
        Self { name: "oil".into(), viscosity: 65.0 }
    }

    pub fn syrup() -> Self {
        Self { name: "syrup".into(), viscosity: 2000.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.viscosity.is_finite() && self.viscosity >= 1.0 {
            Ok(())
        } else {
            Err(SimError::InvalidConfig("viscosity must be >= 1 cps"))
        }
    }
}

/// Scale reading model: latency, flow-impact overshoot and Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SensorModel {
    /// Seconds.
    pub latency: f64,
    /// mL of overshoot per mL/s of stream.
    pub impact_gain: f64,
    /// mL.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { latency: 0.1, impact_gain: 0.5, noise_std: 1.0, seed: 0 }
    }
}

impl SensorModel {
    pub fn ideal() -> Self {
        Self { latency: 0.0, impact_gain: 0.0, noise_std: 0.0, seed: 0 }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(SimError::InvalidConfig("sensor latency must be >= 0"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(SimError::InvalidConfig("sensor noise_std must be >= 0"));
        }
        if !self.impact_gain.is_finite() {
            return Err(SimError::InvalidConfig("sensor impact_gain must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SimConfig {
    /// Step length (s).
    pub dt: f64,
    /// Outflow time constant for water (s).
    pub tau0: f64,
    /// Exponent of the viscosity scaling of the time constant.
    pub alpha: f64,
    /// Command clamp (rad/s).
    pub omega_limit: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1.0 / 60.0, tau0: 0.05, alpha: 0.25, omega_limit: 1.5 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::InvalidConfig("dt must be > 0"));
        }
        if !(self.tau0.is_finite() && self.tau0 > 0.0) {
            return Err(SimError::InvalidConfig("tau0 must be > 0"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(SimError::InvalidConfig("alpha must be >= 0"));
        }
        if !(self.omega_limit.is_finite() && self.omega_limit > 0.0) {
            return Err(SimError::InvalidConfig("omega_limit must be > 0"));
        }
        Ok(())
    }

    /// Outflow time constant for `liquid`: `tau0 * viscosity^alpha`.
    pub fn time_constant(&self, liquid: &LiquidSpec) -> f64 {
        self.tau0 * libm::pow(liquid.viscosity, self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PourState {
    pub t: f64,
    pub theta: f64,
    /// Volume still in the source container (mL).
    pub v_in: f64,
    /// Volume that has left the source container (mL).
    pub v_poured: f64,
    /// Outflow rate (mL/s).
    pub q: f64,
    /// Most recent scale reading (mL).
    pub sensor: f64,
}

pub fn init_state(c: &ContainerSpec, vol_total: f64) -> Result<PourState, SimError> {
    c.validate()?;
    let capacity = c.capacity_upright();
    if !(vol_total.is_finite() && vol_total > 0.0 && vol_total <= capacity) {
        return Err(SimError::VolumeExceedsCapacity { vol_total, capacity });
    }
    Ok(PourState { t: 0.0, theta: 0.0, v_in: vol_total, v_poured: 0.0, q: 0.0, sensor: 0.0 })
}

/// Outflow rate (mL/s): the excess over the rim-plane capacity drains with
/// the liquid's time constant.
pub fn outflow_rate(c: &ContainerSpec, liquid: &LiquidSpec, state: &PourState, cfg: &SimConfig) -> f64 {
    let held = tilted_capacity(c, state.theta.clamp(0.0, FRAC_PI_2)).unwrap_or(0.0);
    let excess = (state.v_in - held).max(0.0);
    excess / cfg.time_constant(liquid)
}

/// One sample of the true process, as seen by the scale before lag.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SensorSample {
    v_poured: f64,
    q: f64,
}

/// Lagged, noisy scale.
///
/// Holds the last `lag + 1` process samples, where `lag` is the latency in
/// whole steps. Samples before the pour started read as an empty scale.
#[derive(Debug, Clone)]
pub struct Sensor {
    model: SensorModel,
    lag: usize,
    history: VecDeque<SensorSample>,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl Sensor {
    pub fn new(model: &SensorModel, dt: f64) -> Result<Self, SimError> {
        model.validate()?;
        let lag = libm::round(model.latency / dt) as usize;
        let mut history = VecDeque::with_capacity(lag + 1);
        history.push_back(SensorSample { v_poured: 0.0, q: 0.0 });
        let noise = if model.noise_std > 0.0 {
            Some(Normal::new(0.0, model.noise_std).map_err(|_| SimError::InvalidConfig("sensor noise_std"))?)
        } else {
            None
        };
        Ok(Self { model: model.clone(), lag, history, rng: ChaCha8Rng::seed_from_u64(model.seed), noise })
    }

    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    pub fn lag_steps(&self) -> usize {
        self.lag
    }

    /// Records the true state at the current time and returns the reading.
    pub fn observe(&mut self, v_poured: f64, q: f64) -> f64 {
        self.history.push_back(SensorSample { v_poured, q });
        while self.history.len() > self.lag + 1 {
            self.history.pop_front();
        }
        // Until `lag` steps have elapsed the front is the t = 0 sample.
        let lagged = self.history.front().copied().unwrap_or(SensorSample { v_poured: 0.0, q: 0.0 });
        self.read(lagged)
    }

    fn read(&mut self, sample: SensorSample) -> f64 {
        let eta = match &self.noise {
            Some(normal) => normal.sample(&mut self.rng),
            None => 0.0,
        };
        (sample.v_poured + self.model.impact_gain * sample.q + eta).max(0.0)
    }
}

/// A single pouring run: container, liquid, configuration and live state.
#[derive(Debug, Clone)]
pub struct Simulator {
    container: ContainerSpec,
    liquid: LiquidSpec,
    cfg: SimConfig,
    vol_total: f64,
    state: PourState,
    sensor: Sensor,
}

impl Simulator {
    pub fn new(
        container: ContainerSpec,
        liquid: LiquidSpec,
        vol_total: f64,
        cfg: SimConfig,
        sensor: &SensorModel,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        liquid.validate()?;
        let state = init_state(&container, vol_total)?;
        let sensor = Sensor::new(sensor, cfg.dt)?;
        Ok(Self { container, liquid, cfg, vol_total, state, sensor })
    }

    pub fn state(&self) -> &PourState {
        &self.state
    }

    pub fn container(&self) -> &ContainerSpec {
        &self.container
    }

    pub fn liquid(&self) -> &LiquidSpec {
        &self.liquid
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn vol_total(&self) -> f64 {
        self.vol_total
    }

    /// Advances one step under `omega_cmd` (rad/s) and returns the new state.
    pub fn step(&mut self, omega_cmd: f64) -> &PourState {
        let limit = self.cfg.omega_limit;
        let omega = if omega_cmd.is_nan() { 0.0 } else { omega_cmd.clamp(-limit, limit) };
        let dt = self.cfg.dt;

        let mut next = self.state;
        next.theta = (self.state.theta + omega * dt).clamp(0.0, FRAC_PI_2);
        let q = outflow_rate(&self.container, &self.liquid, &next, &self.cfg);
        let moved = (q * dt).min(next.v_in);
        next.v_in -= moved;
        // Derive the poured side from the retained side so the two always
        // sum to vol_total.
        next.v_poured = (self.vol_total - next.v_in).max(self.state.v_poured);
        next.q = q;
        next.t = self.state.t + dt;
        next.sensor = self.sensor.observe(next.v_poured, next.q);
        self.state = next;
        &self.state
    }
}
