//! Three-phase scripted pouring policy.
//!
//! Approach: tilt quickly until just short of the angle where the liquid
//! reaches the rim. Pour: proportional control on the remaining volume as
//! read from the scale. Retract: once the reading is within the lead of the
//! target, rotate back to upright.
//!
//! The same policy produces the synthetic demonstrations (with per-trial
//! randomised style) and serves as the fixed-parameter baseline controller.

use alloc::collections::VecDeque;

use rand::Rng;

use crate::control::Observation;
use crate::geometry::{critical_angle, spill_rate, ContainerSpec};
use crate::sim::{LiquidSpec, SensorModel, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyParams {
    /// Approach velocity (rad/s).
    pub omega_fast: f64,
    /// Proportional gain on the normalised remaining volume (rad/s).
    pub k_p: f64,
    /// Retract speed (rad/s), applied as a negative command.
    pub omega_back: f64,
    /// Pour-phase velocity floor (rad/s).
    pub omega_min: f64,
    /// Pour-phase velocity ceiling (rad/s).
    pub omega_mid: f64,
    /// Approach ends this far (rad) before the critical angle.
    pub approach_margin: f64,
}

pub const OMEGA_FAST_RANGE: (f64, f64) = (0.4, 0.8);
pub const K_P_RANGE: (f64, f64) = (0.5, 1.5);
pub const OMEGA_BACK_RANGE: (f64, f64) = (0.5, 1.0);

impl PolicyParams {
    /// Centre of every randomised range.
    pub fn mid_range() -> Self {
        Self {
            omega_fast: 0.5 * (OMEGA_FAST_RANGE.0 + OMEGA_FAST_RANGE.1),
            k_p: 0.5 * (K_P_RANGE.0 + K_P_RANGE.1),
            omega_back: 0.5 * (OMEGA_BACK_RANGE.0 + OMEGA_BACK_RANGE.1),
            omega_min: 0.02,
            omega_mid: 0.2,
            approach_margin: 0.05,
        }
    }

    /// Human-like variation: approach, gain and retract speed drawn
    /// uniformly from their ranges.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            omega_fast: rng.random_range(OMEGA_FAST_RANGE.0..=OMEGA_FAST_RANGE.1),
            k_p: rng.random_range(K_P_RANGE.0..=K_P_RANGE.1),
            omega_back: rng.random_range(OMEGA_BACK_RANGE.0..=OMEGA_BACK_RANGE.1),
            ..Self::mid_range()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Approach,
    Pour,
    Retract,
    Done,
}

#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    params: PolicyParams,
    container: ContainerSpec,
    vol_2pour: f64,
    start_angle: f64,
    tau: f64,
    impact_gain: f64,
    latency: f64,
    /// Recent flow estimates, newest last, covering the scale latency.
    recent_flow: VecDeque<f64>,
    phase: Phase,
    last_omega: f64,
    /// Outflow estimate (mL/s), a first-order lag of spill rate times the
    /// commanded velocity.
    flow: f64,
}

impl ScriptedPolicy {
    pub fn new(
        params: PolicyParams,
        container: &ContainerSpec,
        liquid: &LiquidSpec,
        vol_total: f64,
        vol_2pour: f64,
        sim: &SimConfig,
        sensor: &SensorModel,
    ) -> Self {
        let critical = critical_angle(container, vol_total.clamp(0.0, container.capacity_upright()))
            .unwrap_or(0.0);
        Self {
            params,
            container: container.clone(),
            vol_2pour,
            start_angle: (critical - params.approach_margin).max(0.0),
            tau: sim.time_constant(liquid),
            impact_gain: sensor.impact_gain,
            latency: sensor.latency,
            recent_flow: VecDeque::new(),
            phase: Phase::Approach,
            last_omega: 0.0,
            flow: 0.0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn flow_estimate(&self) -> f64 {
        self.flow
    }

    /// Correction (mL) from the current reading to the expected final
    /// poured volume: liquid poured during the scale latency plus liquid
    /// still above the rim, minus the impact overshoot in the reading.
    pub fn lead(&self, dt: f64) -> f64 {
        let lagged = self.recent_flow.front().copied().unwrap_or(0.0);
        let unregistered: f64 = self.recent_flow.iter().skip(1).sum::<f64>() * dt;
        unregistered + self.tau * self.flow - self.impact_gain * lagged
    }

    fn update_flow(&mut self, obs: &Observation) {
        let theta = obs.theta.clamp(0.0, core::f64::consts::FRAC_PI_2);
        let drive = if theta >= self.start_angle {
            spill_rate(&self.container, theta).unwrap_or(0.0) * self.last_omega.max(0.0)
        } else {
            0.0
        };
        let gain = (obs.dt / self.tau).min(1.0);
        self.flow += gain * (drive - self.flow);
        let lag = libm::round(self.latency / obs.dt) as usize;
        self.recent_flow.push_back(self.flow);
        while self.recent_flow.len() > lag + 1 {
            self.recent_flow.pop_front();
        }
    }

    pub fn command(&mut self, obs: &Observation) -> f64 {
        let p = self.params;
        self.update_flow(obs);
        // Reading plus what is still on its way.
        let projected = obs.sensor + self.lead(obs.dt);
        if self.phase == Phase::Approach && obs.theta >= self.start_angle {
            self.phase = Phase::Pour;
        }
        if self.phase == Phase::Pour && projected >= self.vol_2pour {
            self.phase = Phase::Retract;
        }
        if self.phase == Phase::Retract && obs.theta <= 0.0 {
            self.phase = Phase::Done;
        }
        let omega = match self.phase {
            Phase::Approach => p.omega_fast,
            Phase::Pour => {
                let remaining = (self.vol_2pour - projected) / self.vol_2pour;
                (p.k_p * remaining).clamp(p.omega_min, p.omega_mid)
            }
            Phase::Retract => -p.omega_back,
            Phase::Done => 0.0,
        };
        self.last_omega = omega;
        omega
    }
}
