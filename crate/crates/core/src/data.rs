//! Demonstration trials: format, synthetic generation and normalisation.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control::Observation;
use crate::geometry::ContainerSpec;
use crate::policy::{Phase, PolicyParams, ScriptedPolicy};
use crate::rnn::{Sequence, INPUT_DIM};
use crate::seed::derive_seed;
use crate::sim::{LiquidSpec, SensorModel, SimConfig, SimError, Simulator};

pub const STD_FLOOR: f64 = 1e-8;
/// Simulated seconds a scripted demonstration may take.
pub const DEMO_TIMEOUT: f64 = 30.0;
/// Smallest requested pour (mL).
pub const MIN_POUR: f64 = 40.0;
/// Volume (mL) always left behind in the source container.
pub const MIN_REMAINDER: f64 = 20.0;
/// Fill range as fractions of the upright capacity.
pub const FILL_RANGE: (f64, f64) = (0.3, 0.9);
pub const DEFAULT_TRIALS: usize = 284;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("trial invariant violated: {0}")]
    Invariant(&'static str),
    #[error("sequence needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("scripted policy timed out after {timeout} s on container `{container}` (vol_total={vol_total}, vol_2pour={vol_2pour})")]
    PolicyTimeout { container: String, vol_total: f64, vol_2pour: f64, timeout: f64 },
    #[error("no containers to sample from")]
    EmptyRegistry,
    #[error("container `{0}` is too small for the sampling ranges")]
    InfeasibleContainer(String),
    #[error("no trials")]
    Empty,
}

/// One pouring demonstration. Sequences are sampled every `dt` seconds;
/// `omega[t]` is the command issued after observing `theta[t]` and `vol[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub vol_total: f64,
    pub vol_2pour: f64,
    pub d: f64,
    pub h: f64,
    pub dt: f64,
    pub theta: Vec<f64>,
    pub vol: Vec<f64>,
    pub omega: Vec<f64>,
}

impl Trial {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        use DataError::Invariant;
        if self.theta.len() != self.vol.len() || self.theta.len() != self.omega.len() {
            return Err(Invariant("theta, vol and omega must have equal length"));
        }
        if self.theta.len() < 2 {
            return Err(Invariant("sequences must have at least 2 samples"));
        }
        if !(self.vol_2pour > 0.0 && self.vol_2pour <= self.vol_total) {
            return Err(Invariant("0 < vol_2pour <= vol_total"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Invariant("dt > 0"));
        }
        if !(self.d.is_finite() && self.d > 0.0 && self.h.is_finite() && self.h > 0.0) {
            return Err(Invariant("d > 0 and h > 0"));
        }
        if !self.theta.iter().all(|t| (0.0..=FRAC_PI_2).contains(t)) {
            return Err(Invariant("theta entries in [0, pi/2]"));
        }
        if !self.vol.iter().chain(&self.omega).all(|v| v.is_finite()) {
            return Err(Invariant("vol and omega entries finite"));
        }
        Ok(())
    }

    /// Raw features at step `t`: vol_total, vol_2pour, d, h, theta, vol.
    pub fn features(&self, t: usize) -> [f64; INPUT_DIM] {
        [self.vol_total, self.vol_2pour, self.d, self.h, self.theta[t], self.vol[t]]
    }

    /// Normalised inputs with omega as the supervision target.
    pub fn to_sequence(&self, norm: &NormStats) -> Sequence {
        let mut inputs = Vec::with_capacity(self.len() * INPUT_DIM);
        for t in 0..self.len() {
            inputs.extend_from_slice(&norm.normalize(&self.features(t)));
        }
        Sequence { inputs, targets: self.omega.clone() }
    }
}

/// Finite-difference angular velocity; the last sample repeats the one
/// before it.
pub fn derive_omega(theta: &[f64], dt: f64) -> Result<Vec<f64>, DataError> {
    if theta.len() < 2 {
        return Err(DataError::TooShort(theta.len()));
    }
    let mut omega: Vec<f64> = theta.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    omega.push(omega[omega.len() - 1]);
    Ok(omega)
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormStats {
    pub mean: [f64; INPUT_DIM],
    pub std: [f64; INPUT_DIM],
}

impl NormStats {
    pub fn identity() -> Self {
        Self { mean: [0.0; INPUT_DIM], std: [1.0; INPUT_DIM] }
    }

    pub fn normalize(&self, x: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        core::array::from_fn(|k| (x[k] - self.mean[k]) / self.std[k])
    }

    pub fn denormalize(&self, z: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        core::array::from_fn(|k| z[k] * self.std[k] + self.mean[k])
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.mean.iter().all(|m| m.is_finite()) && self.std.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(DataError::Invariant("norm std entries must be positive and finite"))
        }
    }
}

/// Pooled mean and population standard deviation over every step of every
/// trial. Two passes, with per-trial partial sums so the result does not
/// depend on trial order beyond rounding.
pub fn compute_norm_stats(trials: &[Trial]) -> Result<NormStats, DataError> {
    let count: usize = trials.iter().map(Trial::len).sum();
    if count == 0 {
        return Err(DataError::Empty);
    }
    let n = count as f64;
    let mut mean = [0.0; INPUT_DIM];
    for tr in trials {
        let len = tr.len() as f64;
        mean[0] += tr.vol_total * len;
        mean[1] += tr.vol_2pour * len;
        mean[2] += tr.d * len;
        mean[3] += tr.h * len;
        mean[4] += tr.theta.iter().sum::<f64>();
        mean[5] += tr.vol.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; INPUT_DIM];
    for tr in trials {
        let len = tr.len() as f64;
        let sq = |v: f64, m: f64| (v - m) * (v - m);
        var[0] += sq(tr.vol_total, mean[0]) * len;
        var[1] += sq(tr.vol_2pour, mean[1]) * len;
        var[2] += sq(tr.d, mean[2]) * len;
        var[3] += sq(tr.h, mean[3]) * len;
        var[4] += tr.theta.iter().map(|&v| sq(v, mean[4])).sum::<f64>();
        var[5] += tr.vol.iter().map(|&v| sq(v, mean[5])).sum::<f64>();
    }
    let std = core::array::from_fn(|k| libm::sqrt(var[k] / n).max(STD_FLOOR));
    Ok(NormStats { mean, std })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoScenario {
    pub container: ContainerSpec,
    pub liquid: LiquidSpec,
    pub vol_total: f64,
    pub vol_2pour: f64,
    /// Drives the demonstrator's style and its scale noise.
    pub style_seed: u64,
}

impl DemoScenario {
    pub fn validate(&self) -> Result<(), DataError> {
        let capacity = self.container.capacity_upright();
        if !(self.vol_total > self.vol_2pour && self.vol_2pour > 0.0) {
            return Err(DataError::Invariant("vol_total > vol_2pour > 0"));
        }
        if self.vol_total > capacity {
            return Err(SimError::VolumeExceedsCapacity { vol_total: self.vol_total, capacity }.into());
        }
        Ok(())
    }

    /// Style parameters and scale seed derived from the style seed.
    pub fn style(&self) -> (PolicyParams, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.style_seed, &[0]));
        (PolicyParams::sample(&mut rng), derive_seed(self.style_seed, &[1]))
    }
}

/// Runs the scripted demonstrator on `sc` and records what it saw and did.
pub fn generate_demo(sc: &DemoScenario, sim: &SimConfig, sensor: &SensorModel) -> Result<Trial, DataError> {
    sc.validate()?;
    let (params, sensor_seed) = sc.style();
    let sensor = sensor.with_seed(sensor_seed);
    let mut simulator = Simulator::new(sc.container.clone(), sc.liquid.clone(), sc.vol_total, sim.clone(), &sensor)?;
    let mut policy = ScriptedPolicy::new(params, &sc.container, &sc.liquid, sc.vol_total, sc.vol_2pour, sim, &sensor);

    let max_steps = libm::ceil(DEMO_TIMEOUT / sim.dt) as usize;
    let mut trial = Trial {
        vol_total: sc.vol_total,
        vol_2pour: sc.vol_2pour,
        d: sc.container.d,
        h: sc.container.h,
        dt: sim.dt,
        theta: Vec::new(),
        vol: Vec::new(),
        omega: Vec::new(),
    };
    for _ in 0..max_steps {
        let s = *simulator.state();
        let obs = Observation {
            t: s.t,
            dt: sim.dt,
            theta: s.theta,
            sensor: s.sensor,
            vol_total: sc.vol_total,
            vol_2pour: sc.vol_2pour,
            d: sc.container.d,
            h: sc.container.h,
        };
        let omega = policy.command(&obs);
        if policy.phase() == Phase::Done && s.q == 0.0 {
            return Ok(trial);
        }
        trial.theta.push(s.theta);
        trial.vol.push(s.sensor);
        trial.omega.push(omega);
        simulator.step(omega);
    }
    Err(DataError::PolicyTimeout {
        container: sc.container.name.clone(),
        vol_total: sc.vol_total,
        vol_2pour: sc.vol_2pour,
        timeout: DEMO_TIMEOUT,
    })
}

/// Draws a feasible (vol_total, vol_2pour) pair for `c`.
pub fn sample_targets<R: Rng + ?Sized>(c: &ContainerSpec, rng: &mut R) -> Result<(f64, f64), DataError> {
    let capacity = c.capacity_upright();
    let lo = FILL_RANGE.0 * capacity;
    let hi = FILL_RANGE.1 * capacity;
    if hi - MIN_REMAINDER <= MIN_POUR {
        return Err(DataError::InfeasibleContainer(c.name.clone()));
    }
    // The lower fill bound is raised when needed so a pour of MIN_POUR fits.
    let lo = lo.max(MIN_POUR + MIN_REMAINDER);
    let vol_total = rng.random_range(lo..=hi);
    let vol_2pour = rng.random_range(MIN_POUR..=vol_total - MIN_REMAINDER);
    Ok((vol_total, vol_2pour))
}

/// Scenario `index` of a dataset seeded with `seed`.
pub fn dataset_scenario(containers: &[ContainerSpec], seed: u64, index: usize) -> Result<DemoScenario, DataError> {
    if containers.is_empty() {
        return Err(DataError::EmptyRegistry);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[index as u64]));
    let container = containers[rng.random_range(0..containers.len())].clone();
    let (vol_total, vol_2pour) = sample_targets(&container, &mut rng)?;
    Ok(DemoScenario {
        container,
        liquid: LiquidSpec::water(),
        vol_total,
        vol_2pour,
        style_seed: derive_seed(seed, &[index as u64, 1]),
    })
}

/// `n` water demonstrations over `containers`. Each trial depends only on
/// `(seed, index)`, so callers may generate indices in any order.
pub fn generate_dataset(
    n: usize,
    containers: &[ContainerSpec],
    seed: u64,
    sim: &SimConfig,
    sensor: &SensorModel,
) -> Result<Vec<Trial>, DataError> {
    (0..n).map(|k| generate_demo(&dataset_scenario(containers, seed, k)?, sim, sensor)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn red() -> ContainerSpec {
        ContainerSpec::new("red", 70.0, 107.0).unwrap()
    }

    fn trial(theta: Vec<f64>) -> Trial {
        let n = theta.len();
        Trial {
            vol_total: 300.0,
            vol_2pour: 100.0,
            d: 70.0,
            h: 107.0,
            dt: 0.1,
            theta,
            vol: vec![0.0; n],
            omega: vec![0.0; n],
        }
    }

    #[test]
    fn derive_omega_examples() {
        let w = derive_omega(&[0.0, 0.1, 0.2], 0.1).unwrap();
        for v in &w {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(derive_omega(&[0.3; 4], 0.1).unwrap(), vec![0.0; 4]);
        let w = derive_omega(&[0.0, 0.2, 0.2], 0.1).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-12 && w[1] == 0.0 && w[2] == 0.0);
        assert_eq!(derive_omega(&[0.0], 0.1).unwrap_err(), DataError::TooShort(1));
    }

    #[test]
    fn trial_validation_names_the_invariant() {
        let mut t = trial(vec![0.0, 0.1]);
        t.validate().unwrap();
        t.vol_2pour = 400.0;
        assert_eq!(t.validate().unwrap_err(), DataError::Invariant("0 < vol_2pour <= vol_total"));
        let mut t = trial(vec![0.0, 2.0]);
        assert!(t.validate().is_err());
        t.theta = vec![0.0];
        assert!(t.validate().is_err());
    }

    #[test]
    fn norm_stats_of_constant_feature() {
        let t = trial(vec![0.2; 5]);
        let s = compute_norm_stats(&[t]).unwrap();
        assert_eq!(s.mean[0], 300.0);
        assert_eq!(s.std[0], STD_FLOOR);
        assert!((s.mean[4] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn normalize_round_trip() {
        let s = NormStats { mean: [1.0, -2.0, 3.0, 0.5, 0.0, 7.0], std: [0.5, 2.0, 1e-8, 3.0, 1.0, 10.0] };
        let x = [3.0, 1.5, 3.0000001, -4.0, 0.7, 123.0];
        let back = s.denormalize(&s.normalize(&x));
        for k in 0..INPUT_DIM {
            assert!((back[k] - x[k]).abs() <= 1e-12 * (1.0 + x[k].abs()));
        }
    }

    #[test]
    fn demo_without_noise_is_accurate_and_valid() {
        let sensor = SensorModel { noise_std: 0.0, ..SensorModel::default() };
        for (k, (v, p)) in [(300.0, 150.0), (150.0, 40.0), (370.0, 330.0)].into_iter().enumerate() {
            let sc = DemoScenario { container: red(), liquid: LiquidSpec::water(), vol_total: v, vol_2pour: p, style_seed: k as u64 };
            let tr = generate_demo(&sc, &SimConfig::default(), &sensor).unwrap();
            tr.validate().unwrap();
            // Replay the commands to find the true poured volume.
            let mut sim = Simulator::new(red(), LiquidSpec::water(), v, SimConfig::default(), &sensor).unwrap();
            for &w in &tr.omega {
                sim.step(w);
            }
            let err = (sim.state().v_poured - p).abs();
            assert!(err <= 15.0, "scenario {k}: error {err}");
        }
    }

    #[test]
    fn demo_is_deterministic() {
        let sc = DemoScenario { container: red(), liquid: LiquidSpec::water(), vol_total: 250.0, vol_2pour: 90.0, style_seed: 4 };
        let a = generate_demo(&sc, &SimConfig::default(), &SensorModel::default()).unwrap();
        let b = generate_demo(&sc, &SimConfig::default(), &SensorModel::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_targets_respect_ranges() {
        let c = red();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let (v, p) = sample_targets(&c, &mut rng).unwrap();
            assert!(v >= 0.3 * c.capacity_upright() && v <= 0.9 * c.capacity_upright());
            assert!(p >= 40.0 && p <= v - 20.0);
        }
        let tiny = ContainerSpec::new("tiny", 30.0, 50.0).unwrap();
        assert!(matches!(sample_targets(&tiny, &mut rng), Err(DataError::InfeasibleContainer(_))));
    }

    #[test]
    fn dataset_requires_containers() {
        assert_eq!(
            generate_dataset(3, &[], 0, &SimConfig::default(), &SensorModel::default()).unwrap_err(),
            DataError::EmptyRegistry
        );
    }
}
