use pourbench_core::eval::{default_liquids, plan_container_sweep, plan_viscosity_sweep, run_plan};
use pourbench_core::{
    error_stats, run_closed_loop, BaselineController, ContainerRegistry, ContainerSpec, ControlError, Controller,
    LiquidSpec, LstmController, LstmParams, NormStats, Observation, RegistryEntry, RunConfig, SensorModel, Simulator,
    StopReason, SweepSettings,
};

struct Constant(f64);

impl Controller for Constant {
    fn reset(&mut self, _: &RunConfig) -> Result<(), ControlError> {
        Ok(())
    }

    fn command(&mut self, _: &Observation) -> f64 {
        self.0
    }
}

fn red() -> ContainerSpec {
    ContainerSpec::new("red", 70.0, 107.0).unwrap()
}

fn registry() -> ContainerRegistry {
    let e = |n: &str, d: f64, h: f64, in_training: bool| RegistryEntry {
        container: ContainerSpec::new(n, d, h).unwrap(),
        in_training,
        evaluate: true,
    };
    ContainerRegistry::new(vec![
        e("red", 70.0, 107.0, true),
        e("slender", 55.0, 180.0, false),
        e("squat", 90.0, 100.0, false),
    ])
    .unwrap()
}

#[test]
fn idle_controller_times_out_having_poured_nothing() {
    let mut rc = RunConfig::new(red(), LiquidSpec::water(), 300.0, 150.0);
    rc.timeout = 2.0;
    let r = run_closed_loop(&mut Constant(0.0), &rc).unwrap();
    assert_eq!(r.stop_reason, StopReason::Timeout);
    assert_eq!(r.final_error, 150.0);
    assert!(!r.overpoured);
    assert_eq!(r.steps, rc.max_steps());
}

#[test]
fn non_finite_commands_fault_the_run() {
    let rc = RunConfig::new(red(), LiquidSpec::water(), 300.0, 150.0);
    let r = run_closed_loop(&mut Constant(f64::NAN), &rc).unwrap();
    assert_eq!(r.stop_reason, StopReason::ControllerFault);
    let r = run_closed_loop(&mut Constant(f64::INFINITY), &rc).unwrap();
    assert_eq!(r.stop_reason, StopReason::ControllerFault);
}

#[test]
fn noiseless_baseline_pours_accurately() {
    let mut rc = RunConfig::new(red(), LiquidSpec::water(), 300.0, 150.0);
    rc.sensor = SensorModel { noise_std: 0.0, ..SensorModel::default() };
    let r = run_closed_loop(&mut BaselineController::new(), &rc).unwrap();
    assert_eq!(r.stop_reason, StopReason::Retracted);
    assert!(r.final_error <= 10.0, "{}", r.final_error);
}

#[test]
fn baseline_finishes_every_feasible_water_pour() {
    let settings = SweepSettings { pours: 10, seed: 3, ..SweepSettings::default() };
    let plan = plan_container_sweep(&registry(), &LiquidSpec::water(), &settings).unwrap();
    for job in &plan.jobs {
        let r = run_closed_loop(&mut BaselineController::new(), &job.run).unwrap();
        assert_eq!(r.stop_reason, StopReason::Retracted, "{} #{}", job.run.container.name, job.index);
        assert!(r.steps <= job.run.max_steps() + 1);
    }
}

#[test]
fn results_replay_from_their_trajectory() {
    let mut rc = RunConfig::new(red(), LiquidSpec::oil(), 320.0, 120.0);
    rc.sensor = SensorModel::default().with_seed(77);
    let r = run_closed_loop(&mut BaselineController::new(), &rc).unwrap();
    r.trajectory.validate().unwrap();
    let mut sim = Simulator::new(rc.container.clone(), rc.liquid.clone(), rc.vol_total, rc.sim.clone(), &rc.sensor).unwrap();
    for (t, &w) in r.trajectory.omega.iter().enumerate() {
        let s = *sim.state();
        assert!((s.theta - r.trajectory.theta[t]).abs() <= 1e-9);
        assert_eq!(s.sensor, r.trajectory.vol[t]);
        sim.step(w);
    }
    assert!((sim.state().v_poured - r.v_poured).abs() <= 1e-9);
    assert_eq!(r, run_closed_loop(&mut BaselineController::new(), &rc).unwrap());
}

#[test]
fn invalid_run_configs_are_rejected() {
    let c = red();
    let cap = c.capacity_upright();
    let bad = [
        RunConfig::new(c.clone(), LiquidSpec::water(), 300.0, 300.0),
        RunConfig::new(c.clone(), LiquidSpec::water(), 300.0, 0.0),
        RunConfig::new(c.clone(), LiquidSpec::water(), cap + 1.0, 100.0),
        RunConfig { timeout: 0.0, ..RunConfig::new(c, LiquidSpec::water(), 300.0, 100.0) },
    ];
    for rc in &bad {
        assert!(run_closed_loop(&mut BaselineController::new(), rc).is_err(), "{rc:?}");
    }
}

#[test]
fn zero_weight_network_emits_its_bias() {
    let mut p = LstmParams::zeros(6, 4);
    p.b_out = 0.125;
    let mut ctl = LstmController::new(p, NormStats::identity()).unwrap();
    let mut rc = RunConfig::new(red(), LiquidSpec::water(), 300.0, 150.0);
    rc.timeout = 1.0;
    let r = run_closed_loop(&mut ctl, &rc).unwrap();
    assert!(r.trajectory.omega.iter().all(|&w| w == 0.125));
}

#[test]
fn network_commands_are_clamped_to_the_motor_limit() {
    let mut p = LstmParams::zeros(6, 4);
    p.b_out = 40.0;
    let mut ctl = LstmController::new(p, NormStats::identity()).unwrap();
    let mut rc = RunConfig::new(red(), LiquidSpec::water(), 300.0, 150.0);
    rc.timeout = 0.5;
    let r = run_closed_loop(&mut ctl, &rc).unwrap();
    assert!(r.trajectory.omega.iter().all(|&w| w == rc.sim.omega_limit));
}

#[test]
fn network_state_is_fresh_for_every_run() {
    let p = LstmParams::init(5, 6, 8).unwrap();
    let norm = NormStats { mean: [300.0, 150.0, 70.0, 107.0, 0.5, 100.0], std: [100.0, 50.0, 20.0, 30.0, 0.4, 80.0] };
    let mut rc = RunConfig::new(red(), LiquidSpec::water(), 300.0, 150.0);
    rc.timeout = 2.0;
    let mut reused = LstmController::new(p.clone(), norm.clone()).unwrap();
    let first = run_closed_loop(&mut reused, &rc).unwrap();
    let second = run_closed_loop(&mut reused, &rc).unwrap();
    assert_eq!(first, second);
    let fresh = run_closed_loop(&mut LstmController::new(p, norm).unwrap(), &rc).unwrap();
    assert_eq!(first, fresh);
}

#[test]
fn sweeps_share_targets_across_liquids_and_controllers() {
    let settings = SweepSettings { pours: 6, seed: 12, ..SweepSettings::default() };
    let plan = plan_viscosity_sweep(&registry(), "red", &default_liquids(), &settings).unwrap();
    assert_eq!(plan.conditions.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), ["water", "oil", "syrup"]);
    assert_eq!(plan.conditions.iter().map(|c| c.liquid.viscosity).collect::<Vec<_>>(), [1.0, 65.0, 2000.0]);
    let targets = |k: usize| {
        plan.jobs.iter().filter(|j| j.condition == k).map(|j| (j.run.vol_total, j.run.vol_2pour, j.run.sensor.seed)).collect::<Vec<_>>()
    };
    assert_eq!(targets(0), targets(1));
    assert_eq!(targets(0), targets(2));

    let sweep = plan_container_sweep(&registry(), &LiquidSpec::water(), &settings).unwrap();
    let red_jobs: Vec<_> = sweep.jobs.iter().filter(|j| j.run.container.name == "red").map(|j| j.run.clone()).collect();
    let water_jobs: Vec<_> = plan.jobs.iter().filter(|j| j.condition == 0).map(|j| j.run.clone()).collect();
    assert_eq!(red_jobs, water_jobs);
}

#[test]
fn sweep_reports_are_deterministic_and_summarised() {
    let settings = SweepSettings { pours: 5, seed: 1, ..SweepSettings::default() };
    let plan = plan_container_sweep(&registry(), &LiquidSpec::water(), &settings).unwrap();
    let a = run_plan(&plan, BaselineController::new).unwrap();
    let b = run_plan(&plan, BaselineController::new).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 3);
    for w in a.rows.windows(2) {
        assert!(w[0].stats.mu_e <= w[1].stats.mu_e);
    }
    for row in &a.rows {
        let s = error_stats(&row.errors()).unwrap();
        assert_eq!(s, row.stats);
        assert_eq!(row.pours.len(), 5);
    }
}

#[test]
fn error_stats_use_the_sample_deviation() {
    let s = error_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((s.mu_e - 2.5).abs() < 1e-15);
    assert!((s.sigma_e - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(error_stats(&[7.0]).unwrap().sigma_e, 0.0);
    assert!(error_stats(&[]).is_err());
}
