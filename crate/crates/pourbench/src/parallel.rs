//! Data-parallel versions of the core loops.
//!
//! Work is fanned out with rayon but results are always combined in input
//! order, so every function here returns exactly what its serial
//! counterpart returns.

use pourbench_core::data::dataset_scenario;
use pourbench_core::eval::{assemble, execute_job, EvalError, SweepPlan, SweepReport};
use pourbench_core::rnn::{accumulate, sequence_gradient, GradientEngine, Gradients, RnnError};
use pourbench_core::{generate_demo, ContainerSpec, Controller, DataError, LstmParams, SensorModel, Sequence, SimConfig, Trial};
use rayon::prelude::*;

/// Per-sequence gradients in parallel, summed in batch order.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParallelGradients;

impl GradientEngine for ParallelGradients {
    fn batch_gradient(&self, p: &LstmParams, batch: &[&Sequence]) -> Result<(f64, Gradients), RnnError> {
        if batch.is_empty() {
            return Err(RnnError::EmptyBatch);
        }
        let total: usize = batch.iter().map(|s| s.len()).sum();
        if total == 0 {
            return Err(RnnError::EmptySequence);
        }
        let scale = 1.0 / total as f64;
        let parts: Vec<(f64, Gradients)> =
            batch.par_iter().map(|s| sequence_gradient(p, s, scale)).collect::<Result<_, _>>()?;
        let mut grad = LstmParams::zeros(p.input_dim, p.hidden);
        let mut sse = 0.0;
        for (s, g) in &parts {
            sse += s;
            accumulate(&mut grad, g);
        }
        Ok((sse * scale, grad))
    }
}

pub fn generate_dataset_parallel(
    n: usize,
    containers: &[ContainerSpec],
    seed: u64,
    sim: &SimConfig,
    sensor: &SensorModel,
) -> Result<Vec<Trial>, DataError> {
    (0..n)
        .into_par_iter()
        .map(|k| generate_demo(&dataset_scenario(containers, seed, k)?, sim, sensor))
        .collect()
}

/// Runs every job of `plan` with its own controller from `make`.
pub fn run_plan_parallel<C: Controller>(plan: &SweepPlan, make: impl Fn() -> C + Sync) -> Result<SweepReport, EvalError> {
    let outcomes = plan.jobs.par_iter().map(|job| execute_job(job, &mut make())).collect::<Result<Vec<_>, _>>()?;
    assemble(plan, &outcomes)
}

/// Runs `f` on a pool of `jobs` threads (0 = one per core).
pub fn with_threads<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
