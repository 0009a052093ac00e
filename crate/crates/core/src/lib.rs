//! Closed-loop accurate pouring: a quasi-static pouring simulator, a
//! peephole LSTM angular-velocity generator trained by behavioural cloning,
//! and the evaluation protocol used to score it.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the command
//! line and the interactive session server live in the `pourbench` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod control;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod policy;
pub mod rnn;
pub mod seed;
pub mod sim;

pub use control::{
    run_closed_loop, BaselineController, ControlError, Controller, LstmController, Observation, PourRun,
    RunConfig, RunResult, StopReason,
};
pub use data::{compute_norm_stats, derive_omega, generate_dataset, generate_demo, DataError, DemoScenario, NormStats, Trial};
pub use eval::{error_stats, ContainerRegistry, ErrorStats, EvalError, RegistryEntry, SweepReport, SweepSettings};
pub use geometry::{capacity_upright, critical_angle, tilted_capacity, ContainerSpec, GeometryError};
pub use rnn::{LstmParams, LstmState, RnnError, Sequence};
pub use sim::{LiquidSpec, PourState, SensorModel, SimConfig, SimError, Simulator};
