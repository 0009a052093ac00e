//! File formats, parallel runners, the `pourbench` command line and the
//! interactive session server built on [`pourbench_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod format;
pub mod parallel;
pub mod registry;
pub mod report;
pub mod server;
pub mod trace;
pub mod training;
pub mod trials;

pub use checkpoint::{CheckpointMetadata, ModelCheckpoint};
pub use format::{FormatError, FORMAT_VERSION};
pub use pourbench_core as core;
