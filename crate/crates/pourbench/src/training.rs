//! Dataset-to-checkpoint training pipeline.

use pourbench_core::rnn::{train, EpochLoss, RnnError, TrainConfig, INPUT_DIM};
use pourbench_core::{compute_norm_stats, LstmParams, Sequence, Trial};

use crate::checkpoint::{CheckpointMetadata, ModelCheckpoint};
use crate::parallel::ParallelGradients;
use crate::trials::generator_version;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("cannot compute normalisation: {0}")]
    Norm(#[from] pourbench_core::DataError),
    #[error(transparent)]
    Rnn(#[from] RnnError),
}

/// Normalises `trials` with their own statistics and fits a fresh network.
/// Gradients are computed in parallel and reduced in a fixed order, so the
/// checkpoint depends only on `trials` and `cfg`.
pub fn train_checkpoint(
    trials: &[Trial],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLoss),
) -> Result<ModelCheckpoint, TrainError> {
    let norm = compute_norm_stats(trials)?;
    let seqs: Vec<Sequence> = trials.iter().map(|t| t.to_sequence(&norm)).collect();
    let init = LstmParams::init(cfg.seed, INPUT_DIM, cfg.hidden)?;
    let out = train(&seqs, init, cfg, &ParallelGradients, on_epoch)?;
    Ok(ModelCheckpoint {
        params: out.params,
        norm,
        metadata: CheckpointMetadata {
            seed: cfg.seed,
            epochs: cfg.epochs,
            best_epoch: out.best_epoch,
            trials: trials.len(),
            train: Some(cfg.clone()),
            losses: out.history,
            generator_version: generator_version(),
        },
    })
}
