//! Mini-batch training with Adam and global-norm clipping.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bptt::{backward, Gradients};
use super::{dataset_loss, LstmParams, RnnError, Sequence};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Sequences per mini-batch.
    pub batch: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub val_frac: f64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, epochs: 100, batch: 8, clip_norm: 5.0, seed: 0, val_frac: 0.1, hidden: super::HIDDEN }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: LstmParams,
    pub best_epoch: usize,
    /// Entry 0 holds the losses of the initial parameters.
    pub history: Vec<EpochLoss>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainOutcome {
    pub fn initial_val_mse(&self) -> f64 {
        self.history[0].val_mse
    }

    pub fn best_val_mse(&self) -> f64 {
        self.history[self.best_epoch].val_mse
    }
}

/// Computes the mean-loss gradient of a mini-batch.
///
/// Implementations must sum per-sequence contributions in batch order so
/// results do not depend on how the work was scheduled.
pub trait GradientEngine {
    fn batch_gradient(&self, p: &LstmParams, batch: &[&Sequence]) -> Result<(f64, Gradients), RnnError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SerialGradients;

impl GradientEngine for SerialGradients {
    fn batch_gradient(&self, p: &LstmParams, batch: &[&Sequence]) -> Result<(f64, Gradients), RnnError> {
        backward(p, batch)
    }
}

/// Adam optimiser state.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: LstmParams,
    v: LstmParams,
}

impl Adam {
    pub fn new(p: &LstmParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: LstmParams::zeros(p.input_dim, p.hidden),
            v: LstmParams::zeros(p.input_dim, p.hidden),
        }
    }

    pub fn update(&mut self, p: &mut LstmParams, g: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let params = p.tensors_mut();
        let grads = g.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((( _, w), (_, gr)), (_, m)), (_, v)) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            for k in 0..w.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * gr[k];
                v[k] = b2 * v[k] + (1.0 - b2) * gr[k] * gr[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                w[k] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
    }
}

pub fn global_norm(g: &Gradients) -> f64 {
    libm::sqrt(g.tensors().iter().flat_map(|(_, t)| t.iter()).map(|x| x * x).sum::<f64>())
}

/// Rescales `g` so its global L2 norm is at most `max_norm`.
pub fn clip_global_norm(g: &mut Gradients, max_norm: f64) -> f64 {
    let norm = global_norm(g);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, t) in g.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Seeded train/validation split; at least one sequence lands on each side.
pub fn split_indices(n: usize, val_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = (libm::round(n as f64 * val_frac) as usize).clamp(1, n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Fits `init` to `data`, keeping the parameters of the best validation
/// epoch. `on_epoch` sees every history entry as it is produced.
pub fn train<E: GradientEngine>(
    data: &[Sequence],
    init: LstmParams,
    cfg: &TrainConfig,
    engine: &E,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome, RnnError> {
    if data.len() < 10 {
        return Err(RnnError::DatasetTooSmall(data.len()));
    }
    init.validate()?;
    for seq in data {
        seq.check(init.input_dim)?;
    }
    let (train_idx, val_idx) = split_indices(data.len(), cfg.val_frac, cfg.seed);
    let train_set: Vec<&Sequence> = train_idx.iter().map(|&i| &data[i]).collect();
    let val_set: Vec<&Sequence> = val_idx.iter().map(|&i| &data[i]).collect();

    let mut params = init;
    let initial = EpochLoss {
        epoch: 0,
        train_mse: dataset_loss(&params, &train_set)?,
        val_mse: dataset_loss(&params, &val_set)?,
    };
    on_epoch(&initial);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(initial);
    let mut best = (0usize, initial.val_mse, params.clone());

    let mut adam = Adam::new(&params, cfg.lr);
    // Separate stream from the split so changing epochs never reshuffles it.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_ba7c_4e5);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batch = cfg.batch.max(1);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(batch) {
            let mb: Vec<&Sequence> = chunk.iter().map(|&i| train_set[i]).collect();
            let n: usize = mb.iter().map(|s| s.len()).sum();
            let (loss, mut g) = engine.batch_gradient(&params, &mb)?;
            clip_global_norm(&mut g, cfg.clip_norm);
            adam.update(&mut params, &g);
            sse += loss * n as f64;
            steps += n;
        }
        let entry = EpochLoss { epoch, train_mse: sse / steps as f64, val_mse: dataset_loss(&params, &val_set)? };
        on_epoch(&entry);
        history.push(entry);
        if entry.val_mse < best.1 {
            best = (epoch, entry.val_mse, params.clone());
        }
    }

    Ok(TrainOutcome { params: best.2, best_epoch: best.0, history, train_indices: train_idx, val_indices: val_idx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy_data(n: usize) -> Vec<Sequence> {
        // Target is a running comparison of the first feature with zero.
        (0..n)
            .map(|k| {
                let len = 12;
                let mut inputs = vec![0.0; len * 6];
                let mut targets = vec![0.0; len];
                for t in 0..len {
                    let x = libm::sin(0.7 * (t + k) as f64);
                    inputs[t * 6] = x;
                    inputs[t * 6 + 1] = (k % 3) as f64 - 1.0;
                    targets[t] = 0.5 * x + 0.1 * inputs[t * 6 + 1];
                }
                Sequence { inputs, targets }
            })
            .collect()
    }

    #[test]
    fn too_small_dataset_is_rejected() {
        let data = toy_data(9);
        let init = LstmParams::init(0, 6, 4).unwrap();
        let err = train(&data, init, &TrainConfig::default(), &SerialGradients, |_| {}).unwrap_err();
        assert_eq!(err, RnnError::DatasetTooSmall(9));
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let data = toy_data(20);
        let init = LstmParams::init(4, 6, 4).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train(&data, init.clone(), &cfg, &SerialGradients, |_| {}).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.history.len(), 1);
        assert!(out.initial_val_mse() > 0.0);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = toy_data(30);
        let cfg = TrainConfig { epochs: 40, lr: 1e-2, batch: 4, seed: 3, ..TrainConfig::default() };
        let run = || train(&data, LstmParams::init(1, 6, 4).unwrap(), &cfg, &SerialGradients, |_| {}).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.best_val_mse() < 0.2 * a.initial_val_mse(), "{:?}", a.history.last());
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (t, v) = split_indices(284, 0.1, 5);
        assert_eq!(v.len(), 28);
        assert_eq!(t.len(), 256);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..284).collect::<Vec<_>>());
        assert_eq!(split_indices(284, 0.1, 5), (t, v));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = LstmParams::zeros(6, 2);
        g.b_out = 30.0;
        g.w_out[0] = 40.0;
        assert_eq!(clip_global_norm(&mut g, 5.0), 50.0);
        assert!((global_norm(&g) - 5.0).abs() < 1e-12);
    }
}
