//! Peephole LSTM velocity generator.
//!
//! One recurrent layer maps the six per-step features to an angular
//! velocity through a linear readout of the hidden state. Input and forget
//! gates peek at the previous cell state, the output gate at the new one.

mod bptt;
pub mod gradcheck;
mod train;

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use bptt::{accumulate, backward, sequence_gradient, Gradients};
pub use train::{clip_global_norm, global_norm, split_indices, train, Adam, EpochLoss, GradientEngine, SerialGradients, TrainConfig, TrainOutcome};

/// Number of input features per step.
pub const INPUT_DIM: usize = 6;
/// Hidden width of the shipped model.
pub const HIDDEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RnnError {
    #[error("expected an input of length {expected}, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("sequence is empty")]
    EmptySequence,
    #[error("prediction and target lengths differ ({pred} vs {target})")]
    LengthMismatch { pred: usize, target: usize },
    #[error("tensor `{name}` has {got} entries, expected {expected}")]
    Shape { name: &'static str, expected: usize, got: usize },
    #[error("dimensions must be at least 1")]
    ZeroDim,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset has {0} sequences, at least 10 are required")]
    DatasetTooSmall(usize),
}

/// Gate order used for every per-gate tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];

    pub fn suffix(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Cell => "c",
            Gate::Output => "o",
        }
    }
}

/// Names of the parameter tensors, in [`LstmParams::tensors`] order.
pub const TENSOR_NAMES: [&str; 15] = [
    "w_xi", "w_xf", "w_xc", "w_xo", "w_hi", "w_hf", "w_hc", "w_ho", "b_i", "b_f", "b_c", "b_o", "w_ci", "w_cf", "w_co",
];

/// Weights of a single-layer peephole LSTM with scalar readout.
///
/// Matrices are row-major with one row per hidden unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    /// Input weights per gate, `hidden x input_dim`.
    pub w_x: [Vec<f64>; 4],
    /// Recurrent weights per gate, `hidden x hidden`.
    pub w_h: [Vec<f64>; 4],
    pub b: [Vec<f64>; 4],
    pub w_ci: Vec<f64>,
    pub w_cf: Vec<f64>,
    pub w_co: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let mat_x = vec![0.0; hidden * input_dim];
        let mat_h = vec![0.0; hidden * hidden];
        let v = vec![0.0; hidden];
        Self {
            input_dim,
            hidden,
            w_x: [mat_x.clone(), mat_x.clone(), mat_x.clone(), mat_x],
            w_h: [mat_h.clone(), mat_h.clone(), mat_h.clone(), mat_h],
            b: [v.clone(), v.clone(), v.clone(), v.clone()],
            w_ci: v.clone(),
            w_cf: v.clone(),
            w_co: v.clone(),
            w_out: v,
            b_out: 0.0,
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialisation with the
    /// forget bias set to one.
    pub fn init(seed: u64, input_dim: usize, hidden: usize) -> Result<Self, RnnError> {
        if input_dim == 0 || hidden == 0 {
            return Err(RnnError::ZeroDim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(input_dim, hidden);
        // Gate pre-activations see the input, hidden state and cell state.
        let gate_bound = 1.0 / libm::sqrt((input_dim + hidden) as f64);
        let out_bound = 1.0 / libm::sqrt(hidden as f64);
        let mut fill = |xs: &mut [f64], bound: f64| {
            for x in xs.iter_mut() {
                *x = rng.random_range(-bound..=bound);
            }
        };
        for g in 0..4 {
            fill(&mut p.w_x[g], gate_bound);
            fill(&mut p.w_h[g], gate_bound);
        }
        fill(&mut p.w_ci, gate_bound);
        fill(&mut p.w_cf, gate_bound);
        fill(&mut p.w_co, gate_bound);
        fill(&mut p.w_out, out_bound);
        p.b[Gate::Forget as usize].iter_mut().for_each(|b| *b = 1.0);
        Ok(p)
    }

    /// All tensors in [`TENSOR_NAMES`] order followed by `w_out` and `b_out`.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 17] {
        [
            ("w_xi", &self.w_x[0]),
            ("w_xf", &self.w_x[1]),
            ("w_xc", &self.w_x[2]),
            ("w_xo", &self.w_x[3]),
            ("w_hi", &self.w_h[0]),
            ("w_hf", &self.w_h[1]),
            ("w_hc", &self.w_h[2]),
            ("w_ho", &self.w_h[3]),
            ("b_i", &self.b[0]),
            ("b_f", &self.b[1]),
            ("b_c", &self.b[2]),
            ("b_o", &self.b[3]),
            ("w_ci", &self.w_ci),
            ("w_cf", &self.w_cf),
            ("w_co", &self.w_co),
            ("w_out", &self.w_out),
            ("b_out", core::slice::from_ref(&self.b_out)),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 17] {
        let [wxi, wxf, wxc, wxo] = &mut self.w_x;
        let [whi, whf, whc, who] = &mut self.w_h;
        let [bi, bf, bc, bo] = &mut self.b;
        [
            ("w_xi", wxi),
            ("w_xf", wxf),
            ("w_xc", wxc),
            ("w_xo", wxo),
            ("w_hi", whi),
            ("w_hf", whf),
            ("w_hc", whc),
            ("w_ho", who),
            ("b_i", bi),
            ("b_f", bf),
            ("b_c", bc),
            ("b_o", bo),
            ("w_ci", &mut self.w_ci),
            ("w_cf", &mut self.w_cf),
            ("w_co", &mut self.w_co),
            ("w_out", &mut self.w_out),
            ("b_out", core::slice::from_mut(&mut self.b_out)),
        ]
    }

    pub fn expected_len(&self, name: &str) -> usize {
        match name {
            "w_xi" | "w_xf" | "w_xc" | "w_xo" => self.hidden * self.input_dim,
            "w_hi" | "w_hf" | "w_hc" | "w_ho" => self.hidden * self.hidden,
            "b_out" => 1,
            _ => self.hidden,
        }
    }

    /// Checks every tensor against the declared dimensions.
    pub fn validate(&self) -> Result<(), RnnError> {
        if self.input_dim == 0 || self.hidden == 0 {
            return Err(RnnError::ZeroDim);
        }
        for (name, t) in self.tensors() {
            let expected = self.expected_len(name);
            if t.len() != expected {
                return Err(RnnError::Shape { name, expected, got: t.len() });
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// `out[r] = sum_k m[r, k] * v[k]` accumulated into `out`.
#[inline]
pub(crate) fn matvec_acc(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Intermediate values of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn step_cached(p: &LstmParams, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> (StepCache, f64) {
    let n = p.hidden;
    let mut pre: [Vec<f64>; 4] = [p.b[0].clone(), p.b[1].clone(), p.b[2].clone(), p.b[3].clone()];
    for g in 0..4 {
        matvec_acc(&p.w_x[g], x, &mut pre[g]);
        matvec_acc(&p.w_h[g], h_prev, &mut pre[g]);
    }
    let [a_i, a_f, a_g, a_o] = pre;
    let mut i = a_i;
    let mut f = a_f;
    let mut g = a_g;
    for k in 0..n {
        i[k] = sigmoid(i[k] + p.w_ci[k] * c_prev[k]);
        f[k] = sigmoid(f[k] + p.w_cf[k] * c_prev[k]);
        g[k] = libm::tanh(g[k]);
    }
    let c: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let mut o = a_o;
    for k in 0..n {
        o[k] = sigmoid(o[k] + p.w_co[k] * c[k]);
    }
    let tanh_c: Vec<f64> = c.iter().map(|&v| libm::tanh(v)).collect();
    let h: Vec<f64> = (0..n).map(|k| o[k] * tanh_c[k]).collect();
    let y = p.b_out + p.w_out.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h,
    };
    (cache, y)
}

/// One recurrent step: returns the next state and the angular velocity.
pub fn lstm_step(p: &LstmParams, s: &LstmState, x: &[f64]) -> Result<(LstmState, f64), RnnError> {
    if x.len() != p.input_dim {
        return Err(RnnError::InputDim { expected: p.input_dim, got: x.len() });
    }
    if s.h.len() != p.hidden || s.c.len() != p.hidden {
        return Err(RnnError::Shape { name: "state", expected: p.hidden, got: s.h.len().min(s.c.len()) });
    }
    let (cache, y) = step_cached(p, &s.h, &s.c, x);
    Ok((LstmState { h: cache.h, c: cache.c }, y))
}

/// Runs a whole sequence from the zero state. `inputs` holds one slice per
/// step.
pub fn forward_sequence<X: AsRef<[f64]>>(p: &LstmParams, inputs: &[X]) -> Result<Vec<f64>, RnnError> {
    if inputs.is_empty() {
        return Err(RnnError::EmptySequence);
    }
    let mut state = LstmState::zeros(p.hidden);
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (next, y) = lstm_step(p, &state, x.as_ref())?;
        state = next;
        out.push(y);
    }
    Ok(out)
}

/// A supervised sequence: `inputs` is row-major `steps x input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn step_input(&self, t: usize, input_dim: usize) -> &[f64] {
        &self.inputs[t * input_dim..(t + 1) * input_dim]
    }

    pub fn check(&self, input_dim: usize) -> Result<(), RnnError> {
        if self.targets.is_empty() {
            return Err(RnnError::EmptySequence);
        }
        if self.inputs.len() != self.targets.len() * input_dim {
            return Err(RnnError::InputDim { expected: self.targets.len() * input_dim, got: self.inputs.len() });
        }
        Ok(())
    }
}

/// Predictions for a flat [`Sequence`].
pub fn predict(p: &LstmParams, seq: &Sequence) -> Result<Vec<f64>, RnnError> {
    seq.check(p.input_dim)?;
    let rows: Vec<&[f64]> = seq.inputs.chunks_exact(p.input_dim).collect();
    forward_sequence(p, &rows)
}

/// Mean squared error over every step of every sequence.
pub fn mse_loss<P: AsRef<[f64]>, T: AsRef<[f64]>>(pred: &[P], target: &[T]) -> Result<f64, RnnError> {
    if pred.len() != target.len() {
        return Err(RnnError::LengthMismatch { pred: pred.len(), target: target.len() });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p.len() != t.len() {
            return Err(RnnError::LengthMismatch { pred: p.len(), target: t.len() });
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.len();
    }
    if count == 0 {
        return Err(RnnError::EmptySequence);
    }
    Ok(sum / count as f64)
}

/// Mean squared error of the model over a set of sequences.
pub fn dataset_loss(p: &LstmParams, data: &[&Sequence]) -> Result<f64, RnnError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for seq in data {
        let pred = predict(p, seq)?;
        sum += pred.iter().zip(&seq.targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += pred.len();
    }
    if count == 0 {
        return Err(RnnError::EmptyBatch);
    }
    Ok(sum / count as f64)
}
