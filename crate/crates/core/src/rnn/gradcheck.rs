//! Central finite-difference check of the BPTT gradients.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bptt::backward;
use super::{dataset_loss, LstmParams, RnnError, Sequence};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_CHECK_TOL: f64 = 1e-4;
/// Lower bound on the relative-error denominator, so entries whose true
/// gradient is zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }
}

/// `|a - b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    libm::fabs(a - b) / libm::fabs(a).max(libm::fabs(b)).max(REL_ERROR_FLOOR)
}

/// Compares every analytic gradient entry with `(L(p + h) - L(p - h)) / 2h`.
pub fn check_gradients(p: &LstmParams, batch: &[&Sequence], step: f64) -> Result<GradCheckReport, RnnError> {
    let (_, analytic) = backward(p, batch)?;
    let mut probe = p.clone();
    let mut tensors = Vec::new();
    for (k, (name, grad)) in analytic.tensors().into_iter().enumerate() {
        let mut check = TensorCheck { name, entries: grad.len(), max_rel_error: 0.0, max_abs_error: 0.0 };
        for (j, &g) in grad.iter().enumerate() {
            let original = probe.tensors()[k].1[j];
            probe.tensors_mut()[k].1[j] = original + step;
            let up = dataset_loss(&probe, batch)?;
            probe.tensors_mut()[k].1[j] = original - step;
            let down = dataset_loss(&probe, batch)?;
            probe.tensors_mut()[k].1[j] = original;
            let numeric = (up - down) / (2.0 * step);
            check.max_rel_error = check.max_rel_error.max(relative_error(g, numeric));
            check.max_abs_error = check.max_abs_error.max(libm::fabs(g - numeric));
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors })
}

/// A random network with non-trivial peepholes and readout, plus a random
/// sequence with random targets.
pub fn random_problem(seed: u64, input_dim: usize, hidden: usize, len: usize) -> Result<(LstmParams, Sequence), RnnError> {
    let mut p = LstmParams::init(seed, input_dim, hidden)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for (_, t) in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    let seq = Sequence {
        inputs: (0..len * input_dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
        targets: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    Ok((p, seq))
}
