//! Backpropagation through time for the peephole LSTM.

use alloc::vec;
use alloc::vec::Vec;

use super::{step_cached, LstmParams, RnnError, Sequence, StepCache};

/// Gradients share the parameter layout.
pub type Gradients = LstmParams;

/// Gradient of `scale * sum_t (y_t - target_t)^2` for one sequence, plus the
/// unscaled sum of squared errors.
pub fn sequence_gradient(p: &LstmParams, seq: &Sequence, scale: f64) -> Result<(f64, Gradients), RnnError> {
    seq.check(p.input_dim)?;
    let n = p.hidden;
    let steps = seq.len();

    let mut caches: Vec<StepCache> = Vec::with_capacity(steps);
    let mut dys = Vec::with_capacity(steps);
    let mut sse = 0.0;
    {
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        for t in 0..steps {
            let (cache, y) = step_cached(p, &h, &c, seq.step_input(t, p.input_dim));
            let err = y - seq.targets[t];
            sse += err * err;
            dys.push(2.0 * scale * err);
            h.clone_from(&cache.h);
            c.clone_from(&cache.c);
            caches.push(cache);
        }
    }

    let mut grad = LstmParams::zeros(p.input_dim, n);
    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    let mut dh = vec![0.0; n];
    let mut dc = vec![0.0; n];
    let mut da = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];

    for t in (0..steps).rev() {
        let s = &caches[t];
        let dy = dys[t];
        grad.b_out += dy;
        for k in 0..n {
            grad.w_out[k] += dy * s.h[k];
            dh[k] = p.w_out[k] * dy + dh_next[k];
        }
        // Output gate first: it reads the new cell state.
        for k in 0..n {
            let o = s.o[k];
            let da_o = dh[k] * s.tanh_c[k] * o * (1.0 - o);
            da[3][k] = da_o;
            dc[k] = dh[k] * o * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + da_o * p.w_co[k] + dc_next[k];
        }
        for k in 0..n {
            let (i, f, g) = (s.i[k], s.f[k], s.g[k]);
            da[0][k] = dc[k] * g * i * (1.0 - i);
            da[1][k] = dc[k] * s.c_prev[k] * f * (1.0 - f);
            da[2][k] = dc[k] * i * (1.0 - g * g);
            dc_next[k] = dc[k] * f + da[0][k] * p.w_ci[k] + da[1][k] * p.w_cf[k];
            grad.w_ci[k] += da[0][k] * s.c_prev[k];
            grad.w_cf[k] += da[1][k] * s.c_prev[k];
            grad.w_co[k] += da[3][k] * s.c[k];
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for g in 0..4 {
            let dag = &da[g];
            for k in 0..n {
                let d = dag[k];
                grad.b[g][k] += d;
                if d == 0.0 {
                    continue;
                }
                let row_x = &mut grad.w_x[g][k * p.input_dim..(k + 1) * p.input_dim];
                for (w, x) in row_x.iter_mut().zip(&s.x) {
                    *w += d * x;
                }
                let row_h = &mut grad.w_h[g][k * n..(k + 1) * n];
                for (w, h) in row_h.iter_mut().zip(&s.h_prev) {
                    *w += d * h;
                }
                // dh_prev += W_h^T da
                let wrow = &p.w_h[g][k * n..(k + 1) * n];
                for (acc, w) in dh_next.iter_mut().zip(wrow) {
                    *acc += w * d;
                }
            }
        }
    }
    Ok((sse, grad))
}

/// Adds `other` into `acc` element by element.
pub fn accumulate(acc: &mut Gradients, other: &Gradients) {
    for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Mean-squared-error loss over every step of the batch and its exact
/// gradient. Per-sequence gradients are summed in batch order.
pub fn backward(p: &LstmParams, batch: &[&Sequence]) -> Result<(f64, Gradients), RnnError> {
    if batch.is_empty() {
        return Err(RnnError::EmptyBatch);
    }
    let total: usize = batch.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(RnnError::EmptySequence);
    }
    let scale = 1.0 / total as f64;
    let mut grad = LstmParams::zeros(p.input_dim, p.hidden);
    let mut sse = 0.0;
    for seq in batch {
        let (s, g) = sequence_gradient(p, seq, scale)?;
        sse += s;
        accumulate(&mut grad, &g);
    }
    Ok((sse * scale, grad))
}
