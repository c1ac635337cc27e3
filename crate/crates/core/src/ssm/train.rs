//! Truncated-BPTT training on one chunk: forward from the chunk-start
//! snapshot, label-smoothed loss, exact backprop and Adam.

use rayon::prelude::*;

use super::config::ModelConfig;
use super::forward::{step, ForwardProbe, SsmState, StepCache};
use super::math::{axpy, dot, task_min_len, wide, layer_norm_backward, sigmoid, silu_grad, Real};
use super::params::ParamLayout;
use crate::error::{Error, Result};

/// Lower bound on probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

const ROWS_PER_TASK: usize = 1024;
const POSITIONS_PER_TASK: usize = 16;
const ADAM_BLOCK: usize = 8192;

/// Adam iterations for the 1-based chunk index.
pub fn warmup_iters(chunk_index: u64) -> usize {
    match chunk_index {
        0..=10 => 8,
        11..=30 => 4,
        _ => 2,
    }
}

/// Loss of one position; overwrites `logits` with d(loss)/d(logits).
fn position_loss_grad<F: Real>(logits: &mut [F], target: usize, eps: F) -> F {
    let v = F::of(logits.len() as f64);
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for &l in logits.iter() {
        sum = sum + (l - max).fast_exp();
    }
    let lse = sum.ln();
    let floor = F::of(PROB_FLOOR.ln());
    let mut sum_logp = F::zero();
    let mut logp_target = F::zero();
    for (j, l) in logits.iter_mut().enumerate() {
        let logp = (*l - max) - lse;
        let clamped = logp.max(floor);
        sum_logp = sum_logp + clamped;
        if j == target {
            logp_target = clamped;
        }
        *l = logp.fast_exp() - eps / v;
    }
    logits[target] = logits[target] - (F::one() - eps);
    -(F::one() - eps) * logp_target - eps * sum_logp / v
}

/// `src` is `rows * (src.len() / rows)` row-major; `dst` receives its transpose.
fn transpose<F: Copy>(src: &[F], dst: &mut [F], rows: usize) {
    let cols = src.len() / rows;
    for (r, row) in src.chunks_exact(cols).enumerate() {
        for (c, &x) in row.iter().enumerate() {
            dst[c * rows + r] = x;
        }
    }
}

/// Label-smoothed chunk loss over `(logits_i, target_i)` pairs, in nats.
pub fn chunk_loss(step_logits: &[Vec<f64>], targets: &[usize], eps: f64) -> f64 {
    step_logits
        .iter()
        .zip(targets)
        .map(|(l, &t)| position_loss_grad(&mut l.clone(), t, eps))
        .sum()
}

#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            step: 0,
        }
    }
}

/// Global-norm clip followed by one bias-corrected Adam step. The norm is
/// reduced over fixed blocks in order, so it is thread-count independent.
pub fn adam_update<F: Real>(
    params: &mut [F],
    grads: &mut [F],
    adam: &mut AdamState<F>,
    cfg: &ModelConfig,
) -> Result<()> {
    let norm2: f64 = grads
        .par_chunks(ADAM_BLOCK)
        .with_min_len(task_min_len())
        .map(|b| b.iter().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    if !norm2.is_finite() {
        return Err(Error::NumericFault("gradient"));
    }
    let norm = norm2.sqrt();
    let scale = if norm > cfg.grad_clip {
        F::of(cfg.grad_clip / norm)
    } else {
        F::one()
    };

    adam.step += 1;
    let t = adam.step.min(i32::MAX as u64) as i32;
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let bc1 = F::of(1.0 - cfg.beta1.powi(t));
    let bc2 = F::of(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (F::of(cfg.lr), F::of(cfg.adam_eps));
    let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);

    params
        .par_chunks_mut(ADAM_BLOCK)
        .zip(grads.par_chunks_mut(ADAM_BLOCK))
        .zip(adam.m.par_chunks_mut(ADAM_BLOCK))
        .zip(adam.v.par_chunks_mut(ADAM_BLOCK))
        .with_min_len(task_min_len())
        .for_each(|(((p, g), m), v)| {
            wide(|| {
                for k in 0..p.len() {
                    let gk = g[k] * scale;
                    g[k] = gk;
                    m[k] = b1 * m[k] + one_b1 * gk;
                    v[k] = b2 * v[k] + one_b2 * gk * gk;
                    let mhat = m[k] / bc1;
                    let vhat = v[k] / bc2;
                    p[k] = p[k] - lr * mhat / (vhat.sqrt() + eps);
                }
            })
        });
    Ok(())
}

/// Reusable buffers for chunk training.
#[derive(Debug)]
pub struct Trainer<F> {
    caches: Vec<StepCache<F>>,
    /// `steps * v_e` logits, then their gradients.
    dlogits: Vec<F>,
    /// The same values transposed to `v_e * steps`, so each head row is
    /// visited once per chunk rather than once per position.
    by_row: Vec<F>,
    pub grads: Vec<F>,
    dxf: Vec<F>,
    /// Gradients reaching `z_s` of earlier positions through the conv window,
    /// `steps * nl * di`.
    dzs: Vec<F>,
}

impl<F: Real> Trainer<F> {
    pub fn new(layout: &ParamLayout, chunk_size: usize) -> Self {
        let d = layout.dims;
        let steps = chunk_size - 1;
        Self {
            caches: (0..steps).map(|_| StepCache::new(&d)).collect(),
            dlogits: vec![F::zero(); steps * layout.v_e],
            by_row: vec![F::zero(); steps * layout.v_e],
            grads: vec![F::zero(); layout.total],
            dxf: vec![F::zero(); steps * d.dm],
            dzs: vec![F::zero(); steps * d.nl * d.di],
        }
    }

    fn forward_chunk(&mut self, layout: &ParamLayout, p: &[F], snapshot: &SsmState<F>, chunk: &[usize]) {
        let mut state = snapshot.clone();
        let steps = chunk.len() - 1;
        for (&tok, cache) in chunk[..steps].iter().zip(&mut self.caches) {
            step(layout, p, &mut state, tok, cache, ForwardProbe::default());
        }
        let (v_e, dm) = (layout.v_e, layout.dims.dm);
        let caches = &self.caches;
        self.by_row[..steps * v_e]
            .par_chunks_mut(ROWS_PER_TASK * steps)
            .zip(p[layout.head.clone()].par_chunks(ROWS_PER_TASK * dm))
            .with_min_len(task_min_len())
            .for_each(|(out, rows)| {
                wide(|| {
                    for (o, row) in out.chunks_exact_mut(steps).zip(rows.chunks_exact(dm)) {
                        for (t, v) in o.iter_mut().enumerate() {
                            *v = dot(row, &caches[t].xf);
                        }
                    }
                })
            });
        transpose(&self.by_row[..steps * v_e], &mut self.dlogits[..steps * v_e], v_e);
    }

    /// Chunk loss at the current parameters, without gradients.
    pub fn loss(&mut self, layout: &ParamLayout, p: &[F], snapshot: &SsmState<F>, chunk: &[usize], eps: f64) -> f64 {
        if chunk.len() < 2 {
            return 0.0;
        }
        self.forward_chunk(layout, p, snapshot, chunk);
        let v_e = layout.v_e;
        let eps = F::of(eps);
        self.dlogits[..(chunk.len() - 1) * v_e]
            .chunks_mut(v_e)
            .zip(&chunk[1..])
            .map(|(l, &t)| wide(|| position_loss_grad(l, t, eps)).to_f64_lossy())
            .sum()
    }

    /// Fills `self.grads` with the exact gradient of the chunk loss and
    /// returns the loss. State entering the chunk is treated as a constant.
    pub fn loss_and_grad(
        &mut self,
        layout: &ParamLayout,
        p: &[F],
        snapshot: &SsmState<F>,
        chunk: &[usize],
        eps: f64,
    ) -> Result<f64> {
        self.grads.iter_mut().for_each(|g| *g = F::zero());
        let loss = self.loss(layout, p, snapshot, chunk, eps);
        if chunk.len() < 2 {
            return Ok(0.0);
        }
        if !loss.is_finite() {
            return Err(Error::NumericFault("training loss"));
        }
        let steps = chunk.len() - 1;
        let d = layout.dims;
        let (dm, ds, di, dc) = (d.dm, d.ds, d.di, d.dc);
        let v_e = layout.v_e;

        // Head rows and the head input, batched over positions.
        transpose(&self.dlogits[..steps * v_e], &mut self.by_row[..steps * v_e], steps);
        let dl = &self.by_row[..steps * v_e];
        let caches = &self.caches;
        let head = &p[layout.head.clone()];
        self.grads[layout.head.clone()]
            .par_chunks_mut(ROWS_PER_TASK * dm)
            .zip(dl.par_chunks(ROWS_PER_TASK * steps))
            .with_min_len(task_min_len())
            .for_each(|(rows, d)| {
                wide(|| {
                    for (g, dj) in rows.chunks_exact_mut(dm).zip(d.chunks_exact(steps)) {
                        for (t, &w) in dj.iter().enumerate() {
                            axpy(g, w, &caches[t].xf);
                        }
                    }
                })
            });
        self.dxf[..steps * dm]
            .par_chunks_mut(POSITIONS_PER_TASK * dm)
            .enumerate()
            .with_min_len(task_min_len())
            .for_each(|(task, dx)| {
                dx.iter_mut().for_each(|x| *x = F::zero());
                let t0 = task * POSITIONS_PER_TASK;
                wide(|| {
                    for (row, dj) in head.chunks_exact(dm).zip(dl.chunks_exact(steps)) {
                        for (k, dxt) in dx.chunks_exact_mut(dm).enumerate() {
                            axpy(dxt, dj[t0 + k], row);
                        }
                    }
                })
            });

        self.dzs.iter_mut().for_each(|x| *x = F::zero());
        let mut dhs: Vec<Vec<F>> = (0..d.nl).map(|_| vec![F::zero(); di * ds]).collect();
        let z = |n| vec![F::zero(); n];
        let (mut dx, mut dxhat, mut dxn) = (z(dm), z(dm), z(dm));
        let (mut d_o, mut dy, mut dzt, mut ddelta) = (z(di), z(di), z(di), z(di));
        let (mut dz, mut dxp) = (z(2 * di), z(d.xp));
        let g = &mut self.grads;

        wide(|| {
            for t in (0..steps).rev() {
                let c = &self.caches[t];
                // final norm
                dx.iter_mut().for_each(|x| *x = F::zero());
                let dxf = &self.dxf[t * dm..][..dm];
                let gain = &p[layout.final_gain.clone()];
                for m in 0..dm {
                    g[layout.final_gain.start + m] = g[layout.final_gain.start + m] + dxf[m] * c.xf_hat[m];
                    g[layout.final_bias.start + m] = g[layout.final_bias.start + m] + dxf[m];
                    dxhat[m] = dxf[m] * gain[m];
                }
                layer_norm_backward(&c.xf_hat, c.rstd_f, &dxhat, &mut dx);

                for (l, ll) in layout.layers.iter().enumerate().rev() {
                    let lc = &c.layers[l];
                    let dh = &mut dhs[l];

                    let w_out = &p[ll.w_out.clone()];
                    d_o.iter_mut().for_each(|x| *x = F::zero());
                    for m in 0..dm {
                        axpy(&mut g[ll.w_out.start + m * di..][..di], dx[m], &lc.o);
                        axpy(&mut d_o, dx[m], &w_out[m * di..][..di]);
                    }
                    for i in 0..di {
                        dy[i] = d_o[i] * lc.gate[i];
                        dz[di + i] = d_o[i] * lc.y[i] * silu_grad(lc.z[di + i]);
                    }

                    let d_skip = &p[ll.d_skip.clone()];
                    let (bv, cv) = (&lc.xp[..ds], &lc.xp[ds..2 * ds]);
                    dxp.iter_mut().for_each(|x| *x = F::zero());
                    for i in 0..di {
                        let (zt, dl_i) = (lc.zt[i], lc.delta[i]);
                        g[ll.d_skip.start + i] = g[ll.d_skip.start + i] + dy[i] * zt;
                        let mut dzt_i = dy[i] * d_skip[i];
                        let mut ddelta_i = F::zero();
                        for j in 0..ds {
                            let k = i * ds + j;
                            dxp[ds + j] = dxp[ds + j] + dy[i] * lc.h[k];
                            let dhk = dh[k] + dy[i] * cv[j];
                            dh[k] = dhk * lc.decay[k];
                            let a = lc.a[k];
                            let gd = dhk * lc.h_prev[k] * lc.decay[k];
                            ddelta_i = ddelta_i + gd * a + dhk * bv[j] * zt;
                            g[ll.a_log.start + k] = g[ll.a_log.start + k] + gd * dl_i * a;
                            dxp[j] = dxp[j] + dhk * dl_i * zt;
                            dzt_i = dzt_i + dhk * dl_i * bv[j];
                        }
                        dzt[i] = dzt_i;
                        ddelta[i] = ddelta_i;
                    }

                    let w_delta = &p[ll.w_delta.clone()];
                    let dlt = lc.xp[2 * ds];
                    let mut ddlt = F::zero();
                    for i in 0..di {
                        let dpre = ddelta[i] * sigmoid(lc.pre[i]);
                        g[ll.w_delta.start + i] = g[ll.w_delta.start + i] + dpre * dlt;
                        g[ll.b_delta.start + i] = g[ll.b_delta.start + i] + dpre;
                        ddlt = ddlt + dpre * w_delta[i];
                    }
                    dxp[2 * ds] = ddlt;

                    let w_xp = &p[ll.w_xp.clone()];
                    for r in 0..d.xp {
                        axpy(&mut g[ll.w_xp.start + r * di..][..di], dxp[r], &lc.zt);
                        axpy(&mut dzt, dxp[r], &w_xp[r * di..][..di]);
                    }

                    let conv_w = &p[ll.conv_w.clone()];
                    for i in 0..di {
                        let du = dzt[i] * silu_grad(lc.u[i]);
                        g[ll.conv_b.start + i] = g[ll.conv_b.start + i] + du;
                        axpy(&mut g[ll.conv_w.start + i * dc..][..dc], du, &lc.win[i * dc..][..dc]);
                        for k in 0..dc - 1 {
                            if let Some(src) = (t + k + 1).checked_sub(dc) {
                                let at = (src * d.nl + l) * di + i;
                                self.dzs[at] = self.dzs[at] + du * conv_w[i * dc + k];
                            }
                        }
                        dz[i] = du * conv_w[i * dc + dc - 1] + self.dzs[(t * d.nl + l) * di + i];
                    }

                    let w_in = &p[ll.w_in.clone()];
                    dxn.iter_mut().for_each(|x| *x = F::zero());
                    for k in 0..2 * di {
                        axpy(&mut g[ll.w_in.start + k * dm..][..dm], dz[k], &lc.xn);
                        axpy(&mut dxn, dz[k], &w_in[k * dm..][..dm]);
                    }

                    let gain = &p[ll.ln_gain.clone()];
                    for m in 0..dm {
                        g[ll.ln_gain.start + m] = g[ll.ln_gain.start + m] + dxn[m] * lc.xhat[m];
                        g[ll.ln_bias.start + m] = g[ll.ln_bias.start + m] + dxn[m];
                        dxhat[m] = dxn[m] * gain[m];
                    }
                    // `dx` already holds the residual path.
                    layer_norm_backward(&lc.xhat, lc.rstd, &dxhat, &mut dx);
                }

                let at = layout.embedding.start + c.token * dm;
                for m in 0..dm {
                    g[at + m] = g[at + m] + dx[m];
                }
            }
        });
        Ok(loss)
    }
}

/// Outcome of one chunk's training.
#[derive(Debug, Clone)]
pub struct ChunkReport {
    pub iterations: usize,
    /// Loss measured during the first iteration (before any update).
    pub first_loss: f64,
}

/// Runs `n_iter` Adam iterations on `chunk`, each forwarding from
/// `snapshot`, and returns the state after `chunk[..len-1]` under the
/// updated weights.
#[allow(clippy::too_many_arguments)]
pub fn train_chunk<F: Real>(
    trainer: &mut Trainer<F>,
    layout: &ParamLayout,
    params: &mut [F],
    adam: &mut AdamState<F>,
    cfg: &ModelConfig,
    snapshot: &SsmState<F>,
    chunk: &[usize],
    n_iter: usize,
) -> Result<(SsmState<F>, ChunkReport)> {
    let mut first_loss = f64::NAN;
    for it in 0..n_iter {
        let loss = trainer.loss_and_grad(layout, params, snapshot, chunk, cfg.label_smoothing)?;
        if it == 0 {
            first_loss = loss;
        }
        adam_update(params, &mut trainer.grads, adam, cfg)?;
    }
    let mut state = snapshot.clone();
    let mut scratch = StepCache::new(&layout.dims);
    for &tok in &chunk[..chunk.len().saturating_sub(1)] {
        step(layout, params, &mut state, tok, &mut scratch, ForwardProbe::default());
    }
    if !state.is_finite() {
        return Err(Error::NumericFault("recurrent state"));
    }
    Ok((
        state,
        ChunkReport {
            iterations: n_iter,
            first_loss,
        },
    ))
}
