use rayon::prelude::*;

use super::math::{dot, layer_norm, silu, softplus, task_min_len, wide, Real};
use super::params::{Dims, ParamLayout};

/// Rows per rayon task in head projections. Each logit is computed by the
/// same serial dot product whichever thread runs it, so results do not
/// depend on the thread count.
const HEAD_ROWS_PER_TASK: usize = 2048;

/// Recurrent state carried from token to token.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmState<F> {
    /// `nl * di * ds`
    pub hidden: Vec<F>,
    /// `nl * di * (dc - 1)`, oldest input first within each channel.
    pub conv: Vec<F>,
}

impl<F: Real> SsmState<F> {
    pub fn zeros(d: &Dims) -> Self {
        Self {
            hidden: vec![F::zero(); d.nl * d.di * d.ds],
            conv: vec![F::zero(); d.nl * d.di * (d.dc - 1)],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.iter().chain(&self.conv).all(|x| x.is_finite())
    }
}

/// Intermediates of one layer at one position.
#[derive(Debug, Clone)]
pub struct LayerCache<F> {
    pub xhat: Vec<F>,
    pub rstd: F,
    pub xn: Vec<F>,
    /// `[z_s; z_g]`
    pub z: Vec<F>,
    /// Convolution window per channel, `di * dc`.
    pub win: Vec<F>,
    pub u: Vec<F>,
    pub zt: Vec<F>,
    /// `[B; C; delta]`
    pub xp: Vec<F>,
    pub pre: Vec<F>,
    pub delta: Vec<F>,
    pub h_prev: Vec<F>,
    /// `-exp(a_log)`, `di * ds`.
    pub a: Vec<F>,
    pub decay: Vec<F>,
    pub h: Vec<F>,
    pub y: Vec<F>,
    pub gate: Vec<F>,
    pub o: Vec<F>,
}

impl<F: Real> LayerCache<F> {
    fn new(d: &Dims) -> Self {
        let z = |n| vec![F::zero(); n];
        Self {
            xhat: z(d.dm),
            rstd: F::zero(),
            xn: z(d.dm),
            z: z(2 * d.di),
            win: z(d.di * d.dc),
            u: z(d.di),
            zt: z(d.di),
            xp: z(d.xp),
            pre: z(d.di),
            delta: z(d.di),
            h_prev: z(d.di * d.ds),
            a: z(d.di * d.ds),
            decay: z(d.di * d.ds),
            h: z(d.di * d.ds),
            y: z(d.di),
            gate: z(d.di),
            o: z(d.di),
        }
    }
}

/// Everything one forward step produces, kept for backprop.
#[derive(Debug, Clone)]
pub struct StepCache<F> {
    pub token: usize,
    pub layers: Vec<LayerCache<F>>,
    pub xf_hat: Vec<F>,
    pub rstd_f: F,
    /// Input to the head.
    pub xf: Vec<F>,
}

impl<F: Real> StepCache<F> {
    pub fn new(d: &Dims) -> Self {
        Self {
            token: 0,
            layers: (0..d.nl).map(|_| LayerCache::new(d)).collect(),
            xf_hat: vec![F::zero(); d.dm],
            rstd_f: F::zero(),
            xf: vec![F::zero(); d.dm],
        }
    }
}

/// Test instrumentation: pins `delta` of one `(layer, channel)` to zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardProbe {
    pub zero_delta: Option<(usize, usize)>,
}

/// Advances `state` by one token and leaves the head input in `cache.xf`.
pub fn step<F: Real>(
    layout: &ParamLayout,
    p: &[F],
    state: &mut SsmState<F>,
    token: usize,
    cache: &mut StepCache<F>,
    probe: ForwardProbe,
) {
    wide(|| step_inner(layout, p, state, token, cache, probe))
}

#[inline(always)]
fn step_inner<F: Real>(
    layout: &ParamLayout,
    p: &[F],
    state: &mut SsmState<F>,
    token: usize,
    cache: &mut StepCache<F>,
    probe: ForwardProbe,
) {
    let d = layout.dims;
    let (dm, ds, di, dc) = (d.dm, d.ds, d.di, d.dc);
    cache.token = token;
    let mut x: Vec<F> = p[layout.embedding.start + token * dm..][..dm].to_vec();

    for (l, (ll, c)) in layout.layers.iter().zip(&mut cache.layers).enumerate() {
        c.rstd = layer_norm(&x, &mut c.xhat);
        let g = &p[ll.ln_gain.clone()];
        let b = &p[ll.ln_bias.clone()];
        for m in 0..dm {
            c.xn[m] = g[m] * c.xhat[m] + b[m];
        }
        let w_in = &p[ll.w_in.clone()];
        for (k, zk) in c.z.iter_mut().enumerate() {
            *zk = dot(&w_in[k * dm..][..dm], &c.xn);
        }

        let buf = &mut state.conv[l * di * (dc - 1)..][..di * (dc - 1)];
        let conv_w = &p[ll.conv_w.clone()];
        let conv_b = &p[ll.conv_b.clone()];
        for i in 0..di {
            let win = &mut c.win[i * dc..][..dc];
            let row = &mut buf[i * (dc - 1)..][..dc - 1];
            win[..dc - 1].copy_from_slice(row);
            win[dc - 1] = c.z[i];
            c.u[i] = conv_b[i] + dot(&conv_w[i * dc..][..dc], win);
            c.zt[i] = silu(c.u[i]);
            row.copy_from_slice(&win[1..]);
        }

        let w_xp = &p[ll.w_xp.clone()];
        for (r, v) in c.xp.iter_mut().enumerate() {
            *v = dot(&w_xp[r * di..][..di], &c.zt);
        }
        let dlt = c.xp[2 * ds];
        let w_delta = &p[ll.w_delta.clone()];
        let b_delta = &p[ll.b_delta.clone()];
        for i in 0..di {
            c.pre[i] = dlt * w_delta[i] + b_delta[i];
            c.delta[i] = softplus(c.pre[i]);
        }
        if let Some((pl, pi)) = probe.zero_delta {
            if pl == l {
                c.delta[pi] = F::zero();
            }
        }

        let hid = &mut state.hidden[l * di * ds..][..di * ds];
        let a_log = &p[ll.a_log.clone()];
        let d_skip = &p[ll.d_skip.clone()];
        let (bv, cv) = (&c.xp[..ds], &c.xp[ds..2 * ds]);
        c.h_prev.copy_from_slice(hid);
        for (a, &al) in c.a.iter_mut().zip(a_log) {
            *a = -al.fast_exp();
        }
        for i in 0..di {
            let dl = c.delta[i];
            let inp = dl * c.zt[i];
            let row = i * ds..(i + 1) * ds;
            for (dk, &a) in c.decay[row.clone()].iter_mut().zip(&c.a[row.clone()]) {
                *dk = (dl * a).fast_exp();
            }
            for ((h, &dk), &b) in hid[row.clone()].iter_mut().zip(&c.decay[row]).zip(bv) {
                *h = dk * *h + inp * b;
            }
            c.y[i] = dot(&hid[i * ds..][..ds], cv) + d_skip[i] * c.zt[i];
            c.gate[i] = silu(c.z[di + i]);
            c.o[i] = c.y[i] * c.gate[i];
        }
        c.h.copy_from_slice(hid);

        let w_out = &p[ll.w_out.clone()];
        for (m, xm) in x.iter_mut().enumerate() {
            *xm = *xm + dot(&w_out[m * di..][..di], &c.o);
        }
    }

    cache.rstd_f = layer_norm(&x, &mut cache.xf_hat);
    let g = &p[layout.final_gain.clone()];
    let b = &p[layout.final_bias.clone()];
    for m in 0..dm {
        cache.xf[m] = g[m] * cache.xf_hat[m] + b[m];
    }
}

/// `out[j] = head_j . xf`
pub fn head_logits<F: Real>(layout: &ParamLayout, p: &[F], xf: &[F], out: &mut [F]) {
    let dm = layout.dims.dm;
    let head = &p[layout.head.clone()];
    out.par_chunks_mut(HEAD_ROWS_PER_TASK)
        .zip(head.par_chunks(HEAD_ROWS_PER_TASK * dm))
        .with_min_len(task_min_len())
        .for_each(|(o, rows)| {
            wide(|| {
                for (v, row) in o.iter_mut().zip(rows.chunks_exact(dm)) {
                    *v = dot(row, xf);
                }
            })
        });
}
