//! Entropy-adaptive scaling and the final logit/probability vectors.

use crate::context::Evidence;
use crate::error::{Error, Result};
use crate::ssm::math::{exp_f64, sum4};

pub const PROB_FLOOR: f64 = 1e-12;

/// Model logits smaller than this in magnitude are treated as exactly zero.
/// With every remaining value a multiple of 2^-39, adding a constant that is
/// a multiple of 2^-16 and then subtracting the maximum is exact in `f64`.
pub const LOGIT_SNAP: f64 = 1.0 / 65_536.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixConfig {
    pub beta: f64,
    pub h0: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            beta: 0.6,
            h0: 5.5,
            s_min: 0.2,
            s_max: 2.5,
        }
    }
}

/// Entropy in nats.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.max(PROB_FLOOR).ln())
        .sum::<f64>()
}

pub fn adaptive_scale(h: f64, cfg: &MixConfig) -> f64 {
    ((1.0 - cfg.beta) + cfg.beta * h / cfg.h0).clamp(cfg.s_min, cfg.s_max)
}

/// Max-subtracted stable softmax with the probability floor.
pub fn softmax(logits: &[f64], out: &mut Vec<f64>) -> Result<()> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericFault("logits"));
    }
    out.clear();
    out.extend(logits.iter().map(|&l| exp_f64(l - max)));
    let inv = 1.0 / sum4(out);
    out.iter_mut().for_each(|p| *p = (*p * inv).max(PROB_FLOOR));
    let inv = 1.0 / sum4(out);
    out.iter_mut().for_each(|p| *p *= inv);
    Ok(())
}

/// Converts model output to `f64`, zeroing negligible values.
pub fn snap_logits<F: Copy + Into<f64>>(raw: &[F], out: &mut Vec<f64>) {
    out.clear();
    out.extend(raw.iter().map(|&x| {
        let x: f64 = x.into();
        if x.abs() < LOGIT_SNAP {
            0.0
        } else {
            x
        }
    }));
}

/// Reusable buffers for one stream's mixing.
#[derive(Debug, Default)]
pub struct Mixer {
    pub cfg: MixConfig,
    rel: Vec<f64>,
    exps: Vec<f64>,
    weighted: Vec<f64>,
}

impl Mixer {
    pub fn new(cfg: MixConfig) -> Self {
        Self {
            cfg,
            ..Self::default()
        }
    }

    /// Scale `s` for the given model logits; `None` (no model output yet, or
    /// no model) gives exactly 1. Also leaves `logits - max(logits)` in
    /// the internal buffer for [`combine`](Self::combine).
    pub fn scale(&mut self, ssm: Option<&[f64]>) -> Result<f64> {
        self.rel.clear();
        let Some(ssm) = ssm else {
            return Ok(1.0);
        };
        let max = ssm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || ssm.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericFault("model logits"));
        }
        self.rel.extend(ssm.iter().map(|&l| l - max));
        // H = ln Z - sum(e * rel) / Z with e = exp(rel), Z = sum(e).
        self.exps.clear();
        self.exps.extend(self.rel.iter().map(|&r| exp_f64(r)));
        let z = sum4(&self.exps);
        self.weighted.clear();
        self.weighted.extend(self.exps.iter().zip(&self.rel).map(|(e, r)| e * r));
        let h = (z.ln() - sum4(&self.weighted) / z).max(0.0);
        Ok(adaptive_scale(h, &self.cfg))
    }

    /// Final logits: model term + `s` * prior, then n-gram, pair and recency
    /// increments in that order. Call after [`scale`](Self::scale).
    pub fn combine(&self, prior: &[f64], s: f64, ev: &Evidence, out: &mut Vec<f64>) {
        out.clear();
        if self.rel.is_empty() {
            out.extend(prior.iter().map(|&c| s * c));
        } else {
            out.extend(self.rel.iter().zip(prior).map(|(&l, &c)| l + s * c));
        }
        for &(t, d) in &ev.ngram {
            out[t as usize] += d;
        }
        if let Some((t, b)) = ev.lz {
            out[t as usize] += b;
        }
        for &(t, b) in &ev.recency {
            out[t as usize] += b;
        }
    }
}
