use std::ops::Range;

use super::config::ModelConfig;
use super::math::Real;
use super::rng::CounterRng;

const WEIGHT_STD: f64 = 0.02;
const BIAS_STD: f64 = 0.1;

/// Sizes derived from a [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub dm: usize,
    pub ds: usize,
    pub di: usize,
    pub dc: usize,
    pub nl: usize,
    /// Rows of the x-projection: `B`, `C` and the scalar `delta`.
    pub xp: usize,
}

impl Dims {
    pub fn of(cfg: &ModelConfig) -> Self {
        Self {
            dm: cfg.d_model,
            ds: cfg.d_state,
            di: cfg.d_inner,
            dc: cfg.d_conv,
            nl: cfg.n_layers,
            xp: 2 * cfg.d_state + 1,
        }
    }
}

/// Offsets of one layer's tensors. Matrices are stored one output row at a
/// time, so every matrix-vector product is a sequence of contiguous dots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln_gain: Range<usize>,
    pub ln_bias: Range<usize>,
    /// `2*di` rows of `dm`: the SSM half first, then the gate half.
    pub w_in: Range<usize>,
    /// `di` rows of `dc` taps, oldest input first.
    pub conv_w: Range<usize>,
    pub conv_b: Range<usize>,
    /// `2*ds + 1` rows of `di`.
    pub w_xp: Range<usize>,
    pub w_delta: Range<usize>,
    pub b_delta: Range<usize>,
    /// `di` rows of `ds`.
    pub a_log: Range<usize>,
    pub d_skip: Range<usize>,
    /// `dm` rows of `di`.
    pub w_out: Range<usize>,
}

/// Where every tensor lives inside the flat parameter vector. The fixed
/// architecture weights come first, so their offsets do not depend on `v_e`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub dims: Dims,
    pub v_e: usize,
    pub layers: Vec<LayerLayout>,
    pub final_gain: Range<usize>,
    pub final_bias: Range<usize>,
    /// `v_e` rows of `dm`.
    pub embedding: Range<usize>,
    /// `v_e` rows of `dm`.
    pub head: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig, v_e: usize) -> Self {
        let d = Dims::of(cfg);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let layers = (0..d.nl)
            .map(|_| LayerLayout {
                ln_gain: take(d.dm),
                ln_bias: take(d.dm),
                w_in: take(2 * d.di * d.dm),
                conv_w: take(d.di * d.dc),
                conv_b: take(d.di),
                w_xp: take(d.xp * d.di),
                w_delta: take(d.di),
                b_delta: take(d.di),
                a_log: take(d.di * d.ds),
                d_skip: take(d.di),
                w_out: take(d.dm * d.di),
            })
            .collect();
        let final_gain = take(d.dm);
        let final_bias = take(d.dm);
        let embedding = take(v_e * d.dm);
        let head = take(v_e * d.dm);
        Self {
            dims: d,
            v_e,
            layers,
            final_gain,
            final_bias,
            embedding,
            head,
            total: at,
        }
    }
}

/// Number of learnable scalars for `v_e` live tokens.
pub fn param_count(cfg: &ModelConfig, v_e: usize) -> usize {
    ParamLayout::new(cfg, v_e).total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fill {
    Weight,
    Bias,
    Ones,
    Zeros,
    DecayLadder,
}

/// Every tensor in draw order. Draws happen in exactly this order, one
/// normal sample per scalar; deterministic fills consume nothing.
fn fill_plan(layout: &ParamLayout) -> Vec<(Range<usize>, Fill)> {
    let mut plan = Vec::new();
    for l in &layout.layers {
        plan.extend([
            (l.ln_gain.clone(), Fill::Ones),
            (l.ln_bias.clone(), Fill::Zeros),
            (l.w_in.clone(), Fill::Weight),
            (l.conv_w.clone(), Fill::Weight),
            (l.conv_b.clone(), Fill::Bias),
            (l.w_xp.clone(), Fill::Weight),
            (l.w_delta.clone(), Fill::Weight),
            (l.b_delta.clone(), Fill::Bias),
            (l.a_log.clone(), Fill::DecayLadder),
            (l.d_skip.clone(), Fill::Ones),
            (l.w_out.clone(), Fill::Weight),
        ]);
    }
    plan.extend([
        (layout.final_gain.clone(), Fill::Ones),
        (layout.final_bias.clone(), Fill::Zeros),
        (layout.embedding.clone(), Fill::Weight),
        (layout.head.clone(), Fill::Weight),
    ]);
    plan
}

/// Initial parameter vector for `layout`, fully determined by `seed`.
pub fn init_params<F: Real>(layout: &ParamLayout, seed: u64) -> Vec<F> {
    let mut rng = CounterRng::new(seed);
    let mut v = vec![F::zero(); layout.total];
    let ds = layout.dims.ds;
    for (range, fill) in fill_plan(layout) {
        let start = range.start;
        for (k, slot) in v[range].iter_mut().enumerate() {
            *slot = F::of(match fill {
                Fill::Weight => rng.normal(WEIGHT_STD),
                Fill::Bias => rng.normal(BIAS_STD),
                Fill::Ones => 1.0,
                Fill::Zeros => 0.0,
                Fill::DecayLadder => (((start + k) % ds + 1) as f64).ln(),
            });
        }
    }
    v
}
