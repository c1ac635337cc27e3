use super::config::ModelConfig;
use super::forward::{head_logits, step, ForwardProbe, SsmState, StepCache};
use super::math::Real;
use super::params::{init_params, ParamLayout};
use super::train::{train_chunk, warmup_iters, AdamState, ChunkReport, Trainer};
use crate::error::{Error, Result};

/// The predictor as driven by the codec loop.
///
/// Call [`forward`](Self::forward) with token `t_{i-1}` to get the logits for
/// `t_i`, then [`observe`](Self::observe) with `t_i` once it is known. Every
/// `chunk_size` observed tokens the model trains on that chunk, starting from
/// the state that preceded the chunk's first token, and resumes from the
/// state after the chunk's second-to-last token recomputed with the new
/// weights.
#[derive(Debug)]
pub struct OnlineModel<F: Real> {
    cfg: ModelConfig,
    layout: ParamLayout,
    params: Vec<F>,
    adam: AdamState<F>,
    live: SsmState<F>,
    snapshot: SsmState<F>,
    trainer: Trainer<F>,
    cache: StepCache<F>,
    logits: Vec<F>,
    chunk: Vec<usize>,
    forwarded: u64,
    chunks_trained: u64,
    iter_override: Option<usize>,
}

impl<F: Real> OnlineModel<F> {
    pub fn new(cfg: &ModelConfig, v_e: usize) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(cfg, v_e);
        let params = init_params(&layout, cfg.rng_seed);
        let d = layout.dims;
        Ok(Self {
            cfg: cfg.clone(),
            adam: AdamState::new(layout.total),
            live: SsmState::zeros(&d),
            snapshot: SsmState::zeros(&d),
            trainer: Trainer::new(&layout, cfg.chunk_size),
            cache: StepCache::new(&d),
            logits: vec![F::zero(); v_e],
            chunk: Vec::with_capacity(cfg.chunk_size),
            forwarded: 0,
            chunks_trained: 0,
            iter_override: None,
            params,
            layout,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn state(&self) -> &SsmState<F> {
        &self.live
    }

    pub fn adam(&self) -> &AdamState<F> {
        &self.adam
    }

    pub fn chunks_trained(&self) -> u64 {
        self.chunks_trained
    }

    /// Fixes the number of Adam iterations per chunk (tests and experiments).
    pub fn set_iterations(&mut self, n: Option<usize>) {
        self.iter_override = n;
    }

    /// Consumes `prev` and returns logits over the next token.
    pub fn forward(&mut self, prev: usize) -> Result<&[F]> {
        if prev >= self.layout.v_e {
            return Err(Error::ApiMisuse("token id outside the model vocabulary"));
        }
        step(
            &self.layout,
            &self.params,
            &mut self.live,
            prev,
            &mut self.cache,
            ForwardProbe::default(),
        );
        head_logits(&self.layout, &self.params, &self.cache.xf, &mut self.logits);
        if !self.logits.iter().all(|x| x.is_finite()) {
            return Err(Error::NumericFault("model logits"));
        }
        self.forwarded += 1;
        if self.forwarded.is_multiple_of(self.cfg.chunk_size as u64) {
            self.snapshot.clone_from(&self.live);
        }
        Ok(&self.logits)
    }

    /// Records the true token; returns a report when a chunk was trained.
    pub fn observe(&mut self, token: usize) -> Result<Option<ChunkReport>> {
        self.chunk.push(token);
        if self.chunk.len() < self.cfg.chunk_size {
            return Ok(None);
        }
        self.chunks_trained += 1;
        let n_iter = self
            .iter_override
            .unwrap_or_else(|| warmup_iters(self.chunks_trained));
        let (state, report) = train_chunk(
            &mut self.trainer,
            &self.layout,
            &mut self.params,
            &mut self.adam,
            &self.cfg,
            &self.snapshot,
            &self.chunk,
            n_iter,
        )?;
        self.live = state;
        self.chunk.clear();
        Ok(Some(report))
    }

    /// 64-bit digest of every mutable value: weights, optimizer moments and
    /// both recurrent states.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |xs: &[F]| {
            for x in xs {
                for b in x.to_f64_lossy().to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
        };
        eat(&self.params);
        eat(&self.adam.m);
        eat(&self.adam.v);
        eat(&self.live.hidden);
        eat(&self.live.conv);
        eat(&self.snapshot.hidden);
        eat(&self.snapshot.conv);
        h ^ self.adam.step ^ (self.forwarded << 32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            chunk_size: 8,
            ..ModelConfig::with_dims(8, 4, 4, 2)
        }
    }

    #[test]
    fn two_replicas_stay_bitwise_equal() {
        let cfg = small_cfg();
        let toks: Vec<usize> = (0..100).map(|i| (i * 7 + i / 3) % 13).collect();
        let mut a = OnlineModel::<f32>::new(&cfg, 13).unwrap();
        let mut b = OnlineModel::<f32>::new(&cfg, 13).unwrap();
        for (i, &t) in toks.iter().enumerate() {
            if i > 0 {
                let la = a.forward(toks[i - 1]).unwrap().to_vec();
                let lb = b.forward(toks[i - 1]).unwrap().to_vec();
                assert_eq!(la, lb);
            }
            a.observe(t).unwrap();
            b.observe(t).unwrap();
            assert_eq!(a.digest(), b.digest());
        }
        assert_eq!(a.chunks_trained(), 100 / 8);
    }

    #[test]
    fn result_does_not_depend_on_thread_count() {
        // Large enough that every parallel loop splits into several tasks.
        let v_e = 5000;
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut m = OnlineModel::<f32>::new(&small_cfg(), v_e).unwrap();
                let mut logits = Vec::new();
                for i in 0..40usize {
                    if i > 0 {
                        logits.extend_from_slice(m.forward((i * 997) % v_e).unwrap());
                    }
                    m.observe((i * 1009 + 3) % v_e).unwrap();
                }
                (m.digest(), logits)
            })
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(4));
    }

    #[test]
    fn zero_iterations_leave_weights_and_roll_state_forward() {
        let cfg = small_cfg();
        let toks: Vec<usize> = (0..8).map(|i| i % 5).collect();
        let mut m = OnlineModel::<f64>::new(&cfg, 5).unwrap();
        m.set_iterations(Some(0));
        let before = m.params().to_vec();
        let mut plain = SsmState::zeros(&m.layout().dims);
        let mut scratch = StepCache::new(&m.layout().dims);
        for (i, &t) in toks.iter().enumerate() {
            if i > 0 {
                m.forward(toks[i - 1]).unwrap();
                step(m.layout(), &before, &mut plain, toks[i - 1], &mut scratch, ForwardProbe::default());
            }
            m.observe(t).unwrap();
        }
        assert_eq!(m.chunks_trained(), 1);
        assert_eq!(m.params(), &before[..]);
        assert_eq!(m.state(), &plain);
    }

    #[test]
    fn rejects_out_of_range_token() {
        let mut m = OnlineModel::<f32>::new(&small_cfg(), 3).unwrap();
        assert!(matches!(m.forward(3), Err(Error::ApiMisuse(_))));
    }
}
