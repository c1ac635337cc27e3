//! The per-token predict / code / update loop shared by compression and
//! decompression.
//!
//! Both directions drive one [`Engine`] with the same token sequence, so every
//! probability table the decoder sees is bit-identical to the encoder's.

use crate::coder::{quantize_cdf, Decoder, Encoder, QuantizedCdf};
use crate::container::{read_header, write_header, ArchiveHeader, VERSION};
use crate::context::{ContextModels, Evidence, TableConfig};
use crate::error::{corrupt, Error, Result};
use crate::mixer::{snap_logits, softmax, MixConfig, Mixer, LOGIT_SNAP};
use crate::ssm::{ModelConfig, OnlineModel};
use crate::tokenizer::TokenizerDefinition;
use crate::vocabmap::{build_vocab_map, rice_decode_map, rice_encode_map, RiceCodedMap};

/// Which terms of the combined logits are active. The frequency prior is
/// always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    #[default]
    Full,
    SsmCount,
    NgramCount,
    CountOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::SsmCount,
        Variant::NgramCount,
        Variant::CountOnly,
    ];

    pub fn uses_model(self) -> bool {
        matches!(self, Variant::Full | Variant::SsmCount)
    }

    pub fn uses_sparse(self) -> bool {
        matches!(self, Variant::Full | Variant::NgramCount)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SsmCount => "ssm+count",
            Variant::NgramCount => "ngram+count",
            Variant::CountOnly => "count-only",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    fn bits(self) -> u8 {
        self as u8
    }

    fn from_bits(b: u8) -> Self {
        Self::ALL[(b & 3) as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecOptions {
    pub model: ModelConfig,
    pub tables: TableConfig,
    pub mix: MixConfig,
    pub variant: Variant,
    /// Tokens between progress samples.
    pub stats_interval: u64,
}

impl Default for CodecOptions {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            tables: TableConfig::default(),
            mix: MixConfig::default(),
            variant: Variant::Full,
            stats_interval: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressPoint {
    pub tokens: u64,
    pub cumulative_bits: u64,
    /// Bits per token over the interval ending here.
    pub interval_bpt: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProgressTrace {
    pub points: Vec<ProgressPoint>,
}

impl ProgressTrace {
    /// Tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("tokens\tcumulative_bits\tbpt\n");
        for p in &self.points {
            s.push_str(&format!("{}\t{}\t{:.4}\n", p.tokens, p.cumulative_bits, p.interval_bpt));
        }
        s
    }
}

pub type ChunkHook<'a> = dyn FnMut(u64, &OnlineModel<f32>) + 'a;

/// Observers and test hooks. None of them affect the coded stream except
/// the explicitly hidden mutation switches.
#[derive(Default)]
pub struct Hooks<'a> {
    /// Called after each trained chunk with its 1-based index.
    pub on_chunk: Option<&'a mut ChunkHook<'a>>,
    /// Called at every progress sample.
    pub on_progress: Option<&'a mut dyn FnMut(&ProgressPoint)>,
    /// Constant added to every model logit. Must be a multiple of 2^-16 no
    /// larger than 4096 in magnitude, which keeps the addition exact.
    #[doc(hidden)]
    pub logit_shift: f64,
    /// Apply the pair-predictor update out of order on this side.
    #[doc(hidden)]
    pub mutate_update_order: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecReport {
    pub tokens: u64,
    pub v_e: usize,
    pub chunks_trained: u64,
    /// Encoded payload size in bits (compression only).
    pub payload_bits: u64,
    pub trace: ProgressTrace,
}

/// Everything that adapts while coding one stream.
struct Engine {
    model: Option<OnlineModel<f32>>,
    ctx: ContextModels,
    mixer: Mixer,
    ssm: Vec<f64>,
    evidence: Evidence,
    logits: Vec<f64>,
    probs: Vec<f64>,
    cdf: QuantizedCdf,
    prev: Option<u32>,
    logit_shift: f64,
}

impl Engine {
    fn new(opts: &CodecOptions, v_e: usize, hooks: &Hooks) -> Result<Self> {
        let shift = hooks.logit_shift;
        if !shift.is_finite() || (shift / LOGIT_SNAP).fract() != 0.0 || shift.abs() > 4096.0 {
            return Err(Error::InvalidConfig("logit shift must be a multiple of 2^-16 within ±4096".into()));
        }
        let model = if opts.variant.uses_model() {
            Some(OnlineModel::new(&opts.model, v_e)?)
        } else {
            opts.model.validate()?;
            None
        };
        let mut ctx = ContextModels::new(v_e, &opts.tables, opts.variant.uses_sparse())?;
        if hooks.mutate_update_order {
            ctx.mutate_pair_update_order();
        }
        Ok(Self {
            model,
            ctx,
            mixer: Mixer::new(opts.mix),
            ssm: vec![0.0; v_e],
            evidence: Evidence::default(),
            logits: Vec::with_capacity(v_e),
            probs: Vec::with_capacity(v_e),
            cdf: QuantizedCdf::default(),
            prev: None,
            logit_shift: shift,
        })
    }

    /// Builds the quantized distribution for the next token.
    fn predict(&mut self) -> Result<&QuantizedCdf> {
        let s = match self.model.as_mut() {
            Some(model) => {
                // The first token has no predecessor: model logits are zero.
                if let Some(prev) = self.prev {
                    snap_logits(model.forward(prev as usize)?, &mut self.ssm);
                }
                if self.logit_shift != 0.0 {
                    self.ssm.iter_mut().for_each(|x| *x += self.logit_shift);
                }
                self.mixer.scale(Some(&self.ssm))?
            }
            None => self.mixer.scale(None)?,
        };
        self.ctx.gather(s, &mut self.evidence);
        self.mixer
            .combine(self.ctx.frequency().prior(), s, &self.evidence, &mut self.logits);
        softmax(&self.logits, &mut self.probs)?;
        quantize_cdf(&self.probs, &mut self.cdf)?;
        Ok(&self.cdf)
    }

    /// Records the true token; returns whether a chunk was trained.
    fn update(&mut self, token: u32) -> Result<bool> {
        self.ctx.update(token);
        self.prev = Some(token);
        match self.model.as_mut() {
            Some(m) => Ok(m.observe(token as usize)?.is_some()),
            None => Ok(false),
        }
    }
}

struct Tracker {
    interval: u64,
    last_tokens: u64,
    last_bits: u64,
    trace: ProgressTrace,
    chunks: u64,
}

impl Tracker {
    fn new(interval: u64) -> Self {
        Self {
            interval: interval.max(1),
            last_tokens: 0,
            last_bits: 0,
            trace: ProgressTrace::default(),
            chunks: 0,
        }
    }

    fn after_token(&mut self, engine: &Engine, trained: bool, tokens: u64, bits: Option<u64>, total: u64, hooks: &mut Hooks) {
        if trained {
            self.chunks += 1;
            if let (Some(f), Some(m)) = (hooks.on_chunk.as_mut(), engine.model.as_ref()) {
                f(self.chunks, m);
            }
        }
        let Some(bits) = bits else { return };
        if tokens.is_multiple_of(self.interval) || tokens == total {
            let point = ProgressPoint {
                tokens,
                cumulative_bits: bits,
                interval_bpt: (bits - self.last_bits) as f64 / (tokens - self.last_tokens) as f64,
            };
            self.last_tokens = tokens;
            self.last_bits = bits;
            if let Some(f) = hooks.on_progress.as_mut() {
                f(&point);
            }
            self.trace.points.push(point);
        }
    }
}

pub fn compress(input: &[u8], tok: &TokenizerDefinition, opts: &CodecOptions) -> Result<Vec<u8>> {
    compress_with(input, tok, opts, &mut Hooks::default()).map(|(a, _)| a)
}

pub fn compress_with(
    input: &[u8],
    tok: &TokenizerDefinition,
    opts: &CodecOptions,
    hooks: &mut Hooks,
) -> Result<(Vec<u8>, CodecReport)> {
    let global = tok.encode(input);
    let (map, tokens) = build_vocab_map(&global);
    let v_e = map.len();
    let coded = rice_encode_map(&map);

    let mut tracker = Tracker::new(opts.stats_interval);
    let mut enc = Encoder::new();
    if v_e > 0 {
        let mut engine = Engine::new(opts, v_e, hooks)?;
        let total = tokens.len() as u64;
        for (i, &t) in tokens.iter().enumerate() {
            let cdf = engine.predict()?;
            enc.encode(cdf, t as usize);
            let trained = engine.update(t)?;
            tracker.after_token(&engine, trained, i as u64 + 1, Some(enc.bits()), total, hooks);
        }
    }
    let payload_bits = enc.bits();
    let payload = if v_e > 0 { enc.finish()? } else { Vec::new() };

    let header = ArchiveHeader {
        version: VERSION,
        flags: opts.variant.bits(),
        original_length: input.len() as u64,
        token_count: tokens.len() as u64,
        v_e: v_e as u32,
        tokenizer_fingerprint: tok.fingerprint(),
        rng_seed: opts.model.rng_seed,
        rice_parameter: coded.rice_parameter,
        map: coded.payload,
        crc32: crc32fast::hash(input),
        payload_length: payload.len() as u64,
    };
    let mut out = Vec::with_capacity(header.encoded_len() + payload.len());
    write_header(&header, &mut out);
    out.extend_from_slice(&payload);
    let report = CodecReport {
        tokens: tokens.len() as u64,
        v_e,
        chunks_trained: tracker.chunks,
        payload_bits: if v_e > 0 { payload_bits } else { 0 },
        trace: tracker.trace,
    };
    Ok((out, report))
}

/// Decompresses `archive`. The variant and seed come from the header; the
/// remaining options must match those used for compression.
pub fn decompress(archive: &[u8], tok: &TokenizerDefinition, opts: &CodecOptions) -> Result<Vec<u8>> {
    decompress_with(archive, tok, opts, &mut Hooks::default()).map(|(b, _)| b)
}

pub fn decompress_with(
    archive: &[u8],
    tok: &TokenizerDefinition,
    opts: &CodecOptions,
    hooks: &mut Hooks,
) -> Result<(Vec<u8>, CodecReport)> {
    let (h, payload) = read_header(archive)?;
    if h.tokenizer_fingerprint != tok.fingerprint() {
        return Err(Error::IncompatibleTokenizer {
            archive: h.tokenizer_fingerprint,
            loaded: tok.fingerprint(),
        });
    }
    let v_e = h.v_e as usize;
    if v_e > tok.vocab_size() || v_e > 1 << 16 {
        return Err(corrupt(format!("vocabulary size {v_e} out of range")));
    }
    if (v_e == 0) != (h.token_count == 0) || h.token_count < v_e as u64 || h.token_count > h.original_length {
        return Err(corrupt("inconsistent token count"));
    }
    let map = rice_decode_map(
        &RiceCodedMap {
            rice_parameter: h.rice_parameter,
            payload: h.map.clone(),
        },
        v_e,
    )?;
    if map.max_global().is_some_and(|g| g as usize >= tok.vocab_size()) {
        return Err(corrupt("vocabulary map refers to unknown tokens"));
    }

    let mut opts = opts.clone();
    opts.variant = Variant::from_bits(h.variant_bits());
    opts.model.rng_seed = h.rng_seed;

    let mut tracker = Tracker::new(opts.stats_interval);
    let mut global = Vec::with_capacity(h.token_count as usize);
    if v_e > 0 {
        let mut engine = Engine::new(&opts, v_e, hooks)?;
        let mut dec = Decoder::new(payload)?;
        for i in 0..h.token_count {
            let t = dec.decode(engine.predict()?)? as u32;
            global.push(map.to_global(t).expect("decoded symbol is below v_e"));
            let trained = engine.update(t)?;
            tracker.after_token(&engine, trained, i + 1, None, h.token_count, hooks);
        }
    } else if !payload.is_empty() {
        return Err(corrupt("payload present for empty input"));
    }
    let bytes = tok.decode(&global)?;
    if bytes.len() as u64 != h.original_length {
        return Err(corrupt("decoded length differs from header"));
    }
    if crc32fast::hash(&bytes) != h.crc32 {
        return Err(Error::ChecksumMismatch);
    }
    let report = CodecReport {
        tokens: h.token_count,
        v_e,
        chunks_trained: tracker.chunks,
        payload_bits: payload.len() as u64 * 8,
        trace: tracker.trace,
    };
    Ok((bytes, report))
}
