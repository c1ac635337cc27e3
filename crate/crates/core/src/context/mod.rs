//! Count-based evidence: n-gram tables, the pair predictor, recency and the
//! global frequency prior.

pub mod hash;
pub mod predictors;
pub mod table;

use hash::{context_key, KeyMode};
use predictors::{GlobalCounts, LzTable, RecencyWindow};
use table::{BigramArray, Entry, NgramTable};

use crate::error::{Error, Result};

/// One n-gram order: context length and the bias `lambda * ln(1 + c / alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderSpec {
    pub context: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub mode: KeyMode,
}

const fn order(context: usize, lambda: f64, alpha: f64, mode: KeyMode) -> OrderSpec {
    OrderSpec {
        context,
        lambda,
        alpha,
        mode,
    }
}

/// The bigram row; its counts live in a direct array rather than a table.
pub const BIGRAM: OrderSpec = order(1, 0.15, 0.10, KeyMode::Exact);

/// Hashed orders, in the order their biases are applied.
pub const HASHED_ORDERS: [OrderSpec; 8] = [
    order(2, 0.10, 0.05, KeyMode::Exact),
    order(3, 0.08, 0.03, KeyMode::Exact),
    order(4, 0.06, 0.02, KeyMode::Rolling),
    order(5, 0.05, 0.015, KeyMode::Rolling),
    order(6, 0.04, 0.010, KeyMode::Rolling),
    order(7, 0.03, 0.008, KeyMode::Rolling),
    order(15, 0.50, 0.001, KeyMode::Rolling),
    order(31, 1.00, 0.001, KeyMode::Rolling),
];

const MAX_CONTEXT: usize = 31;

pub fn ngram_bias(count: u16, lambda: f64, alpha: f64) -> f64 {
    lambda * (count as f64 / alpha).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableConfig {
    pub ngram_slot_bits: u32,
    pub lz_slot_bits: u32,
    pub probe_depth: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            ngram_slot_bits: 24,
            lz_slot_bits: 22,
            probe_depth: 8,
        }
    }
}

impl TableConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=30).contains(&self.ngram_slot_bits) || !(1..=30).contains(&self.lz_slot_bits) {
            return Err(Error::InvalidConfig("table sizes must be 2^1 ..= 2^30 slots".into()));
        }
        if self.probe_depth == 0 {
            return Err(Error::InvalidConfig("probe depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sparse logit increments gathered for one position, already scaled.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Evidence {
    /// Bigram then hashed orders, each list in stored order; multiplied by `s`.
    pub ngram: Vec<(u32, f64)>,
    pub lz: Option<(u32, f64)>,
    pub recency: Vec<(u32, f64)>,
}

impl Evidence {
    pub fn clear(&mut self) {
        self.ngram.clear();
        self.lz = None;
        self.recency.clear();
    }
}

struct Sparse {
    bigram: BigramArray,
    tables: Vec<NgramTable>,
    lz: LzTable,
    recency: RecencyWindow,
}

/// All count-based stores of one stream. Keys for the next position are
/// computed once after each update and shared by lookup and update.
pub struct ContextModels {
    sparse: Option<Sparse>,
    freq: GlobalCounts,
    history: Vec<u32>,
    keys: [Option<u64>; 8],
    pair_after_history: bool,
}

impl ContextModels {
    /// `with_sparse = false` keeps only the frequency prior.
    pub fn new(v_e: usize, cfg: &TableConfig, with_sparse: bool) -> Result<Self> {
        cfg.validate()?;
        if v_e > 1 << 16 {
            return Err(Error::UnsupportedVocabulary(v_e));
        }
        let sparse = with_sparse.then(|| Sparse {
            bigram: BigramArray::new(v_e),
            tables: HASHED_ORDERS
                .iter()
                .map(|_| NgramTable::new(cfg.ngram_slot_bits, cfg.probe_depth))
                .collect(),
            lz: LzTable::new(cfg.lz_slot_bits),
            recency: RecencyWindow::new(v_e),
        });
        Ok(Self {
            sparse,
            freq: GlobalCounts::new(v_e),
            history: Vec::new(),
            keys: [None; 8],
            pair_after_history: false,
        })
    }

    /// Test-only mutation: record the pair predictor after the history push,
    /// keyed on the wrong context. One side using it must desynchronize.
    #[doc(hidden)]
    pub fn mutate_pair_update_order(&mut self) {
        self.pair_after_history = true;
    }

    pub fn frequency(&self) -> &GlobalCounts {
        &self.freq
    }

    pub fn history(&self) -> &[u32] {
        &self.history
    }

    pub fn tables(&self) -> &[NgramTable] {
        self.sparse.as_ref().map_or(&[], |s| &s.tables)
    }

    pub fn bigram(&self) -> Option<&BigramArray> {
        self.sparse.as_ref().map(|s| &s.bigram)
    }

    /// Key of hashed order `k` for the upcoming position.
    pub fn key(&self, k: usize) -> Option<u64> {
        self.keys[k]
    }

    fn refresh_keys(&mut self) {
        let n = self.history.len();
        let tail = &self.history[n.saturating_sub(MAX_CONTEXT)..];
        for (slot, spec) in self.keys.iter_mut().zip(&HASHED_ORDERS) {
            *slot = (tail.len() >= spec.context)
                .then(|| context_key(spec.mode, &tail[tail.len() - spec.context..]));
        }
    }

    /// Fills `out` with the sparse evidence for the next token; n-gram terms
    /// are multiplied by `s`, pair and recency terms are not.
    pub fn gather(&mut self, s: f64, out: &mut Evidence) {
        out.clear();
        let Some(sp) = self.sparse.as_mut() else {
            return;
        };
        let mut push = |list: Option<&[Entry]>, spec: &OrderSpec| {
            for e in list.into_iter().flatten() {
                out.ngram.push((e.token as u32, s * ngram_bias(e.count, spec.lambda, spec.alpha)));
            }
        };
        let n = self.history.len();
        if n >= 1 {
            push(sp.bigram.lookup(self.history[n - 1]), &BIGRAM);
        }
        for ((table, key), spec) in sp.tables.iter().zip(&self.keys).zip(&HASHED_ORDERS) {
            if let Some(key) = key {
                push(table.lookup(*key), spec);
            }
        }
        if n >= 2 {
            out.lz = sp
                .lz
                .predict(self.history[n - 2], self.history[n - 1])
                .map(|(t, b)| (t as u32, b));
        }
        sp.recency.for_each(|t, b| out.recency.push((t, b)));
    }

    /// Records `token` in every store: recency and frequency first, then the
    /// bigram and hashed tables, then the pair predictor.
    pub fn update(&mut self, token: u32) {
        self.freq.push(token);
        let n = self.history.len();
        if let Some(sp) = self.sparse.as_mut() {
            sp.recency.push(token);
            let t16 = token as u16;
            if n >= 1 {
                sp.bigram.update(self.history[n - 1], t16);
            }
            for (table, key) in sp.tables.iter_mut().zip(&self.keys) {
                if let Some(key) = key {
                    table.update(*key, t16);
                }
            }
            if n >= 2 && !self.pair_after_history {
                sp.lz.update(self.history[n - 2], self.history[n - 1], t16);
            }
        }
        self.history.push(token);
        if let (Some(sp), true) = (self.sparse.as_mut(), self.pair_after_history) {
            if n >= 1 {
                sp.lz.update(self.history[n - 1], token, token as u16);
            }
        }
        if self.sparse.is_some() {
            self.refresh_keys();
        }
    }
}
