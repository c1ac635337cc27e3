//! LZ-style pair predictor, recency window and global frequency prior.

use super::hash::mix64;

pub const LZ_MAX_BOOST: f64 = 1.5;
const LZ_RATE: f64 = 0.3;
pub const RECENCY_WINDOW: usize = 64;
pub const RECENCY_LAMBDA: f64 = 0.05;
pub const FREQ_LAMBDA: f64 = 0.1;

pub fn lz_boost(c: u16) -> f64 {
    LZ_MAX_BOOST * (1.0 - 1.0 / (1.0 + c as f64 * LZ_RATE))
}

/// Single-entry table from the last two tokens to the token that followed
/// them most recently, with a run-length confidence.
#[derive(Debug)]
pub struct LzTable {
    keys: Vec<u64>,
    predicted: Vec<u16>,
    count: Vec<u16>,
    mask: usize,
}

fn pair_key(a: u32, b: u32) -> u64 {
    ((a as u64) << 16) | b as u64
}

impl LzTable {
    pub fn new(slot_bits: u32) -> Self {
        let n = 1usize << slot_bits;
        Self {
            keys: vec![0; n],
            predicted: vec![0; n],
            count: vec![0; n],
            mask: n - 1,
        }
    }

    fn slot(&self, key: u64) -> usize {
        mix64(key) as usize & self.mask
    }

    /// Stored `(token, confidence)` for the pair, if any.
    pub fn lookup(&self, prev2: u32, prev1: u32) -> Option<(u16, u16)> {
        let key = pair_key(prev2, prev1);
        let s = self.slot(key);
        (self.count[s] > 0 && self.keys[s] == key).then(|| (self.predicted[s], self.count[s]))
    }

    pub fn predict(&self, prev2: u32, prev1: u32) -> Option<(u16, f64)> {
        self.lookup(prev2, prev1).map(|(t, c)| (t, lz_boost(c)))
    }

    pub fn update(&mut self, prev2: u32, prev1: u32, actual: u16) {
        let key = pair_key(prev2, prev1);
        let s = self.slot(key);
        if self.count[s] > 0 && self.keys[s] == key && self.predicted[s] == actual {
            self.count[s] = self.count[s].saturating_add(1);
        } else {
            self.keys[s] = key;
            self.predicted[s] = actual;
            self.count[s] = 1;
        }
    }
}

/// The last 64 tokens, newest last.
#[derive(Debug)]
pub struct RecencyWindow {
    ring: [u32; RECENCY_WINDOW],
    len: usize,
    head: usize,
    bonus: [f64; RECENCY_WINDOW],
    stamp: Vec<u32>,
    generation: u32,
}

impl RecencyWindow {
    pub fn new(v_e: usize) -> Self {
        let mut bonus = [0.0; RECENCY_WINDOW];
        for (j, b) in bonus.iter_mut().enumerate() {
            *b = RECENCY_LAMBDA * (-3.0 * j as f64 / RECENCY_WINDOW as f64).exp();
        }
        Self {
            ring: [0; RECENCY_WINDOW],
            len: 0,
            head: 0,
            bonus,
            stamp: vec![0; v_e],
            generation: 0,
        }
    }

    pub fn push(&mut self, token: u32) {
        self.ring[self.head] = token;
        self.head = (self.head + 1) % RECENCY_WINDOW;
        self.len = (self.len + 1).min(RECENCY_WINDOW);
    }

    /// Calls `f(token, bonus)` once per distinct token in the window, newest
    /// first. The bonus of the slot `j` places back (newest `j = 1`) is
    /// `0.05 * exp(-3 (j - 1) / 64)`; repeated tokens keep their newest slot.
    pub fn for_each(&mut self, mut f: impl FnMut(u32, f64)) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        for j in 0..self.len {
            let t = self.ring[(self.head + RECENCY_WINDOW - 1 - j) % RECENCY_WINDOW];
            if self.stamp[t as usize] != self.generation {
                self.stamp[t as usize] = self.generation;
                f(t, self.bonus[j]);
            }
        }
    }
}

/// Per-token occurrence counts and the cached prior `0.1 ln(c + 1)`.
#[derive(Debug)]
pub struct GlobalCounts {
    counts: Vec<u64>,
    prior: Vec<f64>,
    total: u64,
}

impl GlobalCounts {
    pub fn new(v_e: usize) -> Self {
        Self {
            counts: vec![0; v_e],
            prior: vec![0.0; v_e],
            total: 0,
        }
    }

    pub fn push(&mut self, token: u32) {
        let c = &mut self.counts[token as usize];
        *c += 1;
        self.prior[token as usize] = freq_prior(*c);
        self.total += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Unscaled prior for every token.
    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

pub fn freq_prior(c: u64) -> f64 {
    FREQ_LAMBDA * (c as f64 + 1.0).ln()
}
