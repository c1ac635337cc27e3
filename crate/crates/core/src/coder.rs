//! 32-bit range coder over integer frequency tables summing to 2^16.
//!
//! The range is renormalized one bit at a time and kept at or above 2^31,
//! so a symbol's sub-interval is never narrower than 2^31 / 2^16 = 32768.
//! Carries use the cache scheme of the LZMA range coder with one-bit digits:
//! the newest settled bit is held back, together with a run of pending ones
//! a carry may still flip. Output is the resulting bit stream, MSB first,
//! zero-padded to a whole byte. The stream has no terminator; the decoder
//! is told how many symbols to read.

use crate::bitio::{BitReader, BitWriter};
use crate::error::{corrupt, Error, Result};

pub const TOTAL_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << TOTAL_BITS;
const TOP: u64 = 1 << 31;

/// Frequencies and their running sums (`cum[v_e] == TOTAL`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuantizedCdf {
    pub freq: Vec<u32>,
    pub cum: Vec<u32>,
}

impl QuantizedCdf {
    pub fn from_freq(freq: Vec<u32>) -> Self {
        let mut cum = Vec::with_capacity(freq.len() + 1);
        let mut acc = 0;
        cum.push(0);
        for &f in &freq {
            acc += f;
            cum.push(acc);
        }
        Self { freq, cum }
    }

    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    /// Symbol whose interval contains `v`.
    fn find(&self, v: u32) -> usize {
        self.cum.partition_point(|&c| c <= v) - 1
    }
}

/// Integer frequencies for `p`: every symbol gets `floor(p * (T - n)) + 1`,
/// then the leftover units go one each to the largest fractional parts,
/// lower index first among equals.
pub fn quantize_cdf(p: &[f64], out: &mut QuantizedCdf) -> Result<()> {
    let n = p.len();
    if n == 0 || n >= TOTAL as usize {
        return Err(Error::UnsupportedVocabulary(n));
    }
    let budget = (TOTAL as usize - n) as f64;
    let mut freq = std::mem::take(&mut out.freq);
    freq.clear();
    // Values are clamped non-negative, so truncation is floor.
    freq.extend(p.iter().map(|&pj| (pj * budget).clamp(0.0, budget) as u32 + 1));
    let sum: i64 = freq.iter().map(|&f| f as i64).sum();
    let mut left = TOTAL as i64 - sum;
    if left != 0 {
        SCRATCH.with_borrow_mut(|order| distribute(p, budget, &mut freq, &mut left, order));
    }
    debug_assert_eq!(left, 0);
    *out = QuantizedCdf::from_freq(freq);
    Ok(())
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<(u64, u32)>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Hands out (or, for an overfull `p`, takes back) the units left over
/// after flooring.
fn distribute(p: &[f64], budget: f64, freq: &mut [u32], left: &mut i64, order: &mut Vec<(u64, u32)>) {
    let n = p.len();
    // Fractions lie in [0, 1), where the bit pattern orders like the value.
    // Key: larger fraction first, then lower index.
    order.clear();
    order.extend(p.iter().enumerate().map(|(j, &pj)| {
        let x = (pj * budget).clamp(0.0, budget);
        (u64::MAX - (x - (x as u32) as f64).to_bits(), j as u32)
    }));
    if *left > 0 {
        let k = *left as usize;
        if k < n {
            order.select_nth_unstable(k - 1);
        } else {
            order.sort_unstable();
        }
        while *left > 0 {
            let m = (*left as usize).min(n);
            for &(_, j) in &order[..m] {
                freq[j as usize] += 1;
            }
            *left -= m as i64;
        }
    } else {
        // Only reachable when `p` sums to more than 1: take units back from
        // the smallest fractions, skipping symbols already at 1.
        order.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
        while *left < 0 {
            for &(_, j) in order.iter() {
                if *left == 0 {
                    break;
                }
                if freq[j as usize] > 1 {
                    freq[j as usize] -= 1;
                    *left += 1;
                }
            }
        }
    }
}

#[derive(Default)]
pub struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: BitWriter,
    started: bool,
    finished: bool,
    narrowest: u32,
}

impl Encoder {
    pub fn new() -> Self {
        Self {
            range: u32::MAX,
            cache_size: 1,
            narrowest: u32::MAX,
            ..Self::default()
        }
    }

    fn shift_bit(&mut self) {
        if self.low < TOP || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut digit = self.cache;
            loop {
                // The very first digit is the initial empty cache; skip it.
                if self.started {
                    self.out.put((digit + carry) & 1 == 1);
                }
                self.started = true;
                digit = 1;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 31) & 1) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & (TOP - 1)) << 1;
    }

    pub fn encode(&mut self, cdf: &QuantizedCdf, sym: usize) {
        debug_assert!(!self.finished);
        let r = self.range >> TOTAL_BITS;
        self.low += r as u64 * cdf.cum[sym] as u64;
        self.range = r * cdf.freq[sym];
        self.narrowest = self.narrowest.min(self.range);
        while (self.range as u64) < TOP {
            self.range <<= 1;
            self.shift_bit();
        }
    }

    /// Bits committed to the output so far, counting held-back digits.
    pub fn bits(&self) -> u64 {
        self.out.bit_len() + self.cache_size - 1
    }

    /// Smallest interval width seen right after narrowing.
    pub fn narrowest_range(&self) -> u32 {
        self.narrowest
    }

    pub fn finish(&mut self) -> Result<Vec<u8>> {
        if self.finished {
            return Err(Error::ApiMisuse("range encoder finished twice"));
        }
        self.finished = true;
        for _ in 0..33 {
            self.shift_bit();
        }
        Ok(std::mem::take(&mut self.out).finish())
    }
}

pub struct Decoder<'a> {
    code: u64,
    range: u32,
    input: BitReader<'a>,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut input = BitReader::new(bytes);
        let mut code = 0u64;
        for _ in 0..32 {
            code = (code << 1) | input.get()? as u64;
        }
        Ok(Self {
            code,
            range: u32::MAX,
            input,
        })
    }

    pub fn decode(&mut self, cdf: &QuantizedCdf) -> Result<usize> {
        let r = self.range >> TOTAL_BITS;
        let v = self.code / r as u64;
        if v >= TOTAL as u64 {
            return Err(corrupt("range decoder left the code interval"));
        }
        let sym = cdf.find(v as u32);
        self.code -= r as u64 * cdf.cum[sym] as u64;
        self.range = r * cdf.freq[sym];
        while (self.range as u64) < TOP {
            self.range <<= 1;
            self.code = (self.code << 1) | self.input.get()? as u64;
        }
        Ok(sym)
    }
}
