//! Compact remapping of the token ids present in one file, and its
//! Rice-coded header representation.
//!
//! Compact ids are assigned in increasing global-id order. The header stores
//! the first global id as-is followed by `gap - 1` for every later id, all as
//! Rice codes with one shared parameter `k` (unary quotient of ones closed by
//! a zero, then `k` remainder bits, most significant bit first).

use crate::bitio::{BitReader, BitWriter};
use crate::error::{corrupt, Result};
use crate::tokenizer::GlobalTokenId;

/// Dense id in `0..v_e`.
pub type CompactTokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabMap {
    compact_to_global: Vec<GlobalTokenId>,
    global_to_compact: Vec<CompactTokenId>,
}

impl VocabMap {
    /// Builds a map from a strictly increasing list of global ids.
    fn from_sorted(compact_to_global: Vec<GlobalTokenId>) -> Self {
        debug_assert!(compact_to_global.windows(2).all(|w| w[0] < w[1]));
        let v_e = compact_to_global.len() as CompactTokenId;
        let span = compact_to_global.last().map_or(0, |&g| g as usize + 1);
        let mut global_to_compact = vec![v_e; span];
        for (c, &g) in compact_to_global.iter().enumerate() {
            global_to_compact[g as usize] = c as CompactTokenId;
        }
        Self {
            compact_to_global,
            global_to_compact,
        }
    }

    /// Number of distinct tokens, `v_e`.
    pub fn len(&self) -> usize {
        self.compact_to_global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compact_to_global.is_empty()
    }

    pub fn compact_to_global(&self) -> &[GlobalTokenId] {
        &self.compact_to_global
    }

    pub fn to_global(&self, c: CompactTokenId) -> Option<GlobalTokenId> {
        self.compact_to_global.get(c as usize).copied()
    }

    /// Compact id of `g`, or `None` if `g` does not occur in the file.
    pub fn to_compact(&self, g: GlobalTokenId) -> Option<CompactTokenId> {
        match self.global_to_compact.get(g as usize) {
            Some(&c) if (c as usize) < self.len() => Some(c),
            _ => None,
        }
    }

    /// Largest global id in the map, if any.
    pub fn max_global(&self) -> Option<GlobalTokenId> {
        self.compact_to_global.last().copied()
    }
}

/// Collects the distinct ids of `tokens` and rewrites the sequence in
/// compact ids.
pub fn build_vocab_map(tokens: &[GlobalTokenId]) -> (VocabMap, Vec<CompactTokenId>) {
    let mut ids = tokens.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let map = VocabMap::from_sorted(ids);
    let remapped = tokens
        .iter()
        .map(|&g| map.global_to_compact[g as usize])
        .collect();
    (map, remapped)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiceCodedMap {
    pub rice_parameter: u8,
    pub payload: Vec<u8>,
}

fn gap_values(ids: &[GlobalTokenId]) -> impl Iterator<Item = u64> + '_ {
    ids.iter().enumerate().map(move |(i, &g)| {
        if i == 0 {
            g as u64
        } else {
            (g - ids[i - 1] - 1) as u64
        }
    })
}

/// `floor(log2(max(1, mean)))` over the values actually coded.
pub fn choose_rice_parameter(ids: &[GlobalTokenId]) -> u8 {
    if ids.is_empty() {
        return 0;
    }
    let sum: u64 = gap_values(ids).sum();
    let mean = (sum / ids.len() as u64).max(1);
    (63 - mean.leading_zeros()) as u8
}

pub fn rice_encode_map(map: &VocabMap) -> RiceCodedMap {
    let ids = map.compact_to_global();
    let k = choose_rice_parameter(ids);
    let mut w = BitWriter::default();
    for v in gap_values(ids) {
        let q = v >> k;
        for _ in 0..q {
            w.put(true);
        }
        w.put(false);
        for bit in (0..k).rev() {
            w.put((v >> bit) & 1 == 1);
        }
    }
    RiceCodedMap {
        rice_parameter: k,
        payload: w.finish(),
    }
}

pub fn rice_decode_map(coded: &RiceCodedMap, v_e: usize) -> Result<VocabMap> {
    let k = coded.rice_parameter as u32;
    if k > 31 {
        return Err(corrupt(format!("rice parameter {k} out of range")));
    }
    let mut r = BitReader::new(&coded.payload);
    let mut ids: Vec<GlobalTokenId> = Vec::with_capacity(v_e);
    for i in 0..v_e {
        let mut q: u64 = 0;
        while r.get()? {
            q += 1;
            if q > u32::MAX as u64 {
                return Err(corrupt("rice quotient overflow"));
            }
        }
        let mut rem: u64 = 0;
        for _ in 0..k {
            rem = (rem << 1) | r.get()? as u64;
        }
        let v = (q << k) | rem;
        let g = if i == 0 {
            v
        } else {
            ids[i - 1] as u64 + v + 1
        };
        if g > GlobalTokenId::MAX as u64 {
            return Err(corrupt("vocabulary id overflow in header map"));
        }
        if i > 0 && g <= ids[i - 1] as u64 {
            return Err(corrupt("vocabulary map is not strictly increasing"));
        }
        ids.push(g as GlobalTokenId);
    }
    Ok(VocabMap::from_sorted(ids))
}
