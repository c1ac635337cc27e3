//! Byte-level BPE tokenization over an external vocabulary asset.
//!
//! The asset is a JSON document:
//!
//! ```json
//! {"format": "byte-bpe/1",
//!  "vocab": ["21", "22", ...],
//!  "merges": [[a, b], ...]}
//! ```
//!
//! `vocab[id]` is the hex encoding of the token's bytes; `merges` lists the
//! pair-merge rules in priority order (index = rank), each naming the two
//! token ids whose concatenation is itself a vocabulary entry. Every single
//! byte must appear as its own entry so that any input tokenizes.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::Deserialize;

use crate::error::{corrupt, Error, Result};

pub const FORMAT_TAG: &str = "byte-bpe/1";

/// Token id in the tokenizer's global vocabulary, `0..V`.
pub type GlobalTokenId = u32;

#[derive(Deserialize)]
struct AssetFile {
    format: String,
    vocab: Vec<String>,
    merges: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, Copy)]
struct MergeRule {
    rank: u32,
    result: GlobalTokenId,
}

/// An immutable BPE vocabulary plus its merge table.
#[derive(Debug, Clone)]
pub struct TokenizerDefinition {
    vocab: Vec<Vec<u8>>,
    merges: Vec<(GlobalTokenId, GlobalTokenId)>,
    fingerprint: u64,
    byte_tokens: [GlobalTokenId; 256],
    rules: HashMap<(GlobalTokenId, GlobalTokenId), MergeRule>,
}

impl TokenizerDefinition {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::TokenizerDefinition(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let asset: AssetFile = serde_json::from_str(text)
            .map_err(|e| Error::TokenizerDefinition(format!("malformed JSON: {e}")))?;
        if asset.format != FORMAT_TAG {
            return Err(Error::TokenizerDefinition(format!(
                "unknown format tag {:?}",
                asset.format
            )));
        }
        let vocab = asset
            .vocab
            .iter()
            .enumerate()
            .map(|(i, h)| {
                hex::decode(h).map_err(|e| {
                    Error::TokenizerDefinition(format!("entry {i}: bad hex ({e})"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let merges = asset.merges.iter().map(|[a, b]| (*a, *b)).collect();
        Self::from_parts(vocab, merges)
    }

    /// Builds a definition from raw parts, validating every invariant.
    pub fn from_parts(
        vocab: Vec<Vec<u8>>,
        merges: Vec<(GlobalTokenId, GlobalTokenId)>,
    ) -> Result<Self> {
        let bad = |msg: String| Error::TokenizerDefinition(msg);
        if vocab.len() > u32::MAX as usize {
            return Err(bad("vocabulary too large".into()));
        }
        let mut by_bytes: HashMap<&[u8], GlobalTokenId> = HashMap::with_capacity(vocab.len());
        for (id, entry) in vocab.iter().enumerate() {
            if entry.is_empty() {
                return Err(bad(format!("entry {id} is empty")));
            }
            if by_bytes.insert(entry.as_slice(), id as GlobalTokenId).is_some() {
                return Err(bad(format!("entry {id} duplicates an earlier entry")));
            }
        }
        let mut byte_tokens = [0; 256];
        for b in 0..=255u8 {
            byte_tokens[b as usize] = *by_bytes
                .get([b].as_slice())
                .ok_or_else(|| bad(format!("byte 0x{b:02x} has no single-byte entry")))?;
        }
        let mut rules = HashMap::with_capacity(merges.len());
        let mut joined = Vec::new();
        for (rank, &(left, right)) in merges.iter().enumerate() {
            let (l, r) = match (vocab.get(left as usize), vocab.get(right as usize)) {
                (Some(l), Some(r)) => (l, r),
                _ => return Err(bad(format!("merge {rank} references an unknown id"))),
            };
            joined.clear();
            joined.extend_from_slice(l);
            joined.extend_from_slice(r);
            let result = *by_bytes
                .get(joined.as_slice())
                .ok_or_else(|| bad(format!("merge {rank} produces no vocabulary entry")))?;
            rules.entry((left, right)).or_insert(MergeRule {
                rank: rank as u32,
                result,
            });
        }
        let fingerprint = fingerprint_of(&vocab, &merges);
        Ok(Self {
            vocab,
            merges,
            fingerprint,
            byte_tokens,
            rules,
        })
    }

    /// Number of global token ids, `V`.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn token_bytes(&self, id: GlobalTokenId) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(Vec::as_slice)
    }

    pub fn merges(&self) -> &[(GlobalTokenId, GlobalTokenId)] {
        &self.merges
    }

    /// Tokenizes `bytes`, applying the lowest-ranked applicable merge first
    /// and, among equal ranks, the leftmost occurrence first.
    pub fn encode(&self, bytes: &[u8]) -> Vec<GlobalTokenId> {
        const NONE: u32 = u32::MAX;
        let n = bytes.len();
        if n == 0 {
            return Vec::new();
        }
        assert!(n < NONE as usize, "input too large to tokenize");
        let mut tok: Vec<GlobalTokenId> = bytes.iter().map(|&b| self.byte_tokens[b as usize]).collect();
        let mut prev: Vec<u32> = (0..n as u32).map(|i| i.wrapping_sub(1)).collect();
        let mut next: Vec<u32> = (1..=n as u32).collect();
        next[n - 1] = NONE;
        prev[0] = NONE;
        let mut alive = vec![true; n];

        let mut heap = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some(rule) = self.rules.get(&(tok[i], tok[i + 1])) {
                heap.push(Reverse((rule.rank, i as u32)));
            }
        }

        while let Some(Reverse((rank, pos))) = heap.pop() {
            let p = pos as usize;
            if !alive[p] || next[p] == NONE {
                continue;
            }
            let q = next[p] as usize;
            let rule = match self.rules.get(&(tok[p], tok[q])) {
                Some(rule) if rule.rank == rank => *rule,
                _ => continue,
            };
            tok[p] = rule.result;
            alive[q] = false;
            next[p] = next[q];
            if next[q] != NONE {
                prev[next[q] as usize] = pos;
            }
            if prev[p] != NONE {
                let l = prev[p] as usize;
                if let Some(r) = self.rules.get(&(tok[l], tok[p])) {
                    heap.push(Reverse((r.rank, l as u32)));
                }
            }
            if next[p] != NONE {
                if let Some(r) = self.rules.get(&(tok[p], tok[next[p] as usize])) {
                    heap.push(Reverse((r.rank, pos)));
                }
            }
        }

        let mut out = Vec::new();
        let mut i = 0u32;
        while i != NONE {
            out.push(tok[i as usize]);
            i = next[i as usize];
        }
        out
    }

    /// Concatenates the byte sequences of `tokens`.
    pub fn decode(&self, tokens: &[GlobalTokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &t in tokens {
            let bytes = self
                .token_bytes(t)
                .ok_or_else(|| corrupt(format!("token id {t} outside vocabulary")))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }
}

/// FNV-1a over a canonical serialization of the vocabulary and merges.
fn fingerprint_of(vocab: &[Vec<u8>], merges: &[(GlobalTokenId, GlobalTokenId)]) -> u64 {
    let mut h = Fnv64::new();
    h.write(FORMAT_TAG.as_bytes());
    h.write(&(vocab.len() as u64).to_le_bytes());
    for entry in vocab {
        h.write(&(entry.len() as u32).to_le_bytes());
        h.write(entry);
    }
    h.write(&(merges.len() as u64).to_le_bytes());
    for &(a, b) in merges {
        h.write(&a.to_le_bytes());
        h.write(&b.to_le_bytes());
    }
    h.finish()
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// 256 byte entries plus a handful of merges over "ab", "abc", "aa".
    pub(crate) fn toy_definition() -> TokenizerDefinition {
        let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        vocab.push(b"ab".to_vec()); // 256
        vocab.push(b"abc".to_vec()); // 257
        vocab.push(b"aa".to_vec()); // 258
        vocab.push(b"aaaa".to_vec()); // 259
        let merges = vec![
            (b'a' as u32, b'b' as u32),
            (256, b'c' as u32),
            (b'a' as u32, b'a' as u32),
            (258, 258),
        ];
        TokenizerDefinition::from_parts(vocab, merges).unwrap()
    }

    #[test]
    fn empty_input_gives_empty_sequence() {
        let def = toy_definition();
        assert!(def.encode(b"").is_empty());
        assert!(def.decode(&[]).unwrap().is_empty());
    }

    #[test]
    fn no_applicable_merges_gives_one_token_per_byte() {
        let def = toy_definition();
        assert_eq!(def.encode(b"zzzz"), vec![b'z' as u32; 4]);
    }

    #[test]
    fn merges_apply_in_rank_order() {
        let def = toy_definition();
        assert_eq!(def.encode(b"abc"), vec![257]);
        assert_eq!(def.encode(b"xabcab"), vec![b'x' as u32, 257, 256]);
        // "aaaaa": pairs merge leftmost first, then the two "aa" join.
        assert_eq!(def.encode(b"aaaaa"), vec![259, b'a' as u32]);
    }

    #[test]
    fn single_byte_token_decodes() {
        let def = toy_definition();
        assert_eq!(def.decode(&[0x41]).unwrap(), b"A");
    }

    #[test]
    fn out_of_range_id_is_corrupt() {
        let def = toy_definition();
        assert!(matches!(def.decode(&[9999]), Err(Error::CorruptArchive(_))));
    }

    #[test]
    fn missing_byte_entry_is_rejected() {
        let vocab: Vec<Vec<u8>> = (0..=254u8).map(|b| vec![b]).collect();
        assert!(matches!(
            TokenizerDefinition::from_parts(vocab, vec![]),
            Err(Error::TokenizerDefinition(_))
        ));
    }

    #[test]
    fn merge_without_result_entry_is_rejected() {
        let vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        assert!(TokenizerDefinition::from_parts(vocab, vec![(1, 2)]).is_err());
    }

    #[test]
    fn malformed_json_is_a_definition_error() {
        assert!(matches!(
            TokenizerDefinition::from_json_str("{\"format\": 3"),
            Err(Error::TokenizerDefinition(_))
        ));
        assert!(matches!(
            TokenizerDefinition::from_json_str(r#"{"format":"other","vocab":[],"merges":[]}"#),
            Err(Error::TokenizerDefinition(_))
        ));
    }

    #[test]
    fn fingerprint_is_deterministic() {
        assert_eq!(toy_definition().fingerprint(), toy_definition().fingerprint());
    }

    #[test]
    fn single_rule_mutations_change_the_fingerprint() {
        let base = toy_definition();
        let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut merges = Vec::new();
        // 100 merges of the form (x, y) -> "xy" over printable bytes.
        for i in 0..100u32 {
            let (x, y) = (b'A' + (i / 10) as u8, b'a' + (i % 10) as u8);
            vocab.push(vec![x, y]);
            merges.push((x as u32, y as u32));
        }
        let reference = TokenizerDefinition::from_parts(vocab.clone(), merges.clone()).unwrap();
        let mut seen = std::collections::HashSet::new();
        seen.insert(reference.fingerprint());
        seen.insert(base.fingerprint());
        for i in 0..merges.len() {
            // Swap rule i with its neighbour: same rule set, different priority.
            let mut mutated = merges.clone();
            let j = (i + 1) % merges.len();
            mutated.swap(i, j);
            let def = TokenizerDefinition::from_parts(vocab.clone(), mutated).unwrap();
            assert_ne!(def.fingerprint(), reference.fingerprint(), "mutation {i}");
            seen.insert(def.fingerprint());
        }
        assert_eq!(seen.len(), 2 + merges.len());
    }

    proptest! {
        #[test]
        fn round_trip_random_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
            let def = toy_definition();
            let tokens = def.encode(&bytes);
            prop_assert_eq!(def.decode(&tokens).unwrap(), bytes);
        }

        #[test]
        fn round_trip_merge_heavy_input(bytes in proptest::collection::vec(
            prop_oneof![Just(b'a'), Just(b'b'), Just(b'c')], 0..400)) {
            let def = toy_definition();
            let tokens = def.encode(&bytes);
            prop_assert!(tokens.len() <= bytes.len());
            prop_assert_eq!(def.decode(&tokens).unwrap(), bytes);
        }
    }
}
