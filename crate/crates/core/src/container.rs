//! Archive layout. All integers little-endian.
//!
//! ```text
//! magic "SSMZ" | version u8 | flags u8 | original_length u64 | token_count u64
//! | v_e u32 | tokenizer_fingerprint u64 | rng_seed u64 | rice_parameter u8
//! | map_length u32 | map bytes | crc32 u32 | payload_length u64 | payload
//! ```
//!
//! `flags` bits 0-1 hold the predictor variant; other bits must be zero.

use crate::error::{corrupt, Error, Result};

pub const MAGIC: [u8; 4] = *b"SSMZ";
pub const VERSION: u8 = 1;
const VARIANT_MASK: u8 = 0b11;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveHeader {
    pub version: u8,
    pub flags: u8,
    pub original_length: u64,
    pub token_count: u64,
    pub v_e: u32,
    pub tokenizer_fingerprint: u64,
    pub rng_seed: u64,
    pub rice_parameter: u8,
    pub map: Vec<u8>,
    pub crc32: u32,
    pub payload_length: u64,
}

impl ArchiveHeader {
    pub fn variant_bits(&self) -> u8 {
        self.flags & VARIANT_MASK
    }

    pub fn encoded_len(&self) -> usize {
        4 + 1 + 1 + 8 + 8 + 4 + 8 + 8 + 1 + 4 + self.map.len() + 4 + 8
    }
}

pub fn write_header(h: &ArchiveHeader, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.push(h.version);
    out.push(h.flags);
    out.extend_from_slice(&h.original_length.to_le_bytes());
    out.extend_from_slice(&h.token_count.to_le_bytes());
    out.extend_from_slice(&h.v_e.to_le_bytes());
    out.extend_from_slice(&h.tokenizer_fingerprint.to_le_bytes());
    out.extend_from_slice(&h.rng_seed.to_le_bytes());
    out.push(h.rice_parameter);
    out.extend_from_slice(&(h.map.len() as u32).to_le_bytes());
    out.extend_from_slice(&h.map);
    out.extend_from_slice(&h.crc32.to_le_bytes());
    out.extend_from_slice(&h.payload_length.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::ShortRead(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
}

/// Parses the header and returns it with the payload that follows.
pub fn read_header(bytes: &[u8]) -> Result<(ArchiveHeader, &[u8])> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.array::<4>("magic")? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = c.u8("flags")?;
    if flags & !VARIANT_MASK != 0 {
        return Err(corrupt(format!("unknown header flags {flags:#04x}")));
    }
    let original_length = c.u64("original length")?;
    let token_count = c.u64("token count")?;
    let v_e = c.u32("vocabulary size")?;
    let tokenizer_fingerprint = c.u64("tokenizer fingerprint")?;
    let rng_seed = c.u64("seed")?;
    let rice_parameter = c.u8("rice parameter")?;
    let map_len = c.u32("map length")? as usize;
    let map = c.take(map_len, "vocabulary map")?.to_vec();
    let crc32 = c.u32("checksum")?;
    let payload_length = c.u64("payload length")?;
    let payload_len = usize::try_from(payload_length).map_err(|_| Error::ShortRead("payload"))?;
    let payload = c.take(payload_len, "payload")?;
    if c.pos != bytes.len() {
        return Err(corrupt("trailing bytes after payload"));
    }
    Ok((
        ArchiveHeader {
            version,
            flags,
            original_length,
            token_count,
            v_e,
            tokenizer_fingerprint,
            rng_seed,
            rice_parameter,
            map,
            crc32,
            payload_length,
        },
        payload,
    ))
}
