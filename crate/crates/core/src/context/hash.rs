//! Context keys and the slot hash.

/// MurmurHash3 `fmix64` finalizer. Bijective on `u64`.
#[inline]
pub fn mix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^ (k >> 33)
}

const ROLL_MULT: u64 = 104_729;

/// Stand-in for an all-zero exact context. Packed keys use at most 48 bits,
/// so this value can never be a real exact key.
pub const EXACT_ZERO_KEY: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyMode {
    /// 16 bits per token, most recent token in the low bits.
    Exact,
    /// Polynomial rolling hash seeded with the context length, then `mix64`.
    Rolling,
}

/// Key of `ctx` (oldest first). Never returns 0, the empty-slot sentinel.
pub fn context_key(mode: KeyMode, ctx: &[u32]) -> u64 {
    match mode {
        KeyMode::Exact => {
            debug_assert!(ctx.len() <= 3);
            let k = ctx.iter().fold(0u64, |k, &t| {
                debug_assert!(t < 1 << 16);
                (k << 16) | t as u64
            });
            if k == 0 {
                EXACT_ZERO_KEY
            } else {
                k
            }
        }
        KeyMode::Rolling => {
            let k = ctx
                .iter()
                .fold(ctx.len() as u64, |k, &t| k.wrapping_mul(ROLL_MULT).wrapping_add(t as u64));
            match mix64(k) {
                0 => 1,
                k => k,
            }
        }
    }
}
