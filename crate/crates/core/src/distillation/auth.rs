//! Wegman-Carter authentication: a polynomial hash over GF(2^64) masked by a
//! one-time pad, both drawn from a shared, never-reused key pool.

use std::ops::Range;

use thiserror::Error;

use crate::bits::BitString;

/// Tag width used on the classical channel.
pub const TAG_BITS: usize = 64;
/// Hash-key bits consumed per tag.
pub const HASH_KEY_BITS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum AuthError {
    #[error("authentication key pool depleted: need {need} bits, {available} available")]
    KeyDepletion { need: usize, available: usize },
    #[error("tag length {0} outside 1..=64")]
    TagLength(usize),
}

/// Shared secret bits for authentication. Bits are withdrawn strictly in order
/// and every withdrawal is logged so reuse can be audited.
#[derive(Debug, Clone, Default)]
pub struct AuthKeyPool {
    bits: BitString,
    consumed: usize,
    ledger: Vec<Range<usize>>,
}

impl AuthKeyPool {
    pub fn new(bits: BitString) -> Self {
        Self {
            bits,
            consumed: 0,
            ledger: Vec::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.bits.len()
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn available(&self) -> usize {
        self.bits.len() - self.consumed
    }

    /// Every bit ever placed in the pool, spent or not.
    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    /// Appends fresh key material at the end of the pool.
    pub fn replenish(&mut self, bits: &BitString) {
        self.bits.extend_from(bits);
    }

    /// Index ranges of every withdrawal, in order.
    pub fn ledger(&self) -> &[Range<usize>] {
        &self.ledger
    }

    pub fn withdraw(&mut self, n: usize) -> Result<BitString, AuthError> {
        if n > self.available() {
            return Err(AuthError::KeyDepletion {
                need: n,
                available: self.available(),
            });
        }
        let range = self.consumed..self.consumed + n;
        let out = self.bits.slice(range.start, range.end);
        self.consumed += n;
        self.ledger.push(range);
        Ok(out)
    }

    fn withdraw_u64(&mut self, n: usize) -> Result<u64, AuthError> {
        let bits = self.withdraw(n)?;
        Ok(bits.words().first().copied().unwrap_or(0))
    }
}

/// Carry-less multiply modulo x^64 + x^4 + x^3 + x + 1.
pub fn gf64_mul(a: u64, b: u64) -> u64 {
    let mut hi = 0u64;
    let mut lo = 0u64;
    for i in 0..64 {
        if (b >> i) & 1 == 1 {
            lo ^= a << i;
            if i > 0 {
                hi ^= a >> (64 - i);
            }
        }
    }
    // fold the high word twice; x^64 = x^4 + x^3 + x + 1
    for _ in 0..2 {
        let h = hi;
        hi = (h >> 60) ^ (h >> 61) ^ (h >> 63);
        lo ^= h ^ (h << 1) ^ (h << 3) ^ (h << 4);
    }
    lo
}

/// Polynomial evaluation of the message (8-byte little-endian words,
/// zero-padded, followed by the byte length) at `key`.
pub fn poly_hash(key: u64, message: &[u8]) -> u64 {
    let mut acc = 0u64;
    for chunk in message.chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        acc = gf64_mul(acc ^ u64::from_le_bytes(word), key);
    }
    gf64_mul(acc ^ message.len() as u64, key)
}

fn check_tag_len(tag_len: usize) -> Result<u64, AuthError> {
    if tag_len == 0 || tag_len > 64 {
        return Err(AuthError::TagLength(tag_len));
    }
    Ok(if tag_len == 64 {
        u64::MAX
    } else {
        (1u64 << tag_len) - 1
    })
}

/// Consumes a 64-bit hash key and a `tag_len`-bit pad, and returns the tag.
pub fn wc_tag(pool: &mut AuthKeyPool, message: &[u8], tag_len: usize) -> Result<u64, AuthError> {
    let mask = check_tag_len(tag_len)?;
    let need = HASH_KEY_BITS + tag_len;
    if pool.available() < need {
        return Err(AuthError::KeyDepletion {
            need,
            available: pool.available(),
        });
    }
    let key = pool.withdraw_u64(HASH_KEY_BITS)?;
    let pad = pool.withdraw_u64(tag_len)?;
    Ok((poly_hash(key, message) ^ pad) & mask)
}

/// Recomputes the tag from the receiver's pool. Consumes the same key
/// material as [`wc_tag`]; a desynchronised pool simply rejects.
pub fn wc_verify(
    pool: &mut AuthKeyPool,
    message: &[u8],
    tag: u64,
    tag_len: usize,
) -> Result<bool, AuthError> {
    Ok(wc_tag(pool, message, tag_len)? == tag)
}
