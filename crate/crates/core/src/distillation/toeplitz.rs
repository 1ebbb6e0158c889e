//! Toeplitz-matrix hashing over GF(2).
//!
//! For input length n and output length m the seed has n + m - 1 bits and the
//! matrix entry is `T[i][j] = seed[i - j + n - 1]`, so row 0 reads the seed
//! backwards from `seed[n - 1]` and each later row shifts by one.

use thiserror::Error;

use crate::bits::BitString;

#[derive(Debug, Error, PartialEq)]
pub enum ToeplitzError {
    #[error(
        "Toeplitz seed has {got} bits, need {need} for {input}-bit input and {output}-bit output"
    )]
    SeedLength {
        got: usize,
        need: usize,
        input: usize,
        output: usize,
    },
}

pub fn seed_len(input_len: usize, out_len: usize) -> usize {
    (input_len + out_len).saturating_sub(1)
}

/// A seed checked against its matrix shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzSeed {
    bits: BitString,
    input_len: usize,
    out_len: usize,
}

impl ToeplitzSeed {
    pub fn new(bits: BitString, input_len: usize, out_len: usize) -> Result<Self, ToeplitzError> {
        let need = seed_len(input_len, out_len);
        if bits.len() != need {
            return Err(ToeplitzError::SeedLength {
                got: bits.len(),
                need,
                input: input_len,
                output: out_len,
            });
        }
        Ok(Self {
            bits,
            input_len,
            out_len,
        })
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn hash(&self, input: &BitString) -> Result<BitString, ToeplitzError> {
        toeplitz_hash(&self.bits, input, self.out_len)
    }
}

/// Multiplies the Toeplitz matrix defined by `seed` with `input`.
///
/// Row i of the matrix is a contiguous window of the reversed seed starting
/// at `m - 1 - i`, so each output bit is the parity of a word-wise AND.
pub fn toeplitz_hash(
    seed: &BitString,
    input: &BitString,
    out_len: usize,
) -> Result<BitString, ToeplitzError> {
    let n = input.len();
    let need = seed_len(n, out_len);
    if seed.len() != need {
        return Err(ToeplitzError::SeedLength {
            got: seed.len(),
            need,
            input: n,
            output: out_len,
        });
    }
    if out_len == 0 {
        return Ok(BitString::new());
    }
    let reversed: BitString = (0..need).rev().map(|k| seed.get(k)).collect();
    let x = input.words();
    let mut out = BitString::zeros(out_len);
    for i in 0..out_len {
        let offset = out_len - 1 - i;
        let mut acc = 0u64;
        for (k, &w) in x.iter().enumerate() {
            acc ^= reversed.window_word(offset + 64 * k) & w;
        }
        if acc.count_ones() & 1 == 1 {
            out.set(i, true);
        }
    }
    Ok(out)
}
