//! Basic-block checksum.
//!
//! `acc <- rotl(acc, 1) ^ word` for each word, then fold the 32-bit
//! accumulator to 26 bits with `(acc & 0x3ffffff) ^ (acc >> 26)`. The
//! recurrence costs one rotate and one XOR per retired instruction, so the
//! core can run it alongside execution.
//!
//! A single flipped bit in any word flips exactly one accumulator bit, and the
//! fold maps every accumulator bit onto exactly one checksum bit, so any
//! single-bit corruption of a block changes its checksum.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const CHECKSUM_BITS: u32 = 26;
pub const CHECKSUM_MASK: u32 = (1 << CHECKSUM_BITS) - 1;

/// A folded 26-bit block checksum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChecksumValue(u32);

impl ChecksumValue {
    pub fn new(value: u32) -> Option<Self> {
        (value <= CHECKSUM_MASK).then_some(ChecksumValue(value))
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

impl fmt::Display for ChecksumValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#09x}", self.0)
    }
}

/// One accumulation step.
#[inline]
pub fn step(acc: u32, word: u32) -> u32 {
    acc.rotate_left(1) ^ word
}

/// Pre-fold accumulator over `words`, starting from zero.
pub fn accumulate(words: &[u32]) -> u32 {
    words.iter().fold(0, |acc, &w| step(acc, w))
}

#[inline]
pub fn fold26(acc: u32) -> ChecksumValue {
    ChecksumValue((acc & CHECKSUM_MASK) ^ (acc >> CHECKSUM_BITS))
}

pub fn compute_checksum(words: &[u32]) -> ChecksumValue {
    fold26(accumulate(words))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct transcription of the recurrence with explicit shifts, kept apart
    /// from the implementation above.
    fn oracle(words: &[u32]) -> u32 {
        let mut acc: u64 = 0;
        for &w in words {
            let rotated = ((acc << 1) | (acc >> 31)) & 0xFFFF_FFFF;
            acc = rotated ^ w as u64;
        }
        let low = acc & 0x03FF_FFFF;
        let high = acc >> 26;
        (low ^ high) as u32
    }

    #[test]
    fn single_word() {
        assert_eq!(compute_checksum(&[1]).value(), 1);
    }

    #[test]
    fn two_words_cancel() {
        assert_eq!(oracle(&[1, 2]), 0);
        assert_eq!(compute_checksum(&[1, 2]).value(), 0);
    }

    #[test]
    fn high_bits_fold_down() {
        // bit 31 folds onto bit 5
        assert_eq!(fold26(0x8000_0000).value(), 1 << 5);
        assert_eq!(fold26(0xFC00_0000).value(), 0x3F);
    }

    #[test]
    fn every_single_bit_flip_changes_the_checksum() {
        let block: Vec<u32> = (0..12u32).map(|i| i.wrapping_mul(0x9E37_79B9)).collect();
        let base = compute_checksum(&block);
        for pos in 0..block.len() {
            for bit in 0..32 {
                let mut m = block.clone();
                m[pos] ^= 1 << bit;
                let c = compute_checksum(&m);
                assert_ne!(c, base, "word {pos} bit {bit}");
                // and exactly one checksum bit differs
                assert_eq!((c.value() ^ base.value()).count_ones(), 1);
            }
        }
    }

    proptest! {
        #[test]
        fn matches_oracle(words in proptest::collection::vec(any::<u32>(), 1..40)) {
            prop_assert_eq!(compute_checksum(&words).value(), oracle(&words));
            prop_assert!(compute_checksum(&words).value() <= CHECKSUM_MASK);
        }

        #[test]
        fn order_sensitive(a in any::<u32>(), b in any::<u32>(), prefix in proptest::collection::vec(any::<u32>(), 0..8)) {
            prop_assume!(a != b);
            let mut x = prefix.clone();
            x.extend([a, b]);
            let mut y = prefix;
            y.extend([b, a]);
            prop_assert_ne!(compute_checksum(&x), compute_checksum(&y));
        }
    }
}
