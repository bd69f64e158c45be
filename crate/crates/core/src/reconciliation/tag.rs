//! 64-bit verification tags: polynomial evaluation over GF(2^64).
//!
//! The block is split into 64-bit words `w_1..w_L` followed by its bit
//! length, and hashed as `h = (...((w_1) k + w_2) k + ...) k` with a key `k`
//! derived from the session seed and block id. Two distinct blocks collide
//! for at most `L + 1` of the `2^64` keys.

use bitvec::prelude::*;

use super::ReconError;
use crate::rng;

/// Low terms of the reduction polynomial `x^64 + x^4 + x^3 + x + 1`.
const REDUCTION: u64 = 0b1_1011;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VerificationTag {
    pub block_id: u64,
    pub value: u64,
}

fn clmul(a: u64, b: u64) -> (u64, u64) {
    let (mut hi, mut lo) = (0u64, 0u64);
    for i in 0..64 {
        if (b >> i) & 1 == 1 {
            lo ^= a << i;
            if i > 0 {
                hi ^= a >> (64 - i);
            }
        }
    }
    (hi, lo)
}

/// Product in GF(2^64).
pub(crate) fn gf_mul(a: u64, b: u64) -> u64 {
    let (hi, lo) = clmul(a, b);
    // fold the high word twice; the second fold has at most 4 bits
    let (h2, l2) = clmul(hi, REDUCTION);
    let (_, l3) = clmul(h2, REDUCTION);
    lo ^ l2 ^ l3
}

impl VerificationTag {
    pub fn compute(bits: &BitSlice<u8, Msb0>, seed: u64, block_id: u64) -> Self {
        let key = rng::mix64(rng::substream(seed, "verify", block_id)) | 1;
        let mut h = 0u64;
        for chunk in bits.chunks(64) {
            let mut w = chunk.load_be::<u64>();
            w <<= 64 - chunk.len();
            h = gf_mul(h ^ w, key);
        }
        h = gf_mul(h ^ bits.len() as u64, key);
        Self { block_id, value: h }
    }
}

/// Whether two tags for the same block agree.
pub fn verify_blocks(tag_a: &VerificationTag, tag_b: &VerificationTag) -> Result<bool, ReconError> {
    if tag_a.block_id != tag_b.block_id {
        return Err(ReconError::BlockMismatch {
            a: tag_a.block_id,
            b: tag_b.block_id,
        });
    }
    Ok(tag_a.value == tag_b.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Bits;
    use rand::Rng;

    #[test]
    fn field_arithmetic() {
        assert_eq!(gf_mul(1, 0xDEAD_BEEF), 0xDEAD_BEEF);
        assert_eq!(gf_mul(0, 12345), 0);
        // x^63 * x = x^64 = x^4 + x^3 + x + 1
        assert_eq!(gf_mul(1 << 63, 2), REDUCTION);
        let mut rng = rng::from_seed(4);
        for _ in 0..100 {
            let (a, b, c): (u64, u64, u64) = (rng.random(), rng.random(), rng.random());
            assert_eq!(gf_mul(a, b), gf_mul(b, a));
            assert_eq!(gf_mul(a, b ^ c), gf_mul(a, b) ^ gf_mul(a, c));
            assert_eq!(gf_mul(gf_mul(a, b), c), gf_mul(a, gf_mul(b, c)));
        }
    }

    #[test]
    fn identical_blocks_match() {
        let bits: Bits = (0..4096).map(|i| i % 3 == 0).collect();
        let a = VerificationTag::compute(&bits, 5, 2);
        assert!(verify_blocks(&a, &VerificationTag::compute(&bits, 5, 2)).unwrap());
        assert!(verify_blocks(&a, &VerificationTag::compute(&bits, 5, 3)).is_err());
    }

    #[test]
    fn trailing_zeros_change_the_tag() {
        let a = Bits::repeat(false, 100);
        let b = Bits::repeat(false, 101);
        assert_ne!(VerificationTag::compute(&a, 1, 0).value, VerificationTag::compute(&b, 1, 0).value);
    }

    #[test]
    fn single_flips_never_collide() {
        let mut rng = rng::from_seed(77);
        let mut collisions = 0;
        for trial in 0..10_000u64 {
            let bits: Bits = (0..1024).map(|_| rng.random::<bool>()).collect();
            let mut flipped = bits.clone();
            let i = rng.random_range(0..1024);
            let v = flipped[i];
            flipped.set(i, !v);
            let a = VerificationTag::compute(&bits, trial, trial);
            let b = VerificationTag::compute(&flipped, trial, trial);
            collisions += usize::from(verify_blocks(&a, &b).unwrap());
        }
        assert_eq!(collisions, 0);
    }
}
