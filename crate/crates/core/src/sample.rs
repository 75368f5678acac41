//! Seeded random generators for rationals, MLPs and models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rational::Rat;

pub type LabRng = ChaCha8Rng;

pub fn rng(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn signed(rng: &mut impl Rng, magnitude: i64) -> i64 {
    if rng.gen_bool(0.5) {
        -magnitude
    } else {
        magnitude
    }
}

/// A rational with bit-length at most `max_bitlen` (which must be at least 2;
/// at most 62 to keep components machine-sized).
pub fn rat_with_bitlen_at_most(rng: &mut impl Rng, max_bitlen: u32) -> Rat {
    assert!((2..=62).contains(&max_bitlen), "bit budget {max_bitlen} out of range");
    let num_bits = rng.gen_range(1..max_bitlen);
    let den_bits = rng.gen_range(1..=max_bitlen - num_bits);
    let num = rng.gen_range(0..1i64 << num_bits);
    let den = rng.gen_range(1..1i64 << den_bits);
    Rat::new(signed(rng, num), den).expect("positive denominator")
}

/// An integer with bit-length at most `max_bitlen`, i.e. `|a| < 2^(max_bitlen-1)`.
pub fn int_with_bitlen_at_most(rng: &mut impl Rng, max_bitlen: u32) -> Rat {
    assert!((2..=62).contains(&max_bitlen), "bit budget {max_bitlen} out of range");
    let bound = 1i64 << (max_bitlen - 1);
    Rat::from_int(rng.gen_range(-(bound - 1)..bound))
}

/// Numerator and denominator each of at most `bits` bits; numerator signed.
pub fn rat_with_component_bits(rng: &mut impl Rng, bits: u32) -> Rat {
    let bound = 1i64 << bits;
    let num = rng.gen_range(-(bound - 1)..bound);
    let den = rng.gen_range(1..bound);
    Rat::new(num, den).expect("positive denominator")
}

/// Odd positive integer uniformly drawn from `[1, 2^bits)`.
pub fn odd_below_pow2(rng: &mut impl Rng, bits: u32) -> i64 {
    let half = 1i64 << bits.saturating_sub(1);
    // odd values 1, 3, ..., 2^bits - 1: there are 2^(bits-1) of them
    2 * rng.gen_range(0..half) + 1
}
