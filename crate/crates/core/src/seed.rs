//! Seed derivation for independent, reproducible RNG streams.

/// Derives a child seed from a base seed and a salt via a splitmix64 step.
/// Different salts give statistically independent streams; the mapping is
/// pure and platform-independent.
pub fn derive(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
