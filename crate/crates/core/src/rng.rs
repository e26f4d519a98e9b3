//! Seed handling. All randomness in the crate flows from `u64` seeds through
//! [`mix64`] into ChaCha8 streams, so results are identical across platforms
//! and worker counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. A bijective, stable 64-bit mix.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a sequence of indices.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fisher-Yates shuffle driven by the crate's own index draw, so the
/// permutation for a given seed does not depend on `rand`'s internal
/// sampling algorithms.
pub fn shuffle<T, R: rand::RngCore>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = uniform_index(rng, i + 1);
        items.swap(i, j);
    }
}

/// Unbiased draw from `0..n` by rejection on the top bits.
pub fn uniform_index<R: rand::RngCore>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0);
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn uniform01<R: rand::RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw (Box-Muller on the crate's uniform stream).
pub fn standard_normal<R: rand::RngCore>(rng: &mut R) -> f64 {
    loop {
        let u1 = uniform01(rng);
        if u1 > 0.0 {
            let u2 = uniform01(rng);
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
