//! Counter-keyed random streams.
//!
//! Every source of randomness is derived from `(seed, purpose, a, b, c)` so
//! draws do not depend on evaluation order or thread scheduling.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Wiener = 1,
    Injection = 2,
    Shuffle = 3,
    Init = 4,
    Split = 5,
    Generator = 6,
    Predict = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a purpose tag and three counters into a 64-bit key.
pub fn derive_key(seed: u64, purpose: Purpose, a: u64, b: u64, c: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0x5DEE_CE66_D1CE_4E5B);
    for word in [purpose as u64, a, b, c] {
        h = splitmix64(h ^ word);
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, purpose, a, b, c))
}

#[inline]
pub fn standard_normal<R: rand_core::RngCore>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn uniform<R: rand_core::RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform index in `0..n` by rejection, `n > 0`.
pub fn index<R: rand_core::RngCore>(rng: &mut R, n: usize) -> usize {
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

/// Fisher-Yates shuffle.
pub fn shuffle<T, R: rand_core::RngCore>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::RngCore;

    #[test]
    fn keys_differ_by_every_component() {
        let base = derive_key(1, Purpose::Wiener, 2, 3, 4);
        assert_ne!(base, derive_key(2, Purpose::Wiener, 2, 3, 4));
        assert_ne!(base, derive_key(1, Purpose::Injection, 2, 3, 4));
        assert_ne!(base, derive_key(1, Purpose::Wiener, 3, 3, 4));
        assert_ne!(base, derive_key(1, Purpose::Wiener, 2, 4, 4));
        assert_ne!(base, derive_key(1, Purpose::Wiener, 2, 3, 5));
        assert_ne!(derive_key(0, Purpose::Wiener, 1, 0, 0), derive_key(0, Purpose::Wiener, 0, 1, 0));
    }

    #[test]
    fn streams_replay() {
        let mut a = stream(9, Purpose::Shuffle, 0, 0, 0);
        let mut b = stream(9, Purpose::Shuffle, 0, 0, 0);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = stream(3, Purpose::Shuffle, 0, 0, 0);
        let mut v: alloc::vec::Vec<usize> = (0..100).collect();
        shuffle(&mut rng, &mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<alloc::vec::Vec<_>>());
        assert_ne!(v, sorted);
    }
}
