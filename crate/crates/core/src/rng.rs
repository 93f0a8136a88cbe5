//! Portable seeded randomness.
//!
//! Everything random in this crate is driven by ChaCha8 (`rand_chacha`),
//! whose output stream for a given seed is fixed across platforms and crate
//! versions. Seeds are expanded with `SeedableRng::seed_from_u64`. Integer
//! sampling and the permutation algorithm are implemented here rather than
//! borrowed from `rand`, whose distribution internals are allowed to change
//! between releases.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform integer in `0..bound` by rejection on 64-bit words.
pub fn uniform_below<R: RngCore>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below: zero bound");
    // The accepted range [threshold, 2^64) has a length divisible by `bound`.
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

/// Uniform real in the open interval (0, 1) with 53 bits of resolution.
pub fn open_unit<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Uniformly random permutation of `0..n` (Durstenfeld's Fisher-Yates,
/// swapping from the top index down).
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = uniform_below(&mut rng, i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_is_a_permutation() {
        for n in [0, 1, 2, 17, 100] {
            let mut p = permutation(n, 3);
            p.sort_unstable();
            assert_eq!(p, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn permutation_is_seed_deterministic() {
        assert_eq!(permutation(50, 0), permutation(50, 0));
        assert_ne!(permutation(50, 0), permutation(50, 1));
    }

    #[test]
    fn open_unit_stays_inside() {
        let mut rng = seeded(9);
        for _ in 0..10_000 {
            let u = open_unit(&mut rng);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn uniform_below_covers_small_range() {
        let mut rng = seeded(1);
        let mut seen = [0usize; 3];
        for _ in 0..3000 {
            seen[uniform_below(&mut rng, 3) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800));
    }
}
