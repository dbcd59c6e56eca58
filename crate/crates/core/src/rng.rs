//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`SeededRng`], a ChaCha8 stream
//! seeded from a single `u64`. Sampling helpers below consume raw `u64` words
//! only, so a split is reproducible by any ChaCha8 implementation that expands
//! the seed the same way as `rand_chacha::ChaCha8Rng::seed_from_u64`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifier written into results metadata.
pub const RNG_ALGORITHM: &str = "chacha8/seed_from_u64 partial-fisher-yates(u64 mod)";

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-module seed offsets added (wrapping) to the master seed.
pub mod offsets {
    pub const COLD_START_SPLIT: u64 = 1;
    pub const DENSITY: u64 = 2;
    pub const MFUS_TARGET: u64 = 3;
    pub const MFUS_AUXILIARY: u64 = 4;
    pub const GBT: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
    pub const GRID_SPLIT: u64 = 7;
}

pub fn derive_seed(master: u64, offset: u64) -> u64 {
    master.wrapping_add(offset)
}

/// Uniform draw in `[0, 1)` built from the top 53 bits of one word.
pub fn unit_f64(rng: &mut SeededRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Chooses `k` distinct indices out of `0..n` by a partial Fisher-Yates shuffle
/// and returns them in ascending order.
pub fn sample_indices(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot sample {k} of {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let span = (n - i) as u64;
        let j = i + (rng.next_u64() % span) as usize;
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// `floor(fraction * n)` with a small guard against representation error,
/// so that e.g. `0.7 * 10` yields 7.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    ((x + 1e-9).floor() as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_is_sorted_distinct_and_deterministic() {
        let a = sample_indices(&mut seeded(42), 100, 30);
        let b = sample_indices(&mut seeded(42), 100, 30);
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&i| i < 100));
    }

    #[test]
    fn fraction_count_rounds_down() {
        assert_eq!(fraction_count(0.7, 10), 7);
        assert_eq!(fraction_count(0.5, 16926), 8463);
        assert_eq!(fraction_count(0.5, 3), 1);
        assert_eq!(fraction_count(1.0, 9), 9);
    }

    #[test]
    fn unit_in_range() {
        let mut rng = seeded(7);
        for _ in 0..1000 {
            let x = unit_f64(&mut rng);
            assert!((0.0..1.0).contains(&x));
        }
    }
}
