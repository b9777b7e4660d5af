//! Seeded randomness.
//!
//! All randomness in the simulator flows through [`SimRng`], a thin wrapper
//! over xoshiro256++ (Blackman and Vigna). Its 256-bit state is expanded from
//! the 64-bit seed with SplitMix64 (increment `0x9e3779b97f4a7c15`,
//! multipliers `0xbf58476d1ce4e5b9` and `0x94d049bb133111eb`). Equal seeds give
//! bit-identical streams on every platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: Xoshiro256PlusPlus,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Uniform integer in `[0, n)`.
    ///
    /// Panics if `n == 0`.
    pub fn choose(&mut self, n: usize) -> usize {
        assert!(n > 0, "cannot choose from an empty range");
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn next_u8(&mut self) -> u8 {
        (self.inner.next_u64() >> 56) as u8
    }

    /// Bernoulli draw with probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sigma).unwrap().sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.choose(i + 1);
            items.swap(i, j);
        }
    }

    /// Independent child stream for a sub-task identified by `stream`.
    pub fn fork(seed: u64, stream: u64) -> Self {
        let mut mixer = Self::new(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Self::new(mixer.next_u64())
    }
}

/// Free-function form of [`SimRng::choose`].
pub fn rng_choose(rng: &mut SimRng, n: usize) -> usize {
    rng.choose(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_uniform;

    #[test]
    fn single_choice_is_zero() {
        let mut rng = SimRng::new(99);
        for _ in 0..100 {
            assert_eq!(rng.choose(1), 0);
        }
    }

    #[test]
    #[should_panic]
    fn zero_choices_panics() {
        SimRng::new(1).choose(0);
    }

    // Recorded once from this implementation; any change to the generator or
    // the seeding scheme shows up here.
    #[test]
    fn golden_sequence() {
        let mut rng = SimRng::new(0x5eed);
        let draws: Vec<usize> = (0..10).map(|_| rng.choose(1000)).collect();
        assert_eq!(draws, GOLDEN);
    }

    const GOLDEN: [usize; 10] = [557, 991, 90, 437, 432, 390, 275, 739, 108, 811];

    #[test]
    fn sixteen_way_draws_are_uniform() {
        let mut rng = SimRng::new(2024);
        let mut counts = [0u64; 16];
        for _ in 0..1_000_000 {
            counts[rng.choose(16)] += 1;
        }
        let result = chi_square_uniform(&counts);
        assert!(result.p_value > 0.001, "{result:?}");
    }

    #[test]
    fn forks_are_distinct_and_reproducible() {
        let a: Vec<u64> = (0..4).map(|_| SimRng::fork(7, 1).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(SimRng::fork(7, 1).next_u64(), SimRng::fork(7, 2).next_u64());
    }
}
