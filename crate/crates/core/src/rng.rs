//! Seeded random source used everywhere randomness is needed.
//!
//! The generator is xoshiro256++ seeded through SplitMix64 (`seed_from_u64`),
//! and uniforms on `[0, 1)` take the top 53 bits of each 64-bit output, so a
//! given seed produces the same stream on every platform.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct Rng64(Xoshiro256PlusPlus);

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        Rng64(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound` (Lemire's multiply-shift, tiny bias ignored).
    pub fn below(&mut self, bound: usize) -> usize {
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = {
            let mut r = Rng64::new(42);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let mut r = Rng64::new(42);
        for v in a {
            assert_eq!(r.next_u64(), v);
        }
    }

    #[test]
    fn uniforms_stay_in_unit_interval() {
        let mut r = Rng64::new(1);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
        for _ in 0..1000 {
            assert!(r.below(7) < 7);
        }
    }
}
