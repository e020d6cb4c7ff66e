//! Seeded randomness.
//!
//! The generator is ChaCha20 (RFC 7539 keystream, as implemented by
//! `rand_chacha::ChaCha20Rng`). A 64-bit seed is expanded to the 256-bit key
//! with `SeedableRng::seed_from_u64` (PCG32 expansion). Gaussian draws use the
//! ziggurat sampler of `rand_distr::StandardNormal`.
//!
//! Streams are reproducible within this implementation only.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Deterministic random stream.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for a named stage: seeded with `seed ^ fnv1a64(tag)`.
    pub fn derive(seed: u64, tag: &str) -> Self {
        Rng::seeded(stage_seed(seed, tag))
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn gaussian(&mut self, shape: &[usize]) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| self.normal()).collect();
        Tensor::new(shape.to_vec(), data).expect("length matches shape")
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| lo + (hi - lo) * self.uniform()).collect();
        Tensor::new(shape.to_vec(), data).expect("length matches shape")
    }

    /// `k` indices in `[0, n)`; distinct when drawn without replacement.
    pub fn uniform_indices(&mut self, n: usize, k: usize, with_replacement: bool) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::invalid("uniform_indices: n must be at least 1"));
        }
        if with_replacement {
            Ok((0..k).map(|_| self.below(n)).collect())
        } else {
            if k > n {
                return Err(Error::invalid(format!(
                    "cannot draw {k} distinct indices from {n}"
                )));
            }
            Ok(rand::seq::index::sample(&mut self.inner, n, k).into_vec())
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seeded(seed)
}

pub fn gaussian(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.gaussian(shape)
}

pub fn uniform_indices(rng: &mut Rng, n: usize, k: usize, with_replacement: bool) -> Result<Vec<usize>> {
    rng.uniform_indices(n, k, with_replacement)
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Stage seed: `seed ^ fnv1a64(tag)`.
pub fn stage_seed(seed: u64, tag: &str) -> u64 {
    seed ^ fnv1a64(tag.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chacha20_keystream_test_vector() {
        // Zero key, zero nonce, block 0: keystream begins 76 b8 e0 ad a0 f1 3d 90.
        let mut rng = ChaCha20Rng::from_seed([0u8; 32]);
        assert_eq!(rng.next_u32(), 0xade0_b876);
        assert_eq!(rng.next_u32(), 0x903d_f1a0);
    }

    #[test]
    fn fnv1a_test_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::seeded(7);
        let mut b = Rng::seeded(7);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_eq!(a.gaussian(&[3, 2]), b.gaussian(&[3, 2]));
    }

    #[test]
    fn without_replacement_exhausts() {
        let mut rng = Rng::seeded(1);
        let mut idx = rng.uniform_indices(5, 5, false).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn zero_draws_are_empty() {
        let mut rng = Rng::seeded(1);
        assert!(rng.uniform_indices(5, 0, true).unwrap().is_empty());
        assert!(rng.uniform_indices(5, 0, false).unwrap().is_empty());
    }

    #[test]
    fn too_many_distinct_is_an_error() {
        let mut rng = Rng::seeded(1);
        assert!(rng.uniform_indices(5, 6, false).is_err());
        assert!(rng.uniform_indices(5, 6, true).is_ok());
    }

    #[test]
    fn single_draw_frequencies_are_uniform() {
        let mut rng = Rng::seeded(2024);
        let mut counts = [0usize; 10];
        let trials = 100_000;
        for _ in 0..trials {
            counts[rng.uniform_indices(10, 1, true).unwrap()[0]] += 1;
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((0.09..=0.11).contains(&f), "frequency {f}");
        }
    }
}
