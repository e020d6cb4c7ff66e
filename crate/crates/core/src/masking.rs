//! Noise-free feature masking with exact `(ε, δ)` accounting.
//!
//! A sample keeps `k = round(sr · n)` randomly chosen features and every other
//! feature is overwritten with `mask_value`. Drawing the `k` positions with
//! replacement gives
//!
//! ```text
//! ε = k · ln((n + 1) / n),        δ = 1 − ((n − 1) / n)^k
//! ```
//!
//! and drawing them without replacement gives
//!
//! ```text
//! ε = ln((n + 1) / (n + 1 − k)),  δ = k / n.
//! ```
//!
//! With replacement a position drawn twice is revealed once; the accounting is
//! still over the `k` draws.

use std::fmt;
use std::str::FromStr;

use crate::data::round_half_up;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SamplingStrategy {
    WithReplacement,
    WithoutReplacement,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingStrategy::WithReplacement => "with_replacement",
            SamplingStrategy::WithoutReplacement => "without_replacement",
        })
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_replacement" | "with-replacement" | "with" | "w" => Ok(SamplingStrategy::WithReplacement),
            "without_replacement" | "without-replacement" | "without" | "wo" => {
                Ok(SamplingStrategy::WithoutReplacement)
            }
            other => Err(Error::invalid(format!("unknown sampling strategy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub n: usize,
    pub sr: f64,
    pub strategy: SamplingStrategy,
    pub mask_value: f64,
}

impl MaskSpec {
    /// Spec with the default black (`0.0`) mask value, validated.
    pub fn new(n: usize, sr: f64, strategy: SamplingStrategy) -> Result<Self> {
        let spec = MaskSpec {
            n,
            sr,
            strategy,
            mask_value: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_mask_value(mut self, mask_value: f64) -> Result<Self> {
        self.mask_value = mask_value;
        self.validate()?;
        Ok(self)
    }

    /// Number of draws, `round(sr · n)` rounded half up.
    pub fn k(&self) -> usize {
        round_half_up(self.sr * self.n as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("mask spec needs n ≥ 1"));
        }
        if !(self.sr > 0.0 && self.sr <= 1.0) {
            return Err(Error::invalid(format!("sampling rate {} outside (0, 1]", self.sr)));
        }
        if !(0.0..=1.0).contains(&self.mask_value) {
            return Err(Error::invalid(format!("mask value {} outside [0, 1]", self.mask_value)));
        }
        let k = self.k();
        if k < 1 {
            return Err(Error::invalid(format!("sr {} of n {} samples no feature", self.sr, self.n)));
        }
        if self.strategy == SamplingStrategy::WithoutReplacement && k > self.n {
            return Err(Error::invalid(format!("k = {k} exceeds n = {}", self.n)));
        }
        Ok(())
    }
}

/// `(ε, δ)` of one masking pass, with the parameters it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct DpAccount {
    pub epsilon: f64,
    pub delta: f64,
    pub n: usize,
    pub k: usize,
    pub strategy: SamplingStrategy,
}

/// `(ε, δ)` for `k` draws from `n` features. `k = 0` yields `(0, 0)`.
pub fn account_for(n: usize, k: usize, strategy: SamplingStrategy) -> Result<DpAccount> {
    if n == 0 {
        return Err(Error::invalid("accounting needs n ≥ 1"));
    }
    let nf = n as f64;
    let kf = k as f64;
    let (epsilon, delta) = match strategy {
        SamplingStrategy::WithReplacement => {
            let eps = kf * ((nf + 1.0) / nf).ln();
            let delta = if n == 1 {
                if k == 0 { 0.0 } else { 1.0 }
            } else {
                -((kf * ((nf - 1.0) / nf).ln()).exp_m1())
            };
            (eps, delta)
        }
        SamplingStrategy::WithoutReplacement => {
            if k > n {
                return Err(Error::invalid(format!("cannot draw {k} of {n} features without replacement")));
            }
            (((nf + 1.0) / (nf + 1.0 - kf)).ln(), kf / nf)
        }
    };
    Ok(DpAccount {
        epsilon,
        delta,
        n,
        k,
        strategy,
    })
}

pub fn account(spec: &MaskSpec) -> Result<DpAccount> {
    spec.validate()?;
    account_for(spec.n, spec.k(), spec.strategy)
}

/// A masked feature vector and the positions it reveals.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSample {
    pub values: Tensor,
    /// Sorted, distinct.
    pub sampled_indices: Vec<usize>,
    pub strategy: SamplingStrategy,
}

/// Masks one sample of length `spec.n`.
pub fn mask(sample: &[f64], spec: &MaskSpec, rng: &mut Rng) -> Result<MaskedSample> {
    spec.validate()?;
    if sample.len() != spec.n {
        return Err(Error::shape(format!("sample of length {} for n = {}", sample.len(), spec.n)));
    }
    let with = spec.strategy == SamplingStrategy::WithReplacement;
    let mut idx = rng.uniform_indices(spec.n, spec.k(), with)?;
    idx.sort_unstable();
    idx.dedup();
    let mut values = vec![spec.mask_value; spec.n];
    for &i in &idx {
        values[i] = sample[i];
    }
    Ok(MaskedSample {
        values: Tensor::vector(values),
        sampled_indices: idx,
        strategy: spec.strategy,
    })
}

/// Masks every row of a `batch × n` matrix with independent draws from one stream.
pub fn mask_batch(batch: &Tensor, spec: &MaskSpec, rng: &mut Rng) -> Result<Vec<MaskedSample>> {
    if batch.rank() != 2 || batch.cols() != spec.n {
        return Err(Error::shape(format!("batch {:?} for n = {}", batch.shape(), spec.n)));
    }
    (0..batch.rows()).map(|i| mask(batch.row(i), spec, rng)).collect()
}

/// Stacks masked rows back into a `batch × n` matrix.
pub fn stack_masked(samples: &[MaskedSample]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.values.data().to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// Probability that a given feature is revealed by one masking pass.
pub fn inclusion_probability(n: usize, k: usize, strategy: SamplingStrategy) -> f64 {
    let nf = n as f64;
    match strategy {
        SamplingStrategy::WithReplacement => 1.0 - ((nf - 1.0) / nf).powi(k as i32),
        SamplingStrategy::WithoutReplacement => k as f64 / nf,
    }
}

/// Expected number of distinct revealed features, `n · P(inclusion)`.
pub fn expected_distinct(n: usize, k: usize, strategy: SamplingStrategy) -> f64 {
    n as f64 * inclusion_probability(n, k, strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SamplingStrategy::*;

    #[test]
    fn mnist_table_rows() {
        let with = account(&MaskSpec::new(784, 0.2, WithReplacement).unwrap()).unwrap();
        assert_eq!(with.k, 157);
        assert!((with.epsilon - 0.199).abs() <= 0.003, "{with:?}");
        assert!((with.delta - 0.182).abs() <= 0.003, "{with:?}");
        let without = account(&MaskSpec::new(784, 0.2, WithoutReplacement).unwrap()).unwrap();
        assert!((without.epsilon - (785.0f64 / 628.0).ln()).abs() < 1e-12);
        assert!((without.epsilon - 0.221).abs() <= 0.003);
        assert!((without.delta - 0.200).abs() <= 0.003);
    }

    #[test]
    fn zero_draws_cost_nothing() {
        for s in [WithReplacement, WithoutReplacement] {
            let a = account_for(784, 0, s).unwrap();
            assert_eq!((a.epsilon, a.delta), (0.0, 0.0));
        }
    }

    #[test]
    fn full_rate_without_replacement() {
        let a = account(&MaskSpec::new(784, 1.0, WithoutReplacement).unwrap()).unwrap();
        assert!((a.epsilon - 785f64.ln()).abs() < 1e-12);
        assert!((a.epsilon - 6.666).abs() < 1e-3);
        assert_eq!(a.delta, 1.0);
    }

    #[test]
    fn spec_validation() {
        assert!(MaskSpec::new(10, 0.0, WithReplacement).is_err());
        assert!(MaskSpec::new(10, 1.2, WithReplacement).is_err());
        assert!(MaskSpec::new(10, 0.04, WithReplacement).is_err());
        assert!(MaskSpec::new(0, 0.5, WithReplacement).is_err());
        assert!(MaskSpec::new(10, 0.05, WithReplacement).is_ok());
        assert!(MaskSpec::new(10, 0.5, WithReplacement).unwrap().with_mask_value(2.0).is_err());
        assert!(account_for(10, 11, WithoutReplacement).is_err());
        assert!(account_for(10, 11, WithReplacement).is_ok());
    }

    #[test]
    fn monotone_in_k_and_with_replacement_dominates() {
        for n in [10usize, 100, 784] {
            let mut prev = [(0.0, 0.0); 2];
            for k in 1..=n {
                let w = account_for(n, k, WithReplacement).unwrap();
                let wo = account_for(n, k, WithoutReplacement).unwrap();
                assert!(w.epsilon >= prev[0].0 && w.delta >= prev[0].1);
                assert!(wo.epsilon >= prev[1].0 && wo.delta >= prev[1].1);
                assert!(w.epsilon <= wo.epsilon + 1e-12, "n={n} k={k}");
                assert!(w.delta <= wo.delta + 1e-12, "n={n} k={k}");
                prev = [(w.epsilon, w.delta), (wo.epsilon, wo.delta)];
            }
        }
    }

    #[test]
    fn account_depends_only_on_n_k_strategy() {
        let a = MaskSpec::new(100, 0.3, WithReplacement).unwrap();
        let b = a.clone().with_mask_value(0.5).unwrap();
        assert_eq!(account(&a).unwrap(), account(&b).unwrap());
        assert_eq!(account(&a).unwrap(), account_for(100, 30, WithReplacement).unwrap());
    }

    #[test]
    fn full_rate_is_identity() {
        let spec = MaskSpec::new(20, 1.0, WithoutReplacement).unwrap();
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let m = mask(&x, &spec, &mut Rng::seeded(1)).unwrap();
        assert_eq!(m.values.data(), x.as_slice());
        assert_eq!(m.sampled_indices, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn counting_ones() {
        let spec = MaskSpec::new(50, 0.3, WithoutReplacement).unwrap();
        let m = mask(&[1.0; 50], &spec, &mut Rng::seeded(2)).unwrap();
        assert_eq!(m.values.data().iter().filter(|&&v| v == 1.0).count(), 15);
    }

    #[test]
    fn masked_positions_take_mask_value() {
        let spec = MaskSpec::new(30, 0.4, WithReplacement).unwrap().with_mask_value(0.5).unwrap();
        let mut rng = Rng::seeded(3);
        let x: Vec<f64> = (0..30).map(|_| rng.uniform()).collect();
        let m = mask(&x, &spec, &mut rng).unwrap();
        for i in 0..30 {
            if m.sampled_indices.binary_search(&i).is_ok() {
                assert_eq!(m.values.data()[i], x[i]);
            } else {
                assert_eq!(m.values.data()[i], 0.5);
            }
        }
        assert!(m.sampled_indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn batch_matches_single_row_stream() {
        let spec = MaskSpec::new(8, 0.5, WithoutReplacement).unwrap();
        let row = Tensor::new(vec![1, 8], (0..8).map(|i| i as f64 / 8.0).collect()).unwrap();
        let batch = mask_batch(&row, &spec, &mut Rng::seeded(4)).unwrap();
        let single = mask(row.row(0), &spec, &mut Rng::seeded(4)).unwrap();
        assert_eq!(batch, vec![single]);

        let masked = mask_batch(&Tensor::full(&[2, 8], 0.5), &spec, &mut Rng::seeded(4)).unwrap();
        assert_ne!(masked[0].sampled_indices, masked[1].sampled_indices);
        assert!(mask_batch(&Tensor::zeros(&[2, 7]), &spec, &mut Rng::seeded(4)).is_err());
    }
}
