// SPDX-License-Identifier: MIT OR Apache-2.0

//! Keyed random streams and the samplers the generators share.
//!
//! Every stream is derived from a `(master_seed, stream_id)` pair, so a
//! sentence, a document or an N-gram history can draw its randomness without
//! touching shared state. Streams are ChaCha8 instances: the master seed keys
//! the cipher and the stream id selects the ChaCha stream, which makes the
//! output identical across platforms and worker counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{HlabError, Result};

/// The random stream type handed out by [`SeedSpec::stream`].
pub type Stream = ChaCha8Rng;

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Builds a fresh stream positioned at its first output.
    pub fn stream(&self) -> Stream {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&splitmix64(self.master_seed).to_le_bytes());
        key[16..24].copy_from_slice(&splitmix64(self.master_seed ^ 0xA5A5_A5A5_A5A5_A5A5).to_le_bytes());
        key[24..].copy_from_slice(&splitmix64(!self.master_seed).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Derives a sub-stream id for a labelled purpose (e.g. "doc-perm").
    pub fn derive(&self, domain: u64, index: u64) -> SeedSpec {
        SeedSpec::new(self.master_seed, mix2(domain, index))
    }
}

/// SplitMix64 finaliser; a bijective 64-bit mixer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes two words into one stream id.
pub fn mix2(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.rotate_left(29) ^ 0x6A09_E667_F3BC_C908)
}

/// Hashes a token sequence into a stream id.
pub fn hash_tokens(tokens: &[u32]) -> u64 {
    tokens
        .iter()
        .fold(0xCBF2_9CE4_8422_2325u64, |acc, &t| mix2(acc, u64::from(t)))
}

/// Parameters of a Zipf law over `{0, .., support_size - 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipfParams {
    pub exponent: f64,
    pub support_size: usize,
}

impl ZipfParams {
    pub fn new(exponent: f64, support_size: usize) -> Self {
        Self {
            exponent,
            support_size,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.support_size == 0 {
            return Err(HlabError::InvalidSupport("Zipf support size is 0".into()));
        }
        if !(self.exponent >= 0.0) || !self.exponent.is_finite() {
            return Err(HlabError::InvalidSupport(format!(
                "Zipf exponent {} is not a finite non-negative number",
                self.exponent
            )));
        }
        Ok(())
    }
}

/// Probability vector `pmf(t) ∝ (t + 1)^-exponent`.
pub fn zipf_pmf(params: ZipfParams) -> Result<Vec<f64>> {
    params.validate()?;
    let weights: Vec<f64> = (0..params.support_size)
        .map(|t| ((t + 1) as f64).powf(-params.exponent))
        .collect();
    // Sum smallest-first for a tighter normalisation.
    let total: f64 = weights.iter().rev().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Inverse-CDF sampler over a precomputed cumulative table.
#[derive(Debug, Clone)]
pub struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(params: ZipfParams) -> Result<Self> {
        let pmf = zipf_pmf(params)?;
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Ok(Self { cdf })
    }

    pub fn support_size(&self) -> usize {
        self.cdf.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.cdf.len() - 1)
    }
}

/// Draws one index from `Zipf(params)`.
///
/// Builds the cumulative table on every call; hold a [`ZipfTable`] when
/// sampling repeatedly from one law.
pub fn zipf_sample<R: Rng + ?Sized>(params: ZipfParams, rng: &mut R) -> Result<usize> {
    Ok(ZipfTable::new(params)?.sample(rng))
}

/// `max(x, floor)` with `x ~ Normal(mu, sigma^2)`.
pub fn truncated_normal_max<R: Rng + ?Sized>(mu: f64, sigma: f64, floor: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (mu + sigma * z).max(floor)
}

/// Uniform random permutation of `0..n` (Fisher-Yates).
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_when_exponent_is_zero() {
        let pmf = zipf_pmf(ZipfParams::new(0.0, 5)).unwrap();
        for p in pmf {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn harmonic_case_matches_hand_values() {
        let pmf = zipf_pmf(ZipfParams::new(1.0, 4)).unwrap();
        let expect = [12.0 / 25.0, 6.0 / 25.0, 4.0 / 25.0, 3.0 / 25.0];
        for (p, e) in pmf.iter().zip(expect) {
            assert!((p - e).abs() < 1e-15, "{p} vs {e}");
        }
    }

    #[test]
    fn single_support_is_certain() {
        assert_eq!(zipf_pmf(ZipfParams::new(2.0, 1)).unwrap(), vec![1.0]);
        let mut rng = SeedSpec::new(1, 2).stream();
        for _ in 0..100 {
            assert_eq!(zipf_sample(ZipfParams::new(2.0, 1), &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn empty_support_rejected() {
        assert!(matches!(
            zipf_pmf(ZipfParams::new(1.0, 0)),
            Err(HlabError::InvalidSupport(_))
        ));
    }

    #[test]
    fn zero_sigma_clamps() {
        let mut rng = SeedSpec::new(3, 4).stream();
        assert_eq!(truncated_normal_max(2.0, 0.0, 1.2, &mut rng), 2.0);
        assert_eq!(truncated_normal_max(0.0, 0.0, 1.2, &mut rng), 1.2);
    }

    #[test]
    fn uniform_sampling_is_balanced() {
        let table = ZipfTable::new(ZipfParams::new(0.0, 2)).unwrap();
        let mut rng = SeedSpec::new(11, 0).stream();
        let n = 1_000_000;
        let ones = (0..n).filter(|_| table.sample(&mut rng) == 1).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn harmonic_sampling_head_frequency() {
        let table = ZipfTable::new(ZipfParams::new(1.0, 4)).unwrap();
        let mut rng = SeedSpec::new(12, 0).stream();
        let n = 1_000_000;
        let zeros = (0..n).filter(|_| table.sample(&mut rng) == 0).count();
        assert!((zeros as f64 / n as f64 - 0.48).abs() < 0.01);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = {
            let mut r = SeedSpec::new(7, 9).stream();
            (0..16).map(|_| r.random()).collect()
        };
        let b: Vec<u64> = {
            let mut r = SeedSpec::new(7, 9).stream();
            (0..16).map(|_| r.random()).collect()
        };
        let c: Vec<u64> = {
            let mut r = SeedSpec::new(7, 10).stream();
            (0..16).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn permutation_is_bijection() {
        let mut rng = SeedSpec::new(5, 5).stream();
        let mut p = permutation(50, &mut rng);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
