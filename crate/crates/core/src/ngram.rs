// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hierarchy-free baseline corpus: an order-`n` Markov source whose
//! per-history next-token law is Zipf with a history-specific exponent.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{write_shard, Shard, ShardManifest};
use crate::error::{HlabError, Result};
use crate::rngkit::{
    hash_tokens, mix2, truncated_normal_max, SeedSpec, Stream, ZipfParams, ZipfTable,
};

const DOMAIN_ALPHA: u64 = 0x616c_7068_61;
const DOMAIN_SENTENCE: u64 = 0x7365_6e74;

#[derive(Debug, Clone, PartialEq)]
pub struct NgramConfig {
    pub order: usize,
    pub vocab_size: u32,
    pub mu: f64,
    pub sigma: f64,
    pub alpha_min: f64,
    pub length_exponent: f64,
    pub len_min: usize,
    pub len_max: usize,
    pub num_sentences: u64,
    /// Consecutive sentences grouped into one document of the shard.
    pub sentences_per_document: usize,
    pub seed: u64,
}

impl NgramConfig {
    /// Values from the published N-gram table (400M sentences, lengths 10-1010).
    pub fn paper() -> Self {
        Self {
            order: 2,
            vocab_size: 1000,
            mu: 2.0,
            sigma: 1.2,
            alpha_min: 1.2,
            length_exponent: 2.0,
            len_min: 10,
            len_max: 1010,
            num_sentences: 400_000_000,
            sentences_per_document: 32,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return Err(HlabError::config("ngram.order", "must be at least 2"));
        }
        if self.vocab_size < 3 || self.vocab_size > u32::from(u16::MAX) {
            return Err(HlabError::config("ngram.vocab_size", "must lie in [3, 65535]"));
        }
        if self.len_min < 1 {
            return Err(HlabError::config("ngram.len_min", "must be at least 1"));
        }
        if self.len_max < self.len_min {
            return Err(HlabError::config("ngram.len_max", "must be >= len_min"));
        }
        if !(self.sigma >= 0.0) {
            return Err(HlabError::config("ngram.sigma", "must be non-negative"));
        }
        if !(self.alpha_min >= 0.0) {
            return Err(HlabError::config("ngram.alpha_min", "must be non-negative"));
        }
        if !(self.length_exponent >= 0.0) {
            return Err(HlabError::config("ngram.length_exponent", "must be non-negative"));
        }
        if self.sentences_per_document == 0 {
            return Err(HlabError::config("ngram.sentences_per_document", "must be at least 1"));
        }
        Ok(())
    }

    pub fn eos(&self) -> u32 {
        self.vocab_size - 1
    }

    /// Padding symbol inside initial histories; shares the EOS id.
    pub fn pad(&self) -> u32 {
        self.eos()
    }

    /// Support of the length offset `Z`.
    pub fn length_support(&self) -> usize {
        self.len_max - self.len_min + 1
    }
}

/// The `n - 1` most recent tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HistoryKey(pub Vec<u32>);

impl HistoryKey {
    /// All-padding history used at sentence start.
    pub fn initial(cfg: &NgramConfig) -> Self {
        HistoryKey(vec![cfg.pad(); cfg.order - 1])
    }
}

/// Drops the oldest token and appends `x`.
pub fn shift(h: &HistoryKey, x: u32) -> HistoryKey {
    let mut tokens = Vec::with_capacity(h.0.len());
    tokens.extend_from_slice(&h.0[1..]);
    tokens.push(x);
    HistoryKey(tokens)
}

/// Zipf exponent attached to history `h`; a pure function of `(seed, h)`.
pub fn alpha_for_history(cfg: &NgramConfig, h: &HistoryKey) -> f64 {
    let mut rng = SeedSpec::new(cfg.seed, mix2(DOMAIN_ALPHA, hash_tokens(&h.0))).stream();
    truncated_normal_max(cfg.mu, cfg.sigma, cfg.alpha_min, &mut rng)
}

/// Next-token sampler with a lazily filled per-history table cache.
pub struct NgramSampler<'a> {
    cfg: &'a NgramConfig,
    tables: HashMap<HistoryKey, ZipfTable>,
    lengths: ZipfTable,
}

impl<'a> NgramSampler<'a> {
    pub fn new(cfg: &'a NgramConfig) -> Result<Self> {
        cfg.validate()?;
        let lengths = ZipfTable::new(ZipfParams::new(cfg.length_exponent, cfg.length_support()))?;
        Ok(Self {
            cfg,
            tables: HashMap::new(),
            lengths,
        })
    }

    /// Draws from `Zipf(alpha_h)` over the `V - 1` non-EOS tokens.
    pub fn next_token(&mut self, h: &HistoryKey, rng: &mut Stream) -> u32 {
        let cfg = self.cfg;
        let table = self.tables.entry(h.clone()).or_insert_with(|| {
            let alpha = alpha_for_history(cfg, h);
            ZipfTable::new(ZipfParams::new(alpha, (cfg.vocab_size - 1) as usize))
                .expect("validated config yields a valid Zipf law")
        });
        table.sample(rng) as u32
    }

    /// Sentence `sentence_id`, EOS included.
    pub fn sample_sentence(&mut self, sentence_id: u64) -> Vec<u32> {
        let cfg = self.cfg;
        let mut rng = SeedSpec::new(cfg.seed, mix2(DOMAIN_SENTENCE, sentence_id)).stream();
        let z = self.lengths.sample(&mut rng);
        let len = (cfg.len_min + z).min(cfg.len_max);
        let mut out = Vec::with_capacity(len + 1);
        let mut h = HistoryKey::initial(cfg);
        for _ in 0..len {
            let x = self.next_token(&h, &mut rng);
            out.push(x);
            h = shift(&h, x);
        }
        out.push(cfg.eos());
        out
    }
}

/// Convenience wrapper for one-off sentences.
pub fn sample_sentence(cfg: &NgramConfig, sentence_id: u64) -> Result<Vec<u32>> {
    Ok(NgramSampler::new(cfg)?.sample_sentence(sentence_id))
}

/// Pmf of `next_token` for history `h` (over tokens `0..V-1`).
pub fn next_token_pmf(cfg: &NgramConfig, h: &HistoryKey) -> Result<Vec<f64>> {
    crate::rngkit::zipf_pmf(ZipfParams::new(
        alpha_for_history(cfg, h),
        (cfg.vocab_size - 1) as usize,
    ))
}

/// Builds the in-memory shard for sentences `first..first + count`.
pub fn build_shard(cfg: &NgramConfig, first: u64, count: u64, workers: usize) -> Result<Shard> {
    cfg.validate()?;
    let chunk = cfg.sentences_per_document as u64;
    let n_docs = count.div_ceil(chunk);
    let docs: Vec<Vec<u32>> = with_pool(workers, || {
        (0..n_docs)
            .into_par_iter()
            .map(|d| {
                let mut sampler = NgramSampler::new(cfg).expect("config validated");
                let lo = first + d * chunk;
                let hi = (lo + chunk).min(first + count);
                (lo..hi).flat_map(|id| sampler.sample_sentence(id)).collect()
            })
            .collect()
    })?;
    Shard::from_documents(cfg.vocab_size, docs.iter().map(|d| d.as_slice()))
}

/// Writes `cfg.num_sentences` sentences to `path` as one shard.
pub fn generate_ngram_corpus(cfg: &NgramConfig, path: &Path, workers: usize) -> Result<ShardManifest> {
    let shard = build_shard(cfg, 0, cfg.num_sentences, workers)?;
    write_shard(path, &shard).map_err(|e| HlabError::ShardWrite {
        index: 0,
        source: Box::new(e),
    })
}

pub(crate) fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HlabError::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NgramConfig {
        NgramConfig {
            vocab_size: 5,
            len_max: 40,
            num_sentences: 100,
            sentences_per_document: 4,
            seed: 17,
            ..NgramConfig::paper()
        }
    }

    #[test]
    fn shift_rolls_window() {
        assert_eq!(shift(&HistoryKey(vec![1, 2, 3]), 4), HistoryKey(vec![2, 3, 4]));
        assert_eq!(shift(&HistoryKey(vec![1]), 2), HistoryKey(vec![2]));
        assert_eq!(shift(&HistoryKey(vec![9, 9]), 0), HistoryKey(vec![9, 0]));
    }

    #[test]
    fn zero_sigma_pins_alpha() {
        let cfg = NgramConfig { sigma: 0.0, ..small() };
        for t in 0..5 {
            assert_eq!(alpha_for_history(&cfg, &HistoryKey(vec![t])), 2.0);
        }
    }

    #[test]
    fn alpha_is_deterministic_and_floored() {
        let cfg = small();
        for t in 0..5 {
            let h = HistoryKey(vec![t]);
            let a = alpha_for_history(&cfg, &h);
            assert_eq!(a, alpha_for_history(&cfg, &h));
            assert!(a >= cfg.alpha_min);
        }
    }

    #[test]
    fn sentences_respect_bounds_and_end_with_eos() {
        let cfg = small();
        let mut s = NgramSampler::new(&cfg).unwrap();
        for id in 0..500 {
            let sent = s.sample_sentence(id);
            assert!(sent.len() > cfg.len_min && sent.len() <= cfg.len_max + 1);
            assert_eq!(*sent.last().unwrap(), cfg.eos());
            assert!(sent[..sent.len() - 1].iter().all(|&t| t < cfg.eos()));
        }
        assert_eq!(s.sample_sentence(3), sample_sentence(&cfg, 3).unwrap());
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let err = NgramConfig { order: 1, ..small() }.validate().unwrap_err();
        assert!(err.to_string().contains("ngram.order"));
        let err = NgramConfig { len_max: 5, ..small() }.validate().unwrap_err();
        assert!(err.to_string().contains("ngram.len_max"));
    }
}
