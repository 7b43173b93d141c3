// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, Normal};

use hlab_core::ngram::{self, next_token_pmf, shift, HistoryKey, NgramConfig};
use hlab_core::rngkit::{truncated_normal_max, zipf_pmf, SeedSpec, ZipfParams, ZipfTable};

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn desk_ngram() -> NgramConfig {
    NgramConfig {
        vocab_size: 200,
        num_sentences: 100_000,
        ..NgramConfig::paper()
    }
}

#[test]
fn zipf_frequencies_track_the_pmf() {
    let params = ZipfParams::new(1.0, 100);
    let pmf = zipf_pmf(params).unwrap();
    let table = ZipfTable::new(params).unwrap();
    let mut rng = SeedSpec::new(5, 1).stream();
    let n = 1_000_000;
    let mut counts = vec![0u64; 100];
    for _ in 0..n {
        counts[table.sample(&mut rng)] += 1;
    }
    let worst = counts
        .iter()
        .zip(&pmf)
        .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.005, "max abs deviation {worst}");
}

#[test]
fn clamped_normal_floor_mass_matches_cdf() {
    let (mu, sigma, floor) = (2.0, 1.2, 1.2);
    let mut rng = SeedSpec::new(6, 2).stream();
    let n = 200_000;
    let at_floor = (0..n).filter(|_| truncated_normal_max(mu, sigma, floor, &mut rng) == floor).count();
    let want = Normal::new(mu, sigma).unwrap().cdf(floor);
    let got = at_floor as f64 / n as f64;
    assert!((got - want).abs() < 0.005, "floor mass {got} vs {want}");
}

#[test]
fn clamped_normal_mean_matches_closed_form() {
    // E[max(X, c)] = c Φ(a) + μ (1 − Φ(a)) + σ φ(a), a = (c − μ)/σ.
    let (mu, sigma, c) = (2.0f64, 1.2f64, 1.2f64);
    let std = Normal::new(0.0, 1.0).unwrap();
    let a = (c - mu) / sigma;
    let pdf = (-a * a / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let want = c * std.cdf(a) + mu * (1.0 - std.cdf(a)) + sigma * pdf;
    let cfg = NgramConfig { mu, sigma, alpha_min: c, ..desk_ngram() };
    let n = 10_000u32;
    let mean = (0..n).map(|t| ngram::alpha_for_history(&cfg, &HistoryKey(vec![t]))).sum::<f64>() / f64::from(n);
    assert!((mean - want).abs() < 0.02, "mean alpha {mean} vs {want}");
}

#[test]
fn five_token_vocabulary_pmf() {
    let cfg = NgramConfig { vocab_size: 5, sigma: 0.0, mu: 1.0, alpha_min: 1.0, ..desk_ngram() };
    let pmf = next_token_pmf(&cfg, &HistoryKey(vec![4])).unwrap();
    for (got, want) in pmf.iter().zip([12.0 / 25.0, 6.0 / 25.0, 4.0 / 25.0, 3.0 / 25.0]) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn frequent_histories_follow_their_zipf_law() {
    let cfg = desk_ngram();
    let shard = ngram::build_shard(&cfg, 0, cfg.num_sentences, 1).unwrap();
    let eos = cfg.eos();
    let mut counts: HashMap<HistoryKey, Vec<u64>> = HashMap::new();
    let mut h = HistoryKey::initial(&cfg);
    let mut lengths = vec![0u64; cfg.len_max + 2];
    let mut len = 0usize;
    for &t in &shard.tokens {
        let t = u32::from(t);
        len += 1;
        if t == eos {
            lengths[len] += 1;
            len = 0;
            h = HistoryKey::initial(&cfg);
            continue;
        }
        counts.entry(h.clone()).or_insert_with(|| vec![0; cfg.vocab_size as usize - 1])[t as usize] += 1;
        h = shift(&h, t);
    }
    let mut checked = 0;
    for (h, c) in &counts {
        let total: u64 = c.iter().sum();
        if total < 10_000 {
            continue;
        }
        let emp: Vec<f64> = c.iter().map(|&x| x as f64 / total as f64).collect();
        let d = tv(&emp, &next_token_pmf(&cfg, h).unwrap());
        assert!(d < 0.02, "history {:?} ({total} occurrences): TV {d}", h.0);
        checked += 1;
    }
    assert!(checked > 0);

    // Sentence lengths: L + 1 with L = min(len_min + Z, len_max), Z ~ Zipf(2).
    let z = zipf_pmf(ZipfParams::new(cfg.length_exponent, cfg.length_support())).unwrap();
    let mut want = vec![0.0; lengths.len()];
    for (i, p) in z.iter().enumerate() {
        want[(cfg.len_min + i).min(cfg.len_max) + 1] += p;
    }
    let emp: Vec<f64> = lengths.iter().map(|&x| x as f64 / cfg.num_sentences as f64).collect();
    assert!(tv(&emp, &want) < 0.02);
}
