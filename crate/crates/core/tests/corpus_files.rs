// SPDX-License-Identifier: MIT OR Apache-2.0

use hlab_core::corpus::{file_sha256, iterate_batches, read_annotations, read_shard, Shard};
use hlab_core::ngram::{self, generate_ngram_corpus, NgramConfig};
use hlab_core::pcfg::{generate_pcfg_corpus, Grammar, PcfgConfig};

fn tiny_pcfg() -> PcfgConfig {
    PcfgConfig {
        vocab_size: 60,
        num_documents: 3,
        document_repetitions: 2,
        sections_per_doc: 1,
        paragraphs_per_section: 1,
        sentences_per_paragraph: 2,
        seed: 7,
        ..PcfgConfig::paper()
    }
}

fn tiny_ngram() -> NgramConfig {
    NgramConfig {
        vocab_size: 30,
        num_sentences: 10,
        len_max: 40,
        sentences_per_document: 4,
        seed: 7,
        ..NgramConfig::paper()
    }
}

// Pinned file hashes; little-endian fixed-width encoding makes them
// platform independent.
const GOLDEN_PCFG_SHARD: &str = "c9545b3888a9d6a5b1c3432b326adbdd41a208859fde921aae4630b662fc4505";
const GOLDEN_NGRAM_SHARD: &str = "4efffd87997974a823dce58bfe36fb61ac5a364a54247eea55c69c4f49973370";

#[test]
fn golden_shards_hash_identically() {
    let dir = tempfile::tempdir().unwrap();
    let shard = dir.path().join("p.bin");
    let ann = dir.path().join("p.ann");
    let m = generate_pcfg_corpus(&tiny_pcfg(), &shard, &ann, 1).unwrap();
    let n = generate_ngram_corpus(&tiny_ngram(), &dir.path().join("n.bin"), 1).unwrap();
    assert_eq!(m.sha256, GOLDEN_PCFG_SHARD);
    assert_eq!(n.sha256, GOLDEN_NGRAM_SHARD);
    assert_eq!(file_sha256(&shard).unwrap(), m.sha256);
    assert_eq!(read_annotations(&ann, Some(&m.sha256)).unwrap().len(), 12);
}

#[test]
fn worker_count_does_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PcfgConfig { num_documents: 17, ..tiny_pcfg() };
    let a = generate_pcfg_corpus(&cfg, &dir.path().join("a.bin"), &dir.path().join("a.ann"), 1).unwrap();
    let b = generate_pcfg_corpus(&cfg, &dir.path().join("b.bin"), &dir.path().join("b.ann"), 4).unwrap();
    assert_eq!(a.sha256, b.sha256);
    assert_eq!(
        file_sha256(&dir.path().join("a.ann")).unwrap(),
        file_sha256(&dir.path().join("b.ann")).unwrap()
    );
    let ncfg = NgramConfig { num_sentences: 300, ..tiny_ngram() };
    let x = generate_ngram_corpus(&ncfg, &dir.path().join("x.bin"), 1).unwrap();
    let y = generate_ngram_corpus(&ncfg, &dir.path().join("y.bin"), 3).unwrap();
    assert_eq!(x.sha256, y.sha256);
}

#[test]
fn sentence_counts_match_closed_forms() {
    let cfg = PcfgConfig {
        vocab_size: 200,
        num_documents: 30,
        sections_per_doc: 2,
        paragraphs_per_section: 2,
        sentences_per_paragraph: 5,
        ..PcfgConfig::paper()
    };
    let dir = tempfile::tempdir().unwrap();
    let (bin, ann) = (dir.path().join("c.bin"), dir.path().join("c.ann"));
    let m = generate_pcfg_corpus(&cfg, &bin, &ann, 1).unwrap();
    let records = read_annotations(&ann, Some(&m.sha256)).unwrap();
    assert_eq!(records.len() as u64, 30 * 10 * 2 * 2 * 5);
    let shard = read_shard(&bin).unwrap();
    assert_eq!(shard.document_count(), 300);
    // The shuffle keeps the token multiset of the repeated documents.
    let g = Grammar::new(cfg).unwrap();
    let mut want: Vec<u32> = (0..30).flat_map(|d| g.sample_document(d).tokens).collect::<Vec<_>>();
    want = want.iter().cycle().take(want.len() * 10).copied().collect();
    let mut got: Vec<u32> = shard.tokens.iter().map(|&t| u32::from(t)).collect();
    want.sort_unstable();
    got.sort_unstable();
    assert_eq!(got, want);

    let ncfg = NgramConfig { num_sentences: 500, ..tiny_ngram() };
    let nshard = ngram::build_shard(&ncfg, 0, 500, 1).unwrap();
    let recount: usize = (0..500).map(|i| ngram::sample_sentence(&ncfg, i).unwrap().len()).sum();
    assert_eq!(nshard.tokens.len(), recount);
}

#[test]
fn epoch_targets_recount() {
    let docs: Vec<Vec<u32>> = [10usize, 4, 1, 7, 2].iter().map(|&n| (0..n as u32).collect()).collect();
    let shard = Shard::from_documents(16, docs.iter().map(|d| d.as_slice())).unwrap();
    let batches = iterate_batches(std::slice::from_ref(&shard), 4, 2, 3).unwrap();
    let targets: usize = batches.iter().map(|b| b.target_count()).sum();
    assert_eq!(targets, docs.iter().map(|d| d.len().saturating_sub(1)).sum::<usize>());
}
