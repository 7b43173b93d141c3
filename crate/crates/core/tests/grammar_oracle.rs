// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use hlab_core::pcfg::{parse_sentence, Category, Grammar, PcfgConfig};

#[test]
fn recognizer_matches_enumerated_derivations() {
    let report = common::grammar_oracle(12);
    // Assertion chain of lengths 0..=12, plus V, VS, VSO.
    assert_eq!(report.prefixes, 13 + 3);
    assert!(report.mismatches.is_empty(), "{:#?}", report.mismatches);
}

#[test]
fn enumerator_knows_the_small_sentences() {
    use Category::*;
    let lang = common::grammar_language(8);
    assert_eq!(
        lang.into_iter().collect::<Vec<_>>(),
        vec![
            vec![Subject, Verb, Object, Connector, Subject, Verb, Object, Eos],
            vec![Subject, Verb, Object, Eos],
            vec![Verb, Subject, Object, Eos],
        ]
    );
}

#[test]
fn every_generated_sentence_reparses_to_its_tree() {
    let cfg = PcfgConfig {
        vocab_size: 200,
        num_documents: 50,
        sections_per_doc: 2,
        paragraphs_per_section: 2,
        sentences_per_paragraph: 5,
        seed: 11,
        ..PcfgConfig::paper()
    };
    let g = Grammar::new(cfg).unwrap();
    let mut n = 0;
    for doc_id in 0..50 {
        let doc = g.sample_document(doc_id);
        for (tree, &(s, e)) in doc.trees.iter().zip(&doc.spans) {
            assert_eq!(&parse_sentence(&doc.tokens[s..e], &g.layout).unwrap(), tree);
            n += 1;
        }
    }
    assert_eq!(n, 50 * 20);
}
