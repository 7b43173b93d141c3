// SPDX-License-Identifier: MIT OR Apache-2.0

//! WebAssembly bindings for the static demo page in `www/`.

use wasm_bindgen::prelude::*;

use hlab_core::ngram::{self, NgramConfig};
use hlab_core::pcfg::{Category, Document, Grammar, PcfgConfig};
use hlab_core::rngkit::{self, ZipfParams};

/// Zipf probabilities `p(t) ∝ (t + 1)^-exponent` for `t < support`.
#[wasm_bindgen]
pub fn zipf_pmf(exponent: f64, support: usize) -> Result<Vec<f64>, String> {
    rngkit::zipf_pmf(ZipfParams::new(exponent, support)).map_err(|e| e.to_string())
}

fn category_name(c: Category) -> &'static str {
    match c {
        Category::Subject => "S",
        Category::Verb => "V",
        Category::Object => "O",
        Category::Connector => "C",
        Category::Eos => "EOS",
    }
}

/// One sampled PCFG document.
#[wasm_bindgen]
pub struct DocumentView {
    grammar: Grammar,
    doc: Document,
}

#[wasm_bindgen]
impl DocumentView {
    /// Samples document `doc_id` of a grammar with two sections of two
    /// paragraphs of `sentences_per_paragraph` sentences.
    #[wasm_bindgen(constructor)]
    pub fn new(vocab_size: u32, seed: u64, doc_id: u64, sentences_per_paragraph: u32) -> Result<DocumentView, String> {
        let cfg = PcfgConfig {
            vocab_size,
            num_documents: doc_id + 1,
            sections_per_doc: 2,
            paragraphs_per_section: 2,
            sentences_per_paragraph,
            seed,
            ..PcfgConfig::paper()
        };
        let grammar = Grammar::new(cfg).map_err(|e| e.to_string())?;
        let doc = grammar.sample_document(doc_id);
        Ok(DocumentView { grammar, doc })
    }

    pub fn sentence_count(&self) -> usize {
        self.doc.trees.len()
    }

    pub fn tokens(&self, i: usize) -> Vec<u32> {
        let (s, e) = self.doc.spans[i];
        self.doc.tokens[s..e].to_vec()
    }

    /// Space-separated category of each token.
    pub fn categories(&self, i: usize) -> String {
        self.tokens(i)
            .into_iter()
            .map(|t| self.grammar.layout.category(t).map(category_name).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Space-separated valid next categories before each token.
    pub fn masks(&self, i: usize) -> String {
        let (s, e) = self.doc.spans[i];
        self.doc.masks[s..e]
            .iter()
            .map(|m| m.categories().into_iter().map(category_name).collect::<Vec<_>>().join("|"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn bracketed(&self, i: usize) -> String {
        self.doc.trees[i].to_bracketed()
    }

    /// Row-major leaf-to-leaf tree distances.
    pub fn distances(&self, i: usize) -> Vec<u32> {
        self.doc.trees[i].distance_matrix().into_iter().flatten().map(|d| d as u32).collect()
    }
}

/// Sentence `sentence_id` of a bigram corpus, EOS included.
#[wasm_bindgen]
pub fn ngram_sentence(vocab_size: u32, seed: u64, mu: f64, sigma: f64, sentence_id: u64) -> Result<Vec<u32>, String> {
    let cfg = NgramConfig {
        vocab_size,
        mu,
        sigma,
        len_max: 60,
        seed,
        ..NgramConfig::paper()
    };
    ngram::sample_sentence(&cfg, sentence_id).map_err(|e| e.to_string())
}

/// Next-token probabilities after token `prev` in the same corpus.
#[wasm_bindgen]
pub fn ngram_next_pmf(vocab_size: u32, seed: u64, mu: f64, sigma: f64, prev: u32) -> Result<Vec<f64>, String> {
    let cfg = NgramConfig {
        vocab_size,
        mu,
        sigma,
        len_max: 60,
        seed,
        ..NgramConfig::paper()
    };
    ngram::next_token_pmf(&cfg, &ngram::HistoryKey(vec![prev])).map_err(|e| e.to_string())
}
