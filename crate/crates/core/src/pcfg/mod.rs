// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hierarchical corpus generator.
//!
//! A document is `sections × paragraphs × sentences` sentences. Each sentence
//! is an assertion (`Subject Verb Object`, optionally chained with connectors)
//! or a question (`Verb Subject Object`), terminated by EOS. Subject, verb and
//! object terminals are drawn from a Zipf law over their category and then
//! relabelled through a per-document permutation, so every document has its
//! own frequency ranking. The corpus repeats each document a fixed number of
//! times and shuffles the full list.

mod recognizer;
mod tree;

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

pub use recognizer::{
    parse_sentence, valid_next_categories, Category, CategoryMask, RecognizerState,
};
pub use tree::{Label, Node, Nonterminal, ParseTree};

use crate::corpus::{write_annotations, write_shard, AnnotationRecord, Shard, ShardManifest};
use crate::error::{HlabError, Result};
use crate::ngram::with_pool;
use crate::rngkit::{mix2, permutation, SeedSpec, Stream, ZipfParams, ZipfTable};

const DOMAIN_PERM: u64 = 0x7065_726d;
const DOMAIN_DOC: u64 = 0x646f_63;
const DOMAIN_SHUFFLE: u64 = 0x7368_7566;

/// Partition of the vocabulary into terminal categories plus EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabLayout {
    pub vocab_size: u32,
    pub eos_id: u32,
    pub subject: Range<u32>,
    pub verb: Range<u32>,
    pub object: Range<u32>,
    pub connector: Range<u32>,
}

impl VocabLayout {
    /// `fractions` = (subject, verb, object, connector) shares of the `V - 1`
    /// non-EOS ids. Subject, verb and object sizes are floored; connectors take
    /// the remainder.
    pub fn new(vocab_size: u32, fractions: [f64; 4]) -> Result<Self> {
        if vocab_size < 5 || vocab_size > u32::from(u16::MAX) {
            return Err(HlabError::config("pcfg.vocab_size", "must lie in [5, 65535]"));
        }
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(HlabError::config("pcfg.percentages", "each share must lie in [0, 1]"));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(HlabError::config(
                "pcfg.percentages",
                format!("shares sum to {sum}, expected 1"),
            ));
        }
        let n = f64::from(vocab_size - 1);
        let e = (fractions[0] * n).floor() as u32;
        let f = (fractions[1] * n).floor() as u32;
        let g = (fractions[2] * n).floor() as u32;
        let h = vocab_size - 1 - e - f - g;
        for (size, name) in [(e, "subject"), (f, "verb"), (g, "object"), (h, "connector")] {
            if size == 0 {
                return Err(HlabError::config(
                    "pcfg.percentages",
                    format!("{name} range is empty at vocab size {vocab_size}"),
                ));
            }
        }
        Ok(Self {
            vocab_size,
            eos_id: vocab_size - 1,
            subject: 0..e,
            verb: e..e + f,
            object: e + f..e + f + g,
            connector: e + f + g..vocab_size - 1,
        })
    }

    pub fn range(&self, c: Category) -> Range<u32> {
        match c {
            Category::Subject => self.subject.clone(),
            Category::Verb => self.verb.clone(),
            Category::Object => self.object.clone(),
            Category::Connector => self.connector.clone(),
            Category::Eos => self.eos_id..self.eos_id + 1,
        }
    }

    pub fn category(&self, token: u32) -> Option<Category> {
        Category::ALL
            .into_iter()
            .find(|&c| self.range(c).contains(&token))
    }

    /// Number of token ids whose category bit is set in `mask`.
    pub fn mask_size(&self, mask: CategoryMask) -> u32 {
        mask.categories().into_iter().map(|c| self.range(c).len() as u32).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcfgConfig {
    pub vocab_size: u32,
    /// Subject, verb, object, connector shares of the non-EOS ids.
    pub percentages: [f64; 4],
    pub num_documents: u64,
    pub document_repetitions: u32,
    pub sections_per_doc: u32,
    pub paragraphs_per_section: u32,
    pub sentences_per_paragraph: u32,
    pub terminal_zipf_exponent: f64,
    pub question_prob: f64,
    pub compound_prob: f64,
    pub max_compound_depth: u32,
    pub seed: u64,
}

impl PcfgConfig {
    /// Values from the published PCFG table; unlisted knobs use our defaults.
    pub fn paper() -> Self {
        Self {
            vocab_size: 1000,
            percentages: [0.3, 0.3, 0.3, 0.1],
            num_documents: 6_500_000,
            document_repetitions: 10,
            sections_per_doc: 10,
            paragraphs_per_section: 20,
            sentences_per_paragraph: 5,
            terminal_zipf_exponent: 1.0,
            question_prob: 0.3,
            compound_prob: 0.3,
            max_compound_depth: 3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<VocabLayout> {
        let counts = [
            ("pcfg.num_documents", self.num_documents),
            ("pcfg.document_repetitions", u64::from(self.document_repetitions)),
            ("pcfg.sections_per_doc", u64::from(self.sections_per_doc)),
            ("pcfg.paragraphs_per_section", u64::from(self.paragraphs_per_section)),
            ("pcfg.sentences_per_paragraph", u64::from(self.sentences_per_paragraph)),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(HlabError::config(name, "must be at least 1"));
            }
        }
        for (name, p) in [
            ("pcfg.question_prob", self.question_prob),
            ("pcfg.compound_prob", self.compound_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(HlabError::config(name, "must lie in [0, 1]"));
            }
        }
        if !(self.terminal_zipf_exponent >= 0.0) {
            return Err(HlabError::config("pcfg.terminal_zipf_exponent", "must be non-negative"));
        }
        VocabLayout::new(self.vocab_size, self.percentages)
    }

    pub fn sentences_per_document(&self) -> u64 {
        u64::from(self.sections_per_doc)
            * u64::from(self.paragraphs_per_section)
            * u64::from(self.sentences_per_paragraph)
    }
}

/// Per-document relabelling of subject, verb and object ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocPermutation {
    pub sigma_subject: Vec<usize>,
    pub sigma_verb: Vec<usize>,
    pub sigma_object: Vec<usize>,
}

impl DocPermutation {
    pub fn identity(layout: &VocabLayout) -> Self {
        Self {
            sigma_subject: (0..layout.subject.len()).collect(),
            sigma_verb: (0..layout.verb.len()).collect(),
            sigma_object: (0..layout.object.len()).collect(),
        }
    }

    pub fn for_document(seed: u64, doc_id: u64, layout: &VocabLayout) -> Self {
        let mut rng = SeedSpec::new(seed, mix2(DOMAIN_PERM, doc_id)).stream();
        Self {
            sigma_subject: permutation(layout.subject.len(), &mut rng),
            sigma_verb: permutation(layout.verb.len(), &mut rng),
            sigma_object: permutation(layout.object.len(), &mut rng),
        }
    }

    fn sigma(&self, c: Category) -> Option<&[usize]> {
        match c {
            Category::Subject => Some(&self.sigma_subject),
            Category::Verb => Some(&self.sigma_verb),
            Category::Object => Some(&self.sigma_object),
            Category::Connector | Category::Eos => None,
        }
    }
}

/// Samples derivations under one config. Holds the terminal Zipf tables.
pub struct Grammar {
    pub cfg: PcfgConfig,
    pub layout: VocabLayout,
    subject: ZipfTable,
    verb: ZipfTable,
    object: ZipfTable,
}

/// One generated document with its per-sentence annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub tokens: Vec<u32>,
    pub trees: Vec<ParseTree>,
    /// `(start, end)` token span of every sentence, end exclusive.
    pub spans: Vec<(usize, usize)>,
    /// Valid categories for the token at each position, given its sentence prefix.
    pub masks: Vec<CategoryMask>,
}

impl Grammar {
    pub fn new(cfg: PcfgConfig) -> Result<Self> {
        let layout = cfg.validate()?;
        let table = |r: &Range<u32>| ZipfTable::new(ZipfParams::new(cfg.terminal_zipf_exponent, r.len()));
        Ok(Self {
            subject: table(&layout.subject)?,
            verb: table(&layout.verb)?,
            object: table(&layout.object)?,
            cfg,
            layout,
        })
    }

    /// Draws a terminal of category `c`: Zipf rank, then document relabelling.
    /// Connectors are uniform and never relabelled.
    pub fn terminal(&self, c: Category, perm: &DocPermutation, rng: &mut Stream) -> u32 {
        let range = self.layout.range(c);
        let rank = match c {
            Category::Subject => self.subject.sample(rng),
            Category::Verb => self.verb.sample(rng),
            Category::Object => self.object.sample(rng),
            Category::Connector => rng.random_range(0..range.len()),
            Category::Eos => 0,
        };
        let slot = perm.sigma(c).map_or(rank, |s| s[rank]);
        range.start + slot as u32
    }

    /// Expands `symbol` into a subtree of `tree`, returning the new node id.
    ///
    /// Assertion recursion is left-branching: the left child may compound
    /// again while the right child is always a simple clause. Past
    /// `max_compound_depth` the simple rule is used.
    pub fn expand(
        &self,
        tree: &mut ParseTree,
        symbol: Nonterminal,
        perm: &DocPermutation,
        rng: &mut Stream,
        depth: u32,
    ) -> usize {
        use Nonterminal as N;
        let node = tree.push(Label::Nonterminal(symbol));
        match symbol {
            N::Sentence => {
                let st = self.expand(tree, N::SentenceType, perm, rng, depth);
                tree.attach(node, st);
                let eos = tree.push(Label::Token(self.layout.eos_id));
                tree.attach(node, eos);
            }
            N::SentenceType => {
                let child = if rng.random::<f64>() < self.cfg.question_prob {
                    N::Question
                } else {
                    N::Assertion
                };
                let c = self.expand(tree, child, perm, rng, 0);
                tree.attach(node, c);
            }
            N::Assertion => {
                let compound = depth < self.cfg.max_compound_depth
                    && rng.random::<f64>() < self.cfg.compound_prob;
                if compound {
                    let left = self.expand(tree, N::Assertion, perm, rng, depth + 1);
                    tree.attach(node, left);
                    let conn = self.expand(tree, N::Connector, perm, rng, depth);
                    tree.attach(node, conn);
                    let right = self.expand(tree, N::Assertion, perm, rng, self.cfg.max_compound_depth);
                    tree.attach(node, right);
                } else {
                    for nt in [N::Subject, N::Verb, N::Object] {
                        let c = self.expand(tree, nt, perm, rng, depth);
                        tree.attach(node, c);
                    }
                }
            }
            N::Question => {
                for nt in [N::Verb, N::Subject, N::Object] {
                    let c = self.expand(tree, nt, perm, rng, depth);
                    tree.attach(node, c);
                }
            }
            N::Subject | N::Verb | N::Object | N::Connector => {
                let cat = match symbol {
                    N::Subject => Category::Subject,
                    N::Verb => Category::Verb,
                    N::Object => Category::Object,
                    _ => Category::Connector,
                };
                let leaf = tree.push(Label::Token(self.terminal(cat, perm, rng)));
                tree.attach(node, leaf);
            }
        }
        node
    }

    pub fn sample_sentence(&self, perm: &DocPermutation, rng: &mut Stream) -> ParseTree {
        let mut tree = ParseTree::default();
        self.expand(&mut tree, Nonterminal::Sentence, perm, rng, 0);
        tree
    }

    /// Document `doc_id`; a pure function of `(seed, doc_id)`.
    pub fn sample_document(&self, doc_id: u64) -> Document {
        let perm = DocPermutation::for_document(self.cfg.seed, doc_id, &self.layout);
        let mut rng = SeedSpec::new(self.cfg.seed, mix2(DOMAIN_DOC, doc_id)).stream();
        let n = self.cfg.sentences_per_document() as usize;
        let mut doc = Document {
            tokens: Vec::with_capacity(n * 6),
            trees: Vec::with_capacity(n),
            spans: Vec::with_capacity(n),
            masks: Vec::with_capacity(n * 6),
        };
        for _ in 0..n {
            let tree = self.sample_sentence(&perm, &mut rng);
            let start = doc.tokens.len();
            let mut state = RecognizerState::Start;
            for tok in tree.yield_tokens() {
                let mask = valid_next_categories(state).expect("generator emits grammatical prefixes");
                let cat = self.layout.category(tok).expect("generated token is in range");
                debug_assert!(mask.contains(cat));
                state = state.step(cat).expect("generator emits grammatical sentences");
                doc.masks.push(mask);
                doc.tokens.push(tok);
            }
            doc.spans.push((start, doc.tokens.len()));
            doc.trees.push(tree);
        }
        doc
    }

    /// Corpus order: every document id repeated, then a seeded shuffle.
    pub fn corpus_order(&self) -> Vec<u64> {
        let reps = u64::from(self.cfg.document_repetitions);
        let total = self.cfg.num_documents * reps;
        let mut rng = SeedSpec::new(self.cfg.seed, mix2(DOMAIN_SHUFFLE, 0)).stream();
        permutation(total as usize, &mut rng)
            .into_iter()
            .map(|i| i as u64 / reps)
            .collect()
    }
}

/// Shard plus annotation records for documents listed in `order`.
pub fn build_shard(
    grammar: &Grammar,
    order: &[u64],
    workers: usize,
) -> Result<(Shard, Vec<AnnotationRecord>)> {
    let mut unique: Vec<u64> = order.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let docs: Vec<Document> =
        with_pool(workers, || unique.par_iter().map(|&d| grammar.sample_document(d)).collect())?;

    let mut records = Vec::new();
    let mut offset = 0u64;
    let mut rows: Vec<&[u32]> = Vec::with_capacity(order.len());
    for id in order {
        let doc = &docs[unique.binary_search(id).expect("id collected above")];
        for ((start, end), tree) in doc.spans.iter().zip(&doc.trees) {
            records.push(AnnotationRecord {
                start: offset + *start as u64,
                end: offset + *end as u64,
                tree: tree.clone(),
                masks: doc.masks[*start..*end].iter().map(|m| m.0).collect(),
            });
        }
        offset += doc.tokens.len() as u64;
        rows.push(&doc.tokens);
    }
    let shard = Shard::from_documents(grammar.layout.vocab_size, rows.into_iter())?;
    Ok((shard, records))
}

/// Writes the shuffled, repeated corpus and its annotation sidecar.
pub fn generate_pcfg_corpus(
    cfg: &PcfgConfig,
    shard_path: &Path,
    sidecar_path: &Path,
    workers: usize,
) -> Result<ShardManifest> {
    let grammar = Grammar::new(cfg.clone())?;
    let order = grammar.corpus_order();
    let (shard, records) = build_shard(&grammar, &order, workers)?;
    let wrap = |e| HlabError::ShardWrite {
        index: 0,
        source: Box::new(e),
    };
    let manifest = write_shard(shard_path, &shard).map_err(wrap)?;
    write_annotations(sidecar_path, &manifest.sha256, &records).map_err(wrap)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> PcfgConfig {
        PcfgConfig {
            vocab_size: 200,
            num_documents: 5,
            document_repetitions: 2,
            sections_per_doc: 2,
            paragraphs_per_section: 2,
            sentences_per_paragraph: 2,
            seed: 9,
            ..PcfgConfig::paper()
        }
    }

    #[test]
    fn layout_partitions_vocabulary() {
        let l = VocabLayout::new(200, [0.3, 0.3, 0.3, 0.1]).unwrap();
        assert_eq!(l.subject, 0..59);
        assert_eq!(l.verb, 59..118);
        assert_eq!(l.object, 118..177);
        assert_eq!(l.connector, 177..199);
        assert_eq!(l.eos_id, 199);
        for t in 0..200 {
            assert!(l.category(t).is_some());
        }
        assert_eq!(l.category(200), None);
    }

    #[test]
    fn bad_percentages_rejected() {
        let err = VocabLayout::new(200, [0.3, 0.3, 0.3, 0.2]).unwrap_err();
        assert!(err.to_string().contains("pcfg.percentages"));
    }

    #[test]
    fn desk_document_has_eight_sentences() {
        let g = Grammar::new(desk()).unwrap();
        let doc = g.sample_document(3);
        assert_eq!(doc.trees.len(), 8);
        assert_eq!(doc.masks.len(), doc.tokens.len());
        for (i, &t) in doc.tokens.iter().enumerate() {
            assert!(doc.masks[i].contains(g.layout.category(t).unwrap()));
        }
        for &(_, end) in &doc.spans {
            assert_eq!(doc.tokens[end - 1], g.layout.eos_id);
        }
        assert_eq!(doc, g.sample_document(3));
    }

    #[test]
    fn question_leaf_order() {
        let cfg = PcfgConfig {
            question_prob: 1.0,
            ..desk()
        };
        let g = Grammar::new(cfg).unwrap();
        let perm = DocPermutation::identity(&g.layout);
        let mut rng = SeedSpec::new(1, 1).stream();
        for _ in 0..50 {
            let toks = g.sample_sentence(&perm, &mut rng).yield_tokens();
            let cats: Vec<_> = toks.iter().map(|&t| g.layout.category(t).unwrap()).collect();
            assert_eq!(
                cats,
                vec![Category::Verb, Category::Subject, Category::Object, Category::Eos]
            );
        }
    }

    #[test]
    fn no_recursion_gives_three_leaves() {
        let cfg = PcfgConfig {
            question_prob: 0.0,
            compound_prob: 0.0,
            ..desk()
        };
        let g = Grammar::new(cfg).unwrap();
        let perm = DocPermutation::identity(&g.layout);
        let mut rng = SeedSpec::new(2, 1).stream();
        for _ in 0..50 {
            assert_eq!(g.sample_sentence(&perm, &mut rng).yield_tokens().len(), 4);
        }
    }

    #[test]
    fn generated_trees_match_canonical_reparse() {
        let g = Grammar::new(PcfgConfig {
            compound_prob: 0.6,
            ..desk()
        })
        .unwrap();
        for d in 0..20 {
            let doc = g.sample_document(d);
            for (tree, &(s, e)) in doc.trees.iter().zip(&doc.spans) {
                let reparsed = parse_sentence(&doc.tokens[s..e], &g.layout).unwrap();
                assert_eq!(&reparsed, tree);
            }
        }
    }

    #[test]
    fn corpus_order_repeats_each_document() {
        let g = Grammar::new(desk()).unwrap();
        let mut order = g.corpus_order();
        assert_eq!(order.len(), 10);
        order.sort_unstable();
        assert_eq!(order, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
    }
}
