// SPDX-License-Identifier: MIT OR Apache-2.0

//! Category-level recognizer for single sentences, plus the canonical re-parser.

use super::tree::{Label, Nonterminal, ParseTree};
use super::VocabLayout;
use crate::error::{HlabError, Result};

/// Terminal category of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Subject,
    Verb,
    Object,
    Connector,
    Eos,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Subject,
        Category::Verb,
        Category::Object,
        Category::Connector,
        Category::Eos,
    ];

    pub fn bit(self) -> u8 {
        match self {
            Category::Subject => CategoryMask::SUBJ,
            Category::Verb => CategoryMask::VERB,
            Category::Object => CategoryMask::OBJ,
            Category::Connector => CategoryMask::CONN,
            Category::Eos => CategoryMask::EOS,
        }
    }
}

/// Set of categories packed into one byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CategoryMask(pub u8);

impl CategoryMask {
    pub const SUBJ: u8 = 1;
    pub const VERB: u8 = 1 << 1;
    pub const OBJ: u8 = 1 << 2;
    pub const CONN: u8 = 1 << 3;
    pub const EOS: u8 = 1 << 4;
    pub const ALL: CategoryMask = CategoryMask(0x1f);

    pub fn of(cats: &[Category]) -> Self {
        CategoryMask(cats.iter().fold(0, |m, c| m | c.bit()))
    }

    pub fn contains(self, c: Category) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn categories(self) -> Vec<Category> {
        Category::ALL.into_iter().filter(|&c| self.contains(c)).collect()
    }
}

/// DFA states over category sequences of one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecognizerState {
    Start,
    /// Assertion clause: subject read.
    ClauseSubject,
    ClauseVerb,
    /// A full clause is read; may continue with a connector or end.
    ClauseObject,
    /// Connector read; next clause must start with its subject.
    AfterConnector,
    QuestionVerb,
    QuestionSubject,
    QuestionObject,
    /// EOS consumed; nothing may follow inside this sentence.
    Complete,
}

impl RecognizerState {
    /// Transition on one category; `None` when the category cannot follow.
    pub fn step(self, c: Category) -> Option<RecognizerState> {
        use Category as C;
        use RecognizerState as S;
        match (self, c) {
            (S::Start, C::Subject) => Some(S::ClauseSubject),
            (S::Start, C::Verb) => Some(S::QuestionVerb),
            (S::ClauseSubject, C::Verb) => Some(S::ClauseVerb),
            (S::ClauseVerb, C::Object) => Some(S::ClauseObject),
            (S::ClauseObject, C::Connector) => Some(S::AfterConnector),
            (S::ClauseObject, C::Eos) => Some(S::Complete),
            (S::AfterConnector, C::Subject) => Some(S::ClauseSubject),
            (S::QuestionVerb, C::Subject) => Some(S::QuestionSubject),
            (S::QuestionSubject, C::Object) => Some(S::QuestionObject),
            (S::QuestionObject, C::Eos) => Some(S::Complete),
            _ => None,
        }
    }

    /// Runs the DFA over a category prefix.
    pub fn from_prefix(prefix: &[Category]) -> Result<Self> {
        prefix
            .iter()
            .enumerate()
            .try_fold(RecognizerState::Start, |s, (i, &c)| {
                s.step(c).ok_or_else(|| HlabError::Reject {
                    position: i,
                    reason: format!("{c:?} cannot follow state {s:?}"),
                })
            })
    }
}

/// Categories that can extend a sentence prefix in state `state`.
pub fn valid_next_categories(state: RecognizerState) -> Result<CategoryMask> {
    use RecognizerState as S;
    let m = match state {
        S::Start => CategoryMask::SUBJ | CategoryMask::VERB,
        S::ClauseSubject => CategoryMask::VERB,
        S::AfterConnector => CategoryMask::SUBJ,
        S::ClauseVerb => CategoryMask::OBJ,
        S::ClauseObject => CategoryMask::CONN | CategoryMask::EOS,
        S::QuestionVerb => CategoryMask::SUBJ,
        S::QuestionSubject => CategoryMask::OBJ,
        S::QuestionObject => CategoryMask::EOS,
        S::Complete => {
            return Err(HlabError::Contract(
                "no continuation exists after a sentence's EOS".into(),
            ))
        }
    };
    Ok(CategoryMask(m))
}

/// Accepts a token sentence and returns its canonical (left-associative) tree.
pub fn parse_sentence(tokens: &[u32], layout: &VocabLayout) -> Result<ParseTree> {
    let mut state = RecognizerState::Start;
    let mut cats = Vec::with_capacity(tokens.len());
    for (i, &t) in tokens.iter().enumerate() {
        let c = layout.category(t).ok_or_else(|| HlabError::Reject {
            position: i,
            reason: format!("token {t} is outside the vocabulary"),
        })?;
        state = state.step(c).ok_or_else(|| HlabError::Reject {
            position: i,
            reason: format!("{c:?} cannot follow state {state:?}"),
        })?;
        cats.push(c);
    }
    if state != RecognizerState::Complete {
        return Err(HlabError::Reject {
            position: tokens.len(),
            reason: "sentence does not end in EOS after a complete clause".into(),
        });
    }

    let mut tree = ParseTree::default();
    let sentence = tree.push(Label::Nonterminal(Nonterminal::Sentence));
    let stype = tree.push(Label::Nonterminal(Nonterminal::SentenceType));
    tree.attach(sentence, stype);
    let body = &tokens[..tokens.len() - 1];
    if cats[0] == Category::Verb {
        let q = tree.push(Label::Nonterminal(Nonterminal::Question));
        tree.attach(stype, q);
        for (nt, &tok) in [Nonterminal::Verb, Nonterminal::Subject, Nonterminal::Object]
            .into_iter()
            .zip(body)
        {
            attach_preterminal(&mut tree, q, nt, tok);
        }
    } else {
        // Clauses are S V O separated by single connectors: positions 4k.. 4k+2.
        let n_clauses = (body.len() + 1) / 4;
        let mut left = simple_clause(&mut tree, &body[0..3]);
        for k in 1..n_clauses {
            let parent = tree.push(Label::Nonterminal(Nonterminal::Assertion));
            tree.attach(parent, left);
            attach_preterminal(&mut tree, parent, Nonterminal::Connector, body[4 * k - 1]);
            let right = simple_clause(&mut tree, &body[4 * k..4 * k + 3]);
            tree.attach(parent, right);
            left = parent;
        }
        tree.attach(stype, left);
    }
    let eos = tree.push(Label::Token(*tokens.last().expect("non-empty")));
    tree.attach(sentence, eos);
    // Canonicalise node order to pre-order so that structurally equal trees compare equal.
    ParseTree::from_preorder(&tree.to_preorder())
}

fn simple_clause(tree: &mut ParseTree, svo: &[u32]) -> usize {
    let a = tree.push(Label::Nonterminal(Nonterminal::Assertion));
    for (nt, &tok) in [Nonterminal::Subject, Nonterminal::Verb, Nonterminal::Object]
        .into_iter()
        .zip(svo)
    {
        attach_preterminal(tree, a, nt, tok);
    }
    a
}

pub(crate) fn attach_preterminal(tree: &mut ParseTree, parent: usize, nt: Nonterminal, tok: u32) {
    let p = tree.push(Label::Nonterminal(nt));
    tree.attach(parent, p);
    let l = tree.push(Label::Token(tok));
    tree.attach(p, l);
}

#[cfg(test)]
mod tests {
    use super::*;
    use Category as C;

    #[test]
    fn dfa_masks_for_named_prefixes() {
        let m = |p: &[Category]| valid_next_categories(RecognizerState::from_prefix(p).unwrap()).unwrap();
        assert_eq!(m(&[]), CategoryMask::of(&[C::Subject, C::Verb]));
        assert_eq!(m(&[C::Verb, C::Subject, C::Object]), CategoryMask::of(&[C::Eos]));
        assert_eq!(
            m(&[C::Subject, C::Verb, C::Object]),
            CategoryMask::of(&[C::Connector, C::Eos])
        );
        assert_eq!(m(&[C::Subject, C::Verb, C::Object, C::Connector]), CategoryMask::of(&[C::Subject]));
    }

    #[test]
    fn complete_state_has_no_continuation() {
        assert!(matches!(
            valid_next_categories(RecognizerState::Complete),
            Err(HlabError::Contract(_))
        ));
    }

    #[test]
    fn parse_accepts_and_rejects() {
        let layout = VocabLayout::new(20, [0.3, 0.3, 0.3, 0.1]).unwrap();
        let (s, v, o) = (layout.subject.start, layout.verb.start, layout.object.start);
        let eos = layout.eos_id;
        let t = parse_sentence(&[s, v, o, eos], &layout).unwrap();
        assert_eq!(t.yield_tokens(), vec![s, v, o, eos]);
        match parse_sentence(&[v, o, s, eos], &layout) {
            Err(HlabError::Reject { position, .. }) => assert_eq!(position, 1),
            other => panic!("expected rejection, got {other:?}"),
        }
        assert!(parse_sentence(&[s, v, o], &layout).is_err());
    }

    #[test]
    fn compound_parse_is_left_associative() {
        let layout = VocabLayout::new(20, [0.3, 0.3, 0.3, 0.1]).unwrap();
        let (s, v, o, c) = (
            layout.subject.start,
            layout.verb.start,
            layout.object.start,
            layout.connector.start,
        );
        let sent = [s, v, o, c, s, v, o, c, s, v, o, layout.eos_id];
        let t = parse_sentence(&sent, &layout).unwrap();
        assert_eq!(t.yield_tokens(), sent.to_vec());
        // Left-branching: the first clause sits two Assertion levels below the top one.
        assert_eq!(t.tree_distance(0, 11).unwrap(), 7);
        assert_eq!(t.tree_distance(8, 11).unwrap(), 6);
    }
}
