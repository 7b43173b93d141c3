// SPDX-License-Identifier: MIT OR Apache-2.0

//! Derivation trees and leaf-to-leaf tree distances.

use crate::error::{HlabError, Result};

/// Nonterminals of the sentence grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Nonterminal {
    Sentence = 0,
    SentenceType = 1,
    Assertion = 2,
    Question = 3,
    Subject = 4,
    Verb = 5,
    Object = 6,
    Connector = 7,
}

impl Nonterminal {
    pub const ALL: [Nonterminal; 8] = [
        Nonterminal::Sentence,
        Nonterminal::SentenceType,
        Nonterminal::Assertion,
        Nonterminal::Question,
        Nonterminal::Subject,
        Nonterminal::Verb,
        Nonterminal::Object,
        Nonterminal::Connector,
    ];

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonterminal::Sentence => "Sentence",
            Nonterminal::SentenceType => "SentenceType",
            Nonterminal::Assertion => "Assertion",
            Nonterminal::Question => "Question",
            Nonterminal::Subject => "Subject",
            Nonterminal::Verb => "Verb",
            Nonterminal::Object => "Object",
            Nonterminal::Connector => "Connector",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Nonterminal(Nonterminal),
    Token(u32),
}

const NONTERMINAL_TAG: u32 = 0x8000_0000;

impl Label {
    /// Wire encoding: tokens as-is, nonterminals with the top bit set.
    pub fn encode(self) -> u32 {
        match self {
            Label::Token(t) => t,
            Label::Nonterminal(n) => NONTERMINAL_TAG | n as u32,
        }
    }

    pub fn decode(raw: u32) -> Option<Self> {
        if raw & NONTERMINAL_TAG != 0 {
            Nonterminal::from_id(raw & !NONTERMINAL_TAG).map(Label::Nonterminal)
        } else {
            Some(Label::Token(raw))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub label: Label,
    pub children: Vec<usize>,
}

/// Arena-allocated tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParseTree {
    pub nodes: Vec<Node>,
}

impl ParseTree {
    pub fn root(&self) -> usize {
        0
    }

    pub(crate) fn push(&mut self, label: Label) -> usize {
        self.nodes.push(Node {
            label,
            children: Vec::new(),
        });
        self.nodes.len() - 1
    }

    pub(crate) fn attach(&mut self, parent: usize, child: usize) {
        self.nodes[parent].children.push(child);
    }

    /// Leaf node ids in left-to-right order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![self.root()];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.children.is_empty() {
                out.push(n);
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    /// Token sequence read off the leaves.
    pub fn yield_tokens(&self) -> Vec<u32> {
        self.leaves()
            .into_iter()
            .filter_map(|n| match self.nodes[n].label {
                Label::Token(t) => Some(t),
                Label::Nonterminal(_) => None,
            })
            .collect()
    }

    /// Pre-order `(label, child_count)` pairs.
    pub fn to_preorder(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.nodes.len());
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![self.root()];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            out.push((node.label.encode(), node.children.len() as u32));
            stack.extend(node.children.iter().rev());
        }
        out
    }

    /// Rebuilds a tree from its pre-order encoding.
    pub fn from_preorder(items: &[(u32, u32)]) -> Result<Self> {
        let mut tree = ParseTree::default();
        // (node id, children still expected)
        let mut open: Vec<(usize, u32)> = Vec::new();
        for (i, &(raw, count)) in items.iter().enumerate() {
            let label = Label::decode(raw)
                .ok_or_else(|| HlabError::Contract(format!("bad label {raw:#x} at node {i}")))?;
            let id = tree.push(label);
            if let Some((parent, remaining)) = open.last_mut() {
                let p = *parent;
                *remaining -= 1;
                if *remaining == 0 {
                    open.pop();
                }
                tree.attach(p, id);
            } else if i != 0 {
                return Err(HlabError::Contract("pre-order encoding has several roots".into()));
            }
            if count > 0 {
                open.push((id, count));
            }
        }
        if !open.is_empty() {
            return Err(HlabError::Contract("pre-order encoding is truncated".into()));
        }
        Ok(tree)
    }

    fn parents_and_depths(&self) -> (Vec<usize>, Vec<usize>) {
        let mut parent = vec![usize::MAX; self.nodes.len()];
        let mut depth = vec![0; self.nodes.len()];
        let mut stack = vec![self.root()];
        while let Some(n) = stack.pop() {
            for &c in &self.nodes[n].children {
                parent[c] = n;
                depth[c] = depth[n] + 1;
                stack.push(c);
            }
        }
        (parent, depth)
    }

    /// Number of edges between leaves `i` and `j` (leaf indices, not node ids).
    pub fn tree_distance(&self, i: usize, j: usize) -> Result<usize> {
        let leaves = self.leaves();
        let n = leaves.len();
        if i >= n || j >= n {
            return Err(HlabError::Contract(format!(
                "leaf index out of range: ({i}, {j}) with {n} leaves"
            )));
        }
        let (parent, depth) = self.parents_and_depths();
        Ok(node_distance(&parent, &depth, leaves[i], leaves[j]))
    }

    /// Full leaf-by-leaf distance matrix.
    pub fn distance_matrix(&self) -> Vec<Vec<usize>> {
        let leaves = self.leaves();
        let (parent, depth) = self.parents_and_depths();
        leaves
            .iter()
            .map(|&a| {
                leaves
                    .iter()
                    .map(|&b| node_distance(&parent, &depth, a, b))
                    .collect()
            })
            .collect()
    }

    /// Bracketed rendering, e.g. `(Sentence (SentenceType ...) 199)`.
    pub fn to_bracketed(&self) -> String {
        fn go(t: &ParseTree, n: usize, out: &mut String) {
            let node = &t.nodes[n];
            match node.label {
                Label::Token(tok) => out.push_str(&tok.to_string()),
                Label::Nonterminal(nt) => {
                    out.push('(');
                    out.push_str(nt.name());
                    for &c in &node.children {
                        out.push(' ');
                        go(t, c, out);
                    }
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        if !self.nodes.is_empty() {
            go(self, self.root(), &mut s);
        }
        s
    }
}

fn node_distance(parent: &[usize], depth: &[usize], mut a: usize, mut b: usize) -> usize {
    let mut d = 0;
    while depth[a] > depth[b] {
        a = parent[a];
        d += 1;
    }
    while depth[b] > depth[a] {
        b = parent[b];
        d += 1;
    }
    while a != b {
        a = parent[a];
        b = parent[b];
        d += 2;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sentence -> SentenceType EOS; SentenceType -> Assertion -> Subject Verb Object.
    fn simple() -> ParseTree {
        let mut t = ParseTree::default();
        let s = t.push(Label::Nonterminal(Nonterminal::Sentence));
        let st = t.push(Label::Nonterminal(Nonterminal::SentenceType));
        t.attach(s, st);
        let a = t.push(Label::Nonterminal(Nonterminal::Assertion));
        t.attach(st, a);
        for (nt, tok) in [
            (Nonterminal::Subject, 1),
            (Nonterminal::Verb, 5),
            (Nonterminal::Object, 9),
        ] {
            let p = t.push(Label::Nonterminal(nt));
            t.attach(a, p);
            let l = t.push(Label::Token(tok));
            t.attach(p, l);
        }
        let e = t.push(Label::Token(19));
        t.attach(s, e);
        t
    }

    #[test]
    fn distances_on_hand_drawn_tree() {
        let t = simple();
        assert_eq!(t.yield_tokens(), vec![1, 5, 9, 19]);
        assert_eq!(t.tree_distance(0, 0).unwrap(), 0);
        assert_eq!(t.tree_distance(0, 1).unwrap(), 4);
        assert_eq!(t.tree_distance(1, 0).unwrap(), 4);
        assert_eq!(t.tree_distance(2, 3).unwrap(), 5);
        assert!(t.tree_distance(0, 4).is_err());
    }

    #[test]
    fn preorder_round_trip() {
        let t = simple();
        let enc = t.to_preorder();
        assert_eq!(ParseTree::from_preorder(&enc).unwrap(), t);
        assert!(ParseTree::from_preorder(&enc[..enc.len() - 1]).is_err());
    }
}
