// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary corpus shards, annotation sidecars and training batches.
//!
//! Shard layout (all integers little-endian):
//!
//! ```text
//! offset  size          field
//! 0       6             magic "HLAB1\0"
//! 6       2             format_version (u16) = 1
//! 8       4             vocab_size (u32)
//! 12      8             token_count (u64)
//! 20      8             document_count (u64)
//! 28      2*token_count token ids (u16)
//! ...     8*doc_count   document end offsets (u64), strictly increasing,
//!                       last = token_count
//! ```
//!
//! Sidecar layout:
//!
//! ```text
//! 0       8             magic "HLABANN1"
//! 8       32            SHA-256 of the shard file this sidecar annotates
//! 40      8             record_count (u64)
//! then per record:
//!         4             body length in bytes (u32)
//!         8, 8          sentence span start, end (u64, end exclusive)
//!         4             node count (u32)
//!         8*nodes       pre-order (label u32, child_count u32); labels with
//!                       the top bit set are nonterminals
//!         end-start     category mask byte per position
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{HlabError, Result};
use crate::pcfg::ParseTree;
use crate::rngkit::{mix2, permutation, SeedSpec};

pub const SHARD_MAGIC: &[u8; 6] = b"HLAB1\0";
pub const SIDECAR_MAGIC: &[u8; 8] = b"HLABANN1";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 28;

/// Tokens of one or more documents with their end offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub vocab_size: u32,
    pub tokens: Vec<u16>,
    /// Exclusive end offset of each document.
    pub boundaries: Vec<u64>,
}

impl Shard {
    pub fn from_documents<'a>(
        vocab_size: u32,
        docs: impl Iterator<Item = &'a [u32]>,
    ) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut boundaries = Vec::new();
        for doc in docs {
            if doc.is_empty() {
                continue;
            }
            for &t in doc {
                if t >= vocab_size || t > u32::from(u16::MAX) {
                    return Err(HlabError::Contract(format!(
                        "token {t} does not fit vocabulary {vocab_size}"
                    )));
                }
                tokens.push(t as u16);
            }
            boundaries.push(tokens.len() as u64);
        }
        Ok(Self {
            vocab_size,
            tokens,
            boundaries,
        })
    }

    pub fn document_count(&self) -> usize {
        self.boundaries.len()
    }

    /// Token range of document `i`.
    pub fn document(&self, i: usize) -> &[u16] {
        let start = if i == 0 { 0 } else { self.boundaries[i - 1] as usize };
        &self.tokens[start..self.boundaries[i] as usize]
    }

    pub fn document_start(&self, i: usize) -> u64 {
        if i == 0 {
            0
        } else {
            self.boundaries[i - 1]
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(HEADER_LEN + 2 * self.tokens.len() + 8 * self.boundaries.len());
        out.extend_from_slice(SHARD_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.vocab_size.to_le_bytes());
        out.extend_from_slice(&(self.tokens.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.boundaries.len() as u64).to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for b in &self.boundaries {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        let bad = |reason: String| HlabError::Shard {
            shard: name.to_string(),
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
        }
        if &bytes[..6] != SHARD_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[6], bytes[7]]);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let vocab_size = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let token_count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let doc_count = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
        let expected = token_count
            .checked_mul(2)
            .and_then(|t| doc_count.checked_mul(8).and_then(|d| t.checked_add(d)))
            .and_then(|p| p.checked_add(HEADER_LEN))
            .ok_or_else(|| bad("header counts overflow".into()))?;
        if bytes.len() != expected {
            return Err(bad(format!(
                "payload is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + 2 * token_count];
        let tokens: Vec<u16> = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        if let Some(t) = tokens.iter().find(|&&t| u32::from(t) >= vocab_size) {
            return Err(bad(format!("token {t} exceeds vocab size {vocab_size}")));
        }
        let boundaries: Vec<u64> = bytes[HEADER_LEN + 2 * token_count..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut prev = 0u64;
        for &b in &boundaries {
            if b <= prev {
                return Err(bad("document boundaries are not strictly increasing".into()));
            }
            prev = b;
        }
        if boundaries.last().copied().unwrap_or(0) != token_count as u64 {
            return Err(bad("last boundary differs from token count".into()));
        }
        Ok(Self {
            vocab_size,
            tokens,
            boundaries,
        })
    }
}

/// What a writer reports about a shard on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardManifest {
    pub path: PathBuf,
    pub token_count: u64,
    pub document_count: u64,
    /// Hex SHA-256 of the file bytes.
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_shard(path: &Path, shard: &Shard) -> Result<ShardManifest> {
    let bytes = shard.to_bytes();
    fs::write(path, &bytes).map_err(|e| HlabError::io(path, e))?;
    Ok(ShardManifest {
        path: path.to_path_buf(),
        token_count: shard.tokens.len() as u64,
        document_count: shard.boundaries.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

pub fn read_shard(path: &Path) -> Result<Shard> {
    let bytes = fs::read(path).map_err(|e| HlabError::io(path, e))?;
    Shard::from_bytes(&bytes, &path.display().to_string())
}

/// Hex SHA-256 of a file on disk.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| HlabError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Ground truth for one sentence occurrence in a shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub start: u64,
    pub end: u64,
    pub tree: ParseTree,
    pub masks: Vec<u8>,
}

impl AnnotationRecord {
    fn encode(&self, out: &mut Vec<u8>) {
        let nodes = self.tree.to_preorder();
        let body_len = 8 + 8 + 4 + 8 * nodes.len() + self.masks.len();
        out.extend_from_slice(&(body_len as u32).to_le_bytes());
        out.extend_from_slice(&self.start.to_le_bytes());
        out.extend_from_slice(&self.end.to_le_bytes());
        out.extend_from_slice(&(nodes.len() as u32).to_le_bytes());
        for (label, count) in nodes {
            out.extend_from_slice(&label.to_le_bytes());
            out.extend_from_slice(&count.to_le_bytes());
        }
        out.extend_from_slice(&self.masks);
    }

    fn decode(body: &[u8]) -> std::result::Result<Self, String> {
        let u64_at = |o: usize| {
            body.get(o..o + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| "record truncated".to_string())
        };
        let u32_at = |o: usize| {
            body.get(o..o + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| "record truncated".to_string())
        };
        let start = u64_at(0)?;
        let end = u64_at(8)?;
        if end < start {
            return Err("span end precedes start".into());
        }
        let n = u32_at(16)? as usize;
        let mut nodes = Vec::with_capacity(n);
        for k in 0..n {
            nodes.push((u32_at(20 + 8 * k)?, u32_at(24 + 8 * k)?));
        }
        let mask_off = 20 + 8 * n;
        let masks = body
            .get(mask_off..)
            .ok_or_else(|| "record truncated".to_string())?
            .to_vec();
        if masks.len() as u64 != end - start {
            return Err("mask length differs from span length".into());
        }
        let tree = ParseTree::from_preorder(&nodes).map_err(|e| e.to_string())?;
        if tree.leaves().len() as u64 != end - start {
            return Err("leaf count differs from span length".into());
        }
        Ok(Self {
            start,
            end,
            tree,
            masks,
        })
    }
}

pub fn write_annotations(path: &Path, shard_sha256: &str, records: &[AnnotationRecord]) -> Result<()> {
    let hash = hex::decode(shard_sha256)
        .ok()
        .filter(|h| h.len() == 32)
        .ok_or_else(|| HlabError::Contract(format!("bad shard hash {shard_sha256}")))?;
    let file = fs::File::create(path).map_err(|e| HlabError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(48);
    buf.extend_from_slice(SIDECAR_MAGIC);
    buf.extend_from_slice(&hash);
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    w.write_all(&buf).map_err(|e| HlabError::io(path, e))?;
    for r in records {
        buf.clear();
        r.encode(&mut buf);
        w.write_all(&buf).map_err(|e| HlabError::io(path, e))?;
    }
    w.flush().map_err(|e| HlabError::io(path, e))
}

/// Reads a sidecar; when `expected_shard_sha256` is given the key must match.
pub fn read_annotations(path: &Path, expected_shard_sha256: Option<&str>) -> Result<Vec<AnnotationRecord>> {
    let bytes = fs::read(path).map_err(|e| HlabError::io(path, e))?;
    let bad = |reason: String| HlabError::Shard {
        shard: path.display().to_string(),
        reason,
    };
    if bytes.len() < 48 || &bytes[..8] != SIDECAR_MAGIC {
        return Err(bad("bad sidecar magic".into()));
    }
    let key = hex::encode(&bytes[8..40]);
    if let Some(expected) = expected_shard_sha256 {
        if key != expected {
            return Err(bad(format!("sidecar keyed to shard {key}, expected {expected}")));
        }
    }
    let count = u64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes")) as usize;
    let mut records = Vec::with_capacity(count.min(1 << 24));
    let mut off = 48;
    for i in 0..count {
        let len = bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| bad(format!("record {i} truncated")))?;
        let body = bytes
            .get(off + 4..off + 4 + len)
            .ok_or_else(|| bad(format!("record {i} truncated")))?;
        records.push(AnnotationRecord::decode(body).map_err(|r| bad(format!("record {i}: {r}")))?);
        off += 4 + len;
    }
    if off != bytes.len() {
        return Err(bad("trailing bytes after last record".into()));
    }
    Ok(records)
}

/// A `ctx_len`-token slice of one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub shard: usize,
    /// Absolute offset of the first input token.
    pub start: u64,
    /// Number of real targets (1..=ctx_len); the rest is padding.
    pub targets: usize,
}

/// Inputs, targets and loss mask, all `batch × ctx_len` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub ctx_len: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    /// 1 for positions that count towards the loss.
    pub mask: Vec<u8>,
}

impl Batch {
    pub fn target_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }
}

/// Cuts every document into non-overlapping windows of `ctx_len` targets.
pub fn windows(shards: &[Shard], ctx_len: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (s, shard) in shards.iter().enumerate() {
        for d in 0..shard.document_count() {
            let start = shard.document_start(d);
            let n_targets = shard.document(d).len().saturating_sub(1);
            let mut k = 0;
            while k < n_targets {
                let t = (n_targets - k).min(ctx_len);
                out.push(Window {
                    shard: s,
                    start: start + k as u64,
                    targets: t,
                });
                k += t;
            }
        }
    }
    out
}

/// Deterministic batch schedule: step `i` reads a fixed slice of a per-epoch
/// seeded permutation of all windows.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub ctx_len: usize,
    pub batch_size: usize,
    pub seed: u64,
    windows: Vec<Window>,
    eos: u32,
}

const DOMAIN_EPOCH: u64 = 0x6570_6f63_68;

impl BatchPlan {
    pub fn new(shards: &[Shard], ctx_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if ctx_len < 2 {
            return Err(HlabError::config("ctx_len", "must be at least 2"));
        }
        if batch_size == 0 {
            return Err(HlabError::config("batch_size", "must be at least 1"));
        }
        let vocab = shards.first().map_or(1, |s| s.vocab_size);
        Ok(Self {
            ctx_len,
            batch_size,
            seed,
            windows: windows(shards, ctx_len),
            eos: vocab - 1,
        })
    }

    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Window order for `epoch`.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut rng = SeedSpec::new(self.seed, mix2(DOMAIN_EPOCH, epoch)).stream();
        permutation(self.windows.len(), &mut rng)
    }

    /// Batch consumed by optimizer step `step` (0-based).
    pub fn batch(&self, shards: &[Shard], step: u64) -> Batch {
        let n = self.windows.len() as u64;
        let mut b = Batch {
            batch_size: self.batch_size,
            ctx_len: self.ctx_len,
            inputs: vec![self.eos; self.batch_size * self.ctx_len],
            targets: vec![self.eos; self.batch_size * self.ctx_len],
            mask: vec![0; self.batch_size * self.ctx_len],
        };
        if n == 0 {
            return b;
        }
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for row in 0..self.batch_size {
            let global = step * self.batch_size as u64 + row as u64;
            let epoch = global / n;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, self.epoch_order(epoch)));
            }
            let order = &cached.as_ref().expect("just set").1;
            let w = self.windows[order[(global % n) as usize]];
            self.fill_row(shards, &w, row, &mut b);
        }
        b
    }

    fn fill_row(&self, shards: &[Shard], w: &Window, row: usize, b: &mut Batch) {
        let toks = &shards[w.shard].tokens;
        let base = row * self.ctx_len;
        let start = w.start as usize;
        for i in 0..w.targets {
            b.inputs[base + i] = u32::from(toks[start + i]);
            b.targets[base + i] = u32::from(toks[start + i + 1]);
            b.mask[base + i] = 1;
        }
    }

    /// All batches of one epoch, the final one padded with masked rows.
    pub fn epoch(&self, shards: &[Shard], epoch: u64) -> Vec<Batch> {
        let order = self.epoch_order(epoch);
        order
            .chunks(self.batch_size)
            .map(|chunk| {
                let mut b = Batch {
                    batch_size: self.batch_size,
                    ctx_len: self.ctx_len,
                    inputs: vec![self.eos; self.batch_size * self.ctx_len],
                    targets: vec![self.eos; self.batch_size * self.ctx_len],
                    mask: vec![0; self.batch_size * self.ctx_len],
                };
                for (row, &wi) in chunk.iter().enumerate() {
                    self.fill_row(shards, &self.windows[wi], row, &mut b);
                }
                b
            })
            .collect()
    }
}

/// One epoch of batches; empty when no document has two or more tokens.
pub fn iterate_batches(shards: &[Shard], ctx_len: usize, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    let plan = BatchPlan::new(shards, ctx_len, batch_size, seed)?;
    Ok(plan.epoch(shards, 0))
}
