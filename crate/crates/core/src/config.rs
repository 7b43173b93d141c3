// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat `key = value` config dialect.
//!
//! One assignment per line, `#` starts a comment, and `include = <path>`
//! splices another file (resolved relative to the including file) at that
//! point. Later assignments override earlier ones.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{HlabError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    pub entries: BTreeMap<String, String>,
}

const MAX_INCLUDE_DEPTH: usize = 16;

impl KvConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(text, None, 0)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_file(path, 0)?;
        Ok(cfg)
    }

    fn merge_file(&mut self, path: &Path, depth: usize) -> Result<()> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(HlabError::config("include", format!("nesting deeper than {MAX_INCLUDE_DEPTH} at {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| HlabError::io(path, e))?;
        self.merge_text(&text, path.parent().map(Path::to_path_buf), depth)
    }

    fn merge_text(&mut self, text: &str, base: Option<PathBuf>, depth: usize) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HlabError::config(format!("line {}", i + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(HlabError::config(format!("line {}", i + 1), "empty key"));
            }
            if k == "include" {
                let p = base.as_ref().map_or_else(|| PathBuf::from(v), |b| b.join(v));
                self.merge_file(&p, depth + 1)?;
            } else {
                self.entries.insert(k.to_string(), v.to_string());
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses `key` when present; a malformed value names the field.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| HlabError::config(key, format!("cannot parse `{v}`"))),
        }
    }

    /// Overwrites `slot` when `key` is present.
    pub fn apply<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Rendered text, one sorted assignment per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Keys under `prefix.` with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvConfig {
        let p = format!("{prefix}.");
        KvConfig {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let c = KvConfig::parse_str("a = 1 # one\n\n# skip\nb=two\na = 3\n").unwrap();
        assert_eq!(c.get::<u32>("a").unwrap(), Some(3));
        assert_eq!(c.get_str("b"), Some("two"));
        assert!(c.get::<u32>("b").is_err());
        assert!(KvConfig::parse_str("novalue\n").is_err());
    }

    #[test]
    fn includes_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), "x = 1\ny = 2\n").unwrap();
        std::fs::write(dir.path().join("run.cfg"), "include = base.cfg\ny = 5\n").unwrap();
        let c = KvConfig::load(&dir.path().join("run.cfg")).unwrap();
        assert_eq!(c.get::<u32>("x").unwrap(), Some(1));
        assert_eq!(c.get::<u32>("y").unwrap(), Some(5));
    }
}
