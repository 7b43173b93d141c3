// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tensor files: a text manifest followed by a raw little-endian f32 payload.
//!
//! ```text
//! HLABTENSORS 1
//! meta <key> <value>            (any number, value runs to end of line)
//! tensor <name> <d0>x<d1>.. <offset> <len>
//! end
//! <payload: f32 LE, `offset`/`len` counted in elements>
//! ```
//!
//! Model checkpoints store the config and step as `meta` lines, the weights
//! under their layout names and, when present, AdamW moments under
//! `adam.m.<name>` / `adam.v.<name>`.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ParamLayout, Params};
use crate::error::{HlabError, Result};

const MAGIC_LINE: &str = "HLABTENSORS 1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        head.push_str(MAGIC_LINE);
        head.push('\n');
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0;
        for t in &self.tensors {
            let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            head.push_str(&format!(
                "tensor {} {} {} {}\n",
                t.name,
                shape.join("x"),
                offset,
                t.data.len()
            ));
            offset += t.data.len();
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        out.reserve(offset * 4);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| HlabError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let end_marker = b"\nend\n";
        let head_end = bytes
            .windows(end_marker.len())
            .position(|w| w == end_marker)
            .ok_or_else(|| bad("manifest has no `end` line".into()))?
            + end_marker.len();
        let head = std::str::from_utf8(&bytes[..head_end]).map_err(|_| bad("manifest is not UTF-8".into()))?;
        let payload = &bytes[head_end..];
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC_LINE) {
            return Err(bad("bad magic line".into()));
        }
        let mut file = TensorFile::default();
        for line in lines {
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("meta"), Some(rest)) => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    file.meta.push((k.to_string(), v.to_string()));
                }
                (Some("tensor"), Some(rest)) => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 4 {
                        return Err(bad(format!("malformed tensor line `{line}`")));
                    }
                    let name = f[0].to_string();
                    let shape = f[1]
                        .split('x')
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("tensor {name}: bad shape `{}`", f[1])))?;
                    let offset: usize = f[2].parse().map_err(|_| bad(format!("tensor {name}: bad offset")))?;
                    let len: usize = f[3].parse().map_err(|_| bad(format!("tensor {name}: bad length")))?;
                    if shape.iter().product::<usize>() != len {
                        return Err(bad(format!("tensor {name}: shape disagrees with length")));
                    }
                    let lo = offset * 4;
                    let hi = (offset + len) * 4;
                    let raw = payload
                        .get(lo..hi)
                        .ok_or_else(|| bad(format!("payload truncated: tensor {name} is missing")))?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    file.tensors.push(NamedTensor { name, shape, data });
                }
                (Some("end"), None) => break,
                _ => return Err(bad(format!("unrecognised manifest line `{line}`"))),
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| HlabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HlabError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn config_meta(cfg: &ModelConfig) -> Vec<(String, String)> {
    vec![
        ("model.d_model".into(), cfg.d_model.to_string()),
        ("model.n_layers".into(), cfg.n_layers.to_string()),
        ("model.n_heads".into(), cfg.n_heads.to_string()),
        ("model.vocab_size".into(), cfg.vocab_size.to_string()),
        ("model.ctx_len".into(), cfg.ctx_len.to_string()),
        ("model.mlp_multiplier".into(), cfg.mlp_multiplier.to_string()),
        ("model.norm_eps".into(), cfg.norm_eps.to_string()),
        ("model.rotary_base".into(), cfg.rotary_base.to_string()),
    ]
}

pub fn config_from_meta(file: &TensorFile, path: &Path) -> Result<ModelConfig> {
    let get = |k: &str| {
        file.meta(k).ok_or_else(|| HlabError::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("missing meta key {k}"),
        })
    };
    let us = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| HlabError::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("meta key {k} is not an integer"),
        })
    };
    let fl = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|_| HlabError::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("meta key {k} is not a number"),
        })
    };
    Ok(ModelConfig {
        d_model: us("model.d_model")?,
        n_layers: us("model.n_layers")?,
        n_heads: us("model.n_heads")?,
        vocab_size: us("model.vocab_size")?,
        ctx_len: us("model.ctx_len")?,
        mlp_multiplier: fl("model.mlp_multiplier")?,
        norm_eps: fl("model.norm_eps")?,
        rotary_base: fl("model.rotary_base")?,
    })
}

/// Flat f32 buffer laid out like `layout`, each tensor named `prefix + name`.
pub fn push_flat(file: &mut TensorFile, layout: &ParamLayout, prefix: &str, data: &[f32]) {
    for spec in &layout.specs {
        file.tensors.push(NamedTensor {
            name: format!("{prefix}{}", spec.name),
            shape: spec.shape.clone(),
            data: data[spec.offset..spec.offset + spec.len].to_vec(),
        });
    }
}

/// Inverse of [`push_flat`]; errors name the first missing or misshapen tensor.
pub fn read_flat(file: &TensorFile, layout: &ParamLayout, prefix: &str, path: &Path) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; layout.total];
    for spec in &layout.specs {
        let name = format!("{prefix}{}", spec.name);
        let t = file.tensor(&name).ok_or_else(|| HlabError::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("missing tensor {name}"),
        })?;
        if t.shape != spec.shape {
            return Err(HlabError::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("tensor {name} has shape {:?}, expected {:?}", t.shape, spec.shape),
            });
        }
        out[spec.offset..spec.offset + spec.len].copy_from_slice(&t.data);
    }
    Ok(out)
}

/// Saves weights alone (no optimizer state).
pub fn save_params(path: &Path, params: &Params<f32>, step: u64) -> Result<()> {
    let mut file = TensorFile {
        meta: config_meta(&params.cfg),
        tensors: Vec::new(),
    };
    file.meta.push(("step".into(), step.to_string()));
    push_flat(&mut file, &params.layout, "", &params.data);
    file.save(path)
}

pub fn load_params(path: &Path) -> Result<(Params<f32>, u64)> {
    let file = TensorFile::load(path)?;
    params_from_file(&file, path)
}

pub fn params_from_file(file: &TensorFile, path: &Path) -> Result<(Params<f32>, u64)> {
    let cfg = config_from_meta(file, path)?;
    let layout = ParamLayout::new(&cfg);
    let data = read_flat(file, &layout, "", path)?;
    let step = file
        .meta("step")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| HlabError::Checkpoint {
            path: path.to_path_buf(),
            reason: "missing step".into(),
        })?;
    Ok((Params { cfg, layout, data }, step))
}
