// SPDX-License-Identifier: MIT OR Apache-2.0

//! AdamW training loop with warmup + cosine schedule and periodic checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{BatchPlan, Shard};
use crate::error::{HlabError, Result};
use crate::model::checkpoint::{config_meta, params_from_file, push_flat, read_flat, TensorFile};
use crate::model::{loss_and_grads, ModelConfig, Params};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    /// Floor of the cosine decay as a fraction of the peak rate.
    pub min_lr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    /// Published recipe: 10B tokens at batch 1024 × 512 context.
    pub fn paper() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 1024,
            warmup_steps: 2000,
            weight_decay: 0.1,
            grad_clip_norm: 1.0,
            total_steps: 10_000_000_000 / (1024 * 512),
            checkpoint_every: 500,
            seed: 0,
            min_lr_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
        }
    }

    /// ~30M tokens at batch 64 × 256 context.
    pub fn desk() -> Self {
        Self {
            batch_size: 64,
            warmup_steps: 200,
            total_steps: 30_000_000 / (64 * 256),
            checkpoint_every: 250,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HlabError::config("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(HlabError::config("train.learning_rate", "must be non-negative"));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(HlabError::config("train.grad_clip_norm", "must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(HlabError::config("train.checkpoint_every", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err(HlabError::config("train.min_lr_ratio", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Rate used by update number `step` (1-based): linear warmup to the
    /// peak at `warmup_steps`, then cosine decay to `min_lr_ratio × peak` at
    /// `total_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let peak = self.learning_rate;
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return peak * step as f64 / self.warmup_steps as f64;
        }
        let floor = peak * self.min_lr_ratio;
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return peak;
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// One optimizer update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Global gradient norm after clipping.
    pub grad_norm: f64,
    /// Loss-bearing target tokens consumed so far.
    pub tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

impl RunLog {
    pub const HEADER: &'static str = "step,loss,lr,grad_norm,tokens";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.step, r.loss, r.lr, r.grad_norm, r.tokens);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::HEADER) {
            return Err(HlabError::Contract("run log header mismatch".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let parse_err = || HlabError::Contract(format!("run log line {} is malformed", i + 2));
            if f.len() != 5 {
                return Err(parse_err());
            }
            rows.push(LogRow {
                step: f[0].parse().map_err(|_| parse_err())?,
                loss: f[1].parse().map_err(|_| parse_err())?,
                lr: f[2].parse().map_err(|_| parse_err())?,
                grad_norm: f[3].parse().map_err(|_| parse_err())?,
                tokens: f[4].parse().map_err(|_| parse_err())?,
            });
        }
        Ok(Self { rows })
    }
}

/// Parameters plus AdamW state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Params<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
    pub tokens: u64,
    decay: Vec<bool>,
}

impl TrainState {
    pub fn new(params: Params<f32>) -> Self {
        let n = params.data.len();
        let decay = decay_mask(&params);
        Self {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            tokens: 0,
            decay,
        }
    }

    /// One update on `batch`; returns the log row.
    pub fn update(&mut self, cfg: &TrainConfig, batch: &crate::corpus::Batch) -> Result<LogRow> {
        let step = self.step + 1;
        let (loss, grads) = loss_and_grads(&self.params, batch).map_err(|e| match e {
            HlabError::Divergence { .. } => HlabError::Divergence { step },
            other => other,
        })?;
        let mut g = grads.data;
        let norm = g.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(HlabError::Divergence { step });
        }
        let clip = if norm > cfg.grad_clip_norm {
            (cfg.grad_clip_norm / norm) as f32
        } else {
            1.0
        };
        if clip != 1.0 {
            g.iter_mut().for_each(|x| *x *= clip);
        }
        let clipped = g.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();

        let lr = cfg.lr_at(step);
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = cfg.adam_eps as f32;
        let decay = (lr * cfg.weight_decay) as f32;
        for i in 0..g.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let p = &mut self.params.data[i];
            if self.decay[i] {
                *p -= decay * *p;
            }
            *p -= step_size * self.m[i] / (self.v[i].sqrt() / bc2_sqrt + eps);
        }
        self.step = step;
        self.tokens += batch.target_count() as u64;
        Ok(LogRow {
            step,
            loss,
            lr,
            grad_norm: clipped,
            tokens: self.tokens,
        })
    }

    pub fn to_file(&self) -> TensorFile {
        let mut file = TensorFile {
            meta: config_meta(&self.params.cfg),
            tensors: Vec::new(),
        };
        file.meta.push(("step".into(), self.step.to_string()));
        file.meta.push(("tokens".into(), self.tokens.to_string()));
        push_flat(&mut file, &self.params.layout, "", &self.params.data);
        push_flat(&mut file, &self.params.layout, "adam.m.", &self.m);
        push_flat(&mut file, &self.params.layout, "adam.v.", &self.v);
        file
    }

    pub fn from_file(file: &TensorFile, path: &Path) -> Result<Self> {
        let (params, step) = params_from_file(file, path)?;
        let m = read_flat(file, &params.layout, "adam.m.", path)?;
        let v = read_flat(file, &params.layout, "adam.v.", path)?;
        let tokens = file.meta("tokens").and_then(|s| s.parse().ok()).unwrap_or(0);
        let decay = decay_mask(&params);
        Ok(Self {
            params,
            m,
            v,
            step,
            tokens,
            decay,
        })
    }
}

/// Matrices decay; norm gains do not.
fn decay_mask(params: &Params<f32>) -> Vec<bool> {
    let mut mask = vec![false; params.data.len()];
    for spec in &params.layout.specs {
        if spec.shape.len() >= 2 {
            mask[spec.offset..spec.offset + spec.len].fill(true);
        }
    }
    mask
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    state.to_file().save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    TrainState::from_file(&TensorFile::load(path)?, path)
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:08}.ckpt")
}

/// Checkpoints found in `dir`, sorted by step.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(HlabError::io(dir, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| HlabError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(step) = name
            .strip_prefix("step-")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((step, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoints: Vec<(u64, PathBuf)>,
    pub log: RunLog,
}

/// Trains from scratch (or resumes from the latest checkpoint in `out_dir`
/// when `resume` is set). Writes `checkpoints/step-XXXXXXXX.ckpt` at step 0,
/// every `checkpoint_every` steps and at the final step, and `runlog.csv`.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    shards: &[Shard],
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let plan = BatchPlan::new(shards, model_cfg.ctx_len, cfg.batch_size, cfg.seed)?;
    if plan.is_empty() {
        return Err(HlabError::Contract("training corpus has no usable windows".into()));
    }
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| HlabError::io(&ckpt_dir, e))?;
    let log_path = out_dir.join("runlog.csv");

    let existing = list_checkpoints(&ckpt_dir)?;
    let (mut state, mut log) = match (resume, existing.last()) {
        (true, Some((_, path))) => {
            let state = load_checkpoint(path)?;
            let text = fs::read_to_string(&log_path).map_err(|e| HlabError::io(&log_path, e))?;
            let mut log = RunLog::from_csv(&text)?;
            log.rows.retain(|r| r.step <= state.step);
            (state, log)
        }
        _ => {
            let params = Params::<f32>::init(model_cfg, cfg.seed)?;
            let state = TrainState::new(params);
            save_checkpoint(&ckpt_dir.join(checkpoint_name(0)), &state)?;
            (state, RunLog::default())
        }
    };

    let write_log = |log: &RunLog| fs::write(&log_path, log.to_csv()).map_err(|e| HlabError::io(&log_path, e));
    while state.step < cfg.total_steps {
        let batch = plan.batch(shards, state.step);
        let row = match state.update(cfg, &batch) {
            Ok(r) => r,
            Err(e) => {
                write_log(&log)?;
                return Err(e);
            }
        };
        log.rows.push(row);
        if state.step % cfg.checkpoint_every == 0 || state.step == cfg.total_steps {
            save_checkpoint(&ckpt_dir.join(checkpoint_name(state.step)), &state)?;
            write_log(&log)?;
        }
    }
    write_log(&log)?;
    Ok(TrainOutcome {
        checkpoints: list_checkpoints(&ckpt_dir)?,
        log,
    })
}
