// SPDX-License-Identifier: MIT OR Apache-2.0

//! The resolved configuration of one run, and its flat-text form.

use hlab_core::config::KvConfig;
use hlab_core::geo::ProbeConfig;
use hlab_core::mech::{FvTaskConfig, InductionEvalConfig, InductionTarget};
use hlab_core::metrics::Process;
use hlab_core::model::{ModelConfig, PatchMode};
use hlab_core::ngram::NgramConfig;
use hlab_core::pcfg::{PcfgConfig, VocabLayout};
use hlab_core::train::TrainConfig;
use hlab_core::{HlabError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub process: Process,
    pub seed: u64,
    pub pcfg: PcfgConfig,
    pub pcfg_heldout_documents: u64,
    pub ngram: NgramConfig,
    pub ngram_heldout_sentences: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub induction: InductionEvalConfig,
    pub fv: FvTaskConfig,
    pub hydra_positions: usize,
    pub hydra_m: usize,
    pub probe: ProbeConfig,
    pub valid_mass_positions: usize,
}

fn list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| HlabError::config(key, format!("cannot parse `{s}`"))))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Desk-scale defaults for every field.
    pub fn defaults() -> Self {
        let model = ModelConfig::desk();
        Self {
            run_id: "run".into(),
            process: Process::Pcfg,
            seed: 0,
            pcfg: PcfgConfig {
                vocab_size: 200,
                num_documents: 2000,
                sections_per_doc: 2,
                paragraphs_per_section: 2,
                sentences_per_paragraph: 5,
                ..PcfgConfig::paper()
            },
            pcfg_heldout_documents: 200,
            ngram: NgramConfig {
                vocab_size: 200,
                num_sentences: 100_000,
                ..NgramConfig::paper()
            },
            ngram_heldout_sentences: 2000,
            induction: InductionEvalConfig::paper(model.ctx_len),
            model,
            train: TrainConfig::desk(),
            fv: FvTaskConfig::default(),
            hydra_positions: 2000,
            hydra_m: 1,
            probe: ProbeConfig::default(),
            valid_mass_positions: 2000,
        }
    }

    /// Applies every key in `kv` on top of [`RunConfig::defaults`]; unknown
    /// keys are rejected by name.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::defaults();
        for key in kv.entries.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(HlabError::config(key.as_str(), "unknown key"));
            }
        }
        if let Some(v) = kv.get_str("run_id") {
            c.run_id = v.to_string();
        }
        if let Some(v) = kv.get_str("process") {
            c.process = Process::parse(v)?;
        }
        kv.apply("seed", &mut c.seed)?;
        c.pcfg.seed = c.seed;
        c.ngram.seed = c.seed;
        c.train.seed = c.seed;
        c.induction.seed = c.seed;
        c.fv.seed = c.seed;
        c.probe.seed = c.seed;

        let p = &mut c.pcfg;
        kv.apply("pcfg.vocab_size", &mut p.vocab_size)?;
        if let Some(s) = kv.get_str("pcfg.percentages") {
            let v: Vec<f64> = list("pcfg.percentages", s)?;
            p.percentages = v
                .try_into()
                .map_err(|_| HlabError::config("pcfg.percentages", "needs four comma-separated shares"))?;
        }
        kv.apply("pcfg.num_documents", &mut p.num_documents)?;
        kv.apply("pcfg.document_repetitions", &mut p.document_repetitions)?;
        kv.apply("pcfg.sections_per_doc", &mut p.sections_per_doc)?;
        kv.apply("pcfg.paragraphs_per_section", &mut p.paragraphs_per_section)?;
        kv.apply("pcfg.sentences_per_paragraph", &mut p.sentences_per_paragraph)?;
        kv.apply("pcfg.terminal_zipf_exponent", &mut p.terminal_zipf_exponent)?;
        kv.apply("pcfg.question_prob", &mut p.question_prob)?;
        kv.apply("pcfg.compound_prob", &mut p.compound_prob)?;
        kv.apply("pcfg.max_compound_depth", &mut p.max_compound_depth)?;
        kv.apply("pcfg.heldout_documents", &mut c.pcfg_heldout_documents)?;

        let n = &mut c.ngram;
        kv.apply("ngram.order", &mut n.order)?;
        kv.apply("ngram.vocab_size", &mut n.vocab_size)?;
        kv.apply("ngram.mu", &mut n.mu)?;
        kv.apply("ngram.sigma", &mut n.sigma)?;
        kv.apply("ngram.alpha_min", &mut n.alpha_min)?;
        kv.apply("ngram.length_exponent", &mut n.length_exponent)?;
        kv.apply("ngram.len_min", &mut n.len_min)?;
        kv.apply("ngram.len_max", &mut n.len_max)?;
        kv.apply("ngram.num_sentences", &mut n.num_sentences)?;
        kv.apply("ngram.sentences_per_document", &mut n.sentences_per_document)?;
        kv.apply("ngram.heldout_sentences", &mut c.ngram_heldout_sentences)?;

        let m = &mut c.model;
        kv.apply("model.d_model", &mut m.d_model)?;
        kv.apply("model.n_layers", &mut m.n_layers)?;
        kv.apply("model.n_heads", &mut m.n_heads)?;
        kv.apply("model.vocab_size", &mut m.vocab_size)?;
        kv.apply("model.ctx_len", &mut m.ctx_len)?;
        kv.apply("model.mlp_multiplier", &mut m.mlp_multiplier)?;
        kv.apply("model.norm_eps", &mut m.norm_eps)?;
        kv.apply("model.rotary_base", &mut m.rotary_base)?;

        let t = &mut c.train;
        kv.apply("train.learning_rate", &mut t.learning_rate)?;
        kv.apply("train.batch_size", &mut t.batch_size)?;
        kv.apply("train.warmup_steps", &mut t.warmup_steps)?;
        kv.apply("train.weight_decay", &mut t.weight_decay)?;
        kv.apply("train.grad_clip_norm", &mut t.grad_clip_norm)?;
        kv.apply("train.total_steps", &mut t.total_steps)?;
        kv.apply("train.checkpoint_every", &mut t.checkpoint_every)?;
        kv.apply("train.min_lr_ratio", &mut t.min_lr_ratio)?;
        kv.apply("train.beta1", &mut t.beta1)?;
        kv.apply("train.beta2", &mut t.beta2)?;
        kv.apply("train.adam_eps", &mut t.adam_eps)?;

        let i = &mut c.induction;
        i.half_length = (c.model.ctx_len / 2).min(64);
        kv.apply("induction.half_length", &mut i.half_length)?;
        if let Some(s) = kv.get_str("induction.orders") {
            i.orders = list("induction.orders", s)?;
        }
        kv.apply("induction.n_samples", &mut i.n_samples)?;
        if let Some(s) = kv.get_str("induction.target") {
            i.target = match s {
                "same" => InductionTarget::SameToken,
                "successor" => InductionTarget::Successor,
                _ => return Err(HlabError::config("induction.target", "expected `same` or `successor`")),
            };
        }

        kv.apply("fv.n_tasks", &mut c.fv.n_tasks)?;
        kv.apply("fv.n_shots", &mut c.fv.n_shots)?;
        if let Some(s) = kv.get_str("fv.mode") {
            c.fv.mode = match s {
                "replace" => PatchMode::Replace,
                "add" => PatchMode::Add,
                _ => return Err(HlabError::config("fv.mode", "expected `replace` or `add`")),
            };
        }
        kv.apply("hydra.n_positions", &mut c.hydra_positions)?;
        kv.apply("hydra.m", &mut c.hydra_m)?;

        let pr = &mut c.probe;
        pr.rank = pr.rank.min(c.model.d_model);
        kv.apply("probe.rank", &mut pr.rank)?;
        kv.apply("probe.learning_rate", &mut pr.learning_rate)?;
        kv.apply("probe.epochs", &mut pr.epochs)?;
        kv.apply("probe.batch_sentences", &mut pr.batch_sentences)?;
        kv.apply("probe.patience", &mut pr.patience)?;
        kv.apply("probe.n_train", &mut pr.n_train)?;
        kv.apply("probe.n_dev", &mut pr.n_dev)?;
        kv.apply("probe.n_test", &mut pr.n_test)?;
        kv.apply("valid_mass.n_positions", &mut c.valid_mass_positions)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains([',', '/', ' ']) {
            return Err(HlabError::config("run_id", "must be non-empty without commas, slashes or spaces"));
        }
        self.model.validate()?;
        self.train.validate()?;
        match self.process {
            Process::Pcfg => {
                self.pcfg.validate()?;
                if self.pcfg.vocab_size as usize != self.model.vocab_size {
                    return Err(HlabError::config("model.vocab_size", "must equal pcfg.vocab_size"));
                }
            }
            Process::Ngram => {
                self.ngram.validate()?;
                if self.ngram.vocab_size as usize != self.model.vocab_size {
                    return Err(HlabError::config("model.vocab_size", "must equal ngram.vocab_size"));
                }
            }
        }
        self.induction.validate(self.model.ctx_len)?;
        self.probe.validate(self.model.d_model)?;
        if self.hydra_m == 0 || self.hydra_m >= self.model.n_layers {
            return Err(HlabError::config("hydra.m", "must lie in 1..n_layers"));
        }
        if 4 * self.fv.n_shots + 2 > self.model.ctx_len {
            return Err(HlabError::config("fv.n_shots", "few-shot prompt exceeds the context"));
        }
        Ok(())
    }

    /// Category layout used for function-vector tasks and valid-mass scoring.
    /// N-gram runs borrow the PCFG layout at the same vocabulary size.
    pub fn layout(&self) -> Result<VocabLayout> {
        VocabLayout::new(self.model.vocab_size as u32, self.pcfg.percentages)
    }

    /// Every field as flat text; [`RunConfig::from_kv`] inverts it.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("run_id", &self.run_id);
        kv.set("process", self.process.as_str());
        kv.set("seed", self.seed);
        let p = &self.pcfg;
        kv.set("pcfg.vocab_size", p.vocab_size);
        kv.set("pcfg.percentages", join(&p.percentages));
        kv.set("pcfg.num_documents", p.num_documents);
        kv.set("pcfg.document_repetitions", p.document_repetitions);
        kv.set("pcfg.sections_per_doc", p.sections_per_doc);
        kv.set("pcfg.paragraphs_per_section", p.paragraphs_per_section);
        kv.set("pcfg.sentences_per_paragraph", p.sentences_per_paragraph);
        kv.set("pcfg.terminal_zipf_exponent", p.terminal_zipf_exponent);
        kv.set("pcfg.question_prob", p.question_prob);
        kv.set("pcfg.compound_prob", p.compound_prob);
        kv.set("pcfg.max_compound_depth", p.max_compound_depth);
        kv.set("pcfg.heldout_documents", self.pcfg_heldout_documents);
        let n = &self.ngram;
        kv.set("ngram.order", n.order);
        kv.set("ngram.vocab_size", n.vocab_size);
        kv.set("ngram.mu", n.mu);
        kv.set("ngram.sigma", n.sigma);
        kv.set("ngram.alpha_min", n.alpha_min);
        kv.set("ngram.length_exponent", n.length_exponent);
        kv.set("ngram.len_min", n.len_min);
        kv.set("ngram.len_max", n.len_max);
        kv.set("ngram.num_sentences", n.num_sentences);
        kv.set("ngram.sentences_per_document", n.sentences_per_document);
        kv.set("ngram.heldout_sentences", self.ngram_heldout_sentences);
        let m = &self.model;
        kv.set("model.d_model", m.d_model);
        kv.set("model.n_layers", m.n_layers);
        kv.set("model.n_heads", m.n_heads);
        kv.set("model.vocab_size", m.vocab_size);
        kv.set("model.ctx_len", m.ctx_len);
        kv.set("model.mlp_multiplier", m.mlp_multiplier);
        kv.set("model.norm_eps", m.norm_eps);
        kv.set("model.rotary_base", m.rotary_base);
        let t = &self.train;
        kv.set("train.learning_rate", t.learning_rate);
        kv.set("train.batch_size", t.batch_size);
        kv.set("train.warmup_steps", t.warmup_steps);
        kv.set("train.weight_decay", t.weight_decay);
        kv.set("train.grad_clip_norm", t.grad_clip_norm);
        kv.set("train.total_steps", t.total_steps);
        kv.set("train.checkpoint_every", t.checkpoint_every);
        kv.set("train.min_lr_ratio", t.min_lr_ratio);
        kv.set("train.beta1", t.beta1);
        kv.set("train.beta2", t.beta2);
        kv.set("train.adam_eps", t.adam_eps);
        let i = &self.induction;
        kv.set("induction.half_length", i.half_length);
        kv.set("induction.orders", join(&i.orders));
        kv.set("induction.n_samples", i.n_samples);
        kv.set(
            "induction.target",
            match i.target {
                InductionTarget::SameToken => "same",
                InductionTarget::Successor => "successor",
            },
        );
        kv.set("fv.n_tasks", self.fv.n_tasks);
        kv.set("fv.n_shots", self.fv.n_shots);
        kv.set(
            "fv.mode",
            match self.fv.mode {
                PatchMode::Replace => "replace",
                PatchMode::Add => "add",
            },
        );
        kv.set("hydra.n_positions", self.hydra_positions);
        kv.set("hydra.m", self.hydra_m);
        let pr = &self.probe;
        kv.set("probe.rank", pr.rank);
        kv.set("probe.learning_rate", pr.learning_rate);
        kv.set("probe.epochs", pr.epochs);
        kv.set("probe.batch_sentences", pr.batch_sentences);
        kv.set("probe.patience", pr.patience);
        kv.set("probe.n_train", pr.n_train);
        kv.set("probe.n_dev", pr.n_dev);
        kv.set("probe.n_test", pr.n_test);
        kv.set("valid_mass.n_positions", self.valid_mass_positions);
        kv
    }
}

const KNOWN_KEYS: &[&str] = &[
    "run_id",
    "process",
    "seed",
    "pcfg.vocab_size",
    "pcfg.percentages",
    "pcfg.num_documents",
    "pcfg.document_repetitions",
    "pcfg.sections_per_doc",
    "pcfg.paragraphs_per_section",
    "pcfg.sentences_per_paragraph",
    "pcfg.terminal_zipf_exponent",
    "pcfg.question_prob",
    "pcfg.compound_prob",
    "pcfg.max_compound_depth",
    "pcfg.heldout_documents",
    "ngram.order",
    "ngram.vocab_size",
    "ngram.mu",
    "ngram.sigma",
    "ngram.alpha_min",
    "ngram.length_exponent",
    "ngram.len_min",
    "ngram.len_max",
    "ngram.num_sentences",
    "ngram.sentences_per_document",
    "ngram.heldout_sentences",
    "model.d_model",
    "model.n_layers",
    "model.n_heads",
    "model.vocab_size",
    "model.ctx_len",
    "model.mlp_multiplier",
    "model.norm_eps",
    "model.rotary_base",
    "train.learning_rate",
    "train.batch_size",
    "train.warmup_steps",
    "train.weight_decay",
    "train.grad_clip_norm",
    "train.total_steps",
    "train.checkpoint_every",
    "train.min_lr_ratio",
    "train.beta1",
    "train.beta2",
    "train.adam_eps",
    "induction.half_length",
    "induction.orders",
    "induction.n_samples",
    "induction.target",
    "fv.n_tasks",
    "fv.n_shots",
    "fv.mode",
    "hydra.n_positions",
    "hydra.m",
    "probe.rank",
    "probe.learning_rate",
    "probe.epochs",
    "probe.batch_sentences",
    "probe.patience",
    "probe.n_train",
    "probe.n_dev",
    "probe.n_test",
    "valid_mass.n_positions",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_form_round_trips() {
        let c = RunConfig::defaults();
        let back = RunConfig::from_kv(&KvConfig::parse_str(&c.to_kv().to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_bad_keys_are_named() {
        let err = RunConfig::from_kv(&KvConfig::parse_str("model.width = 3\n").unwrap()).unwrap_err();
        assert!(err.to_string().contains("model.width"));
        let err = RunConfig::from_kv(&KvConfig::parse_str("pcfg.percentages = 0.5,0.3,0.3,0.1\n").unwrap()).unwrap_err();
        assert!(err.to_string().contains("pcfg.percentages"));
    }
}
