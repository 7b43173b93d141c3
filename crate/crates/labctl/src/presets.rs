// SPDX-License-Identifier: MIT OR Apache-2.0

//! Named experiment presets.

use hlab_core::config::KvConfig;
use hlab_core::{HlabError, Result};

pub struct Preset {
    pub name: &'static str,
    pub provenance: &'static str,
    pub text: &'static str,
}

const PAPER_MODEL: &str = "\
model.d_model = 256
model.n_layers = 16
model.n_heads = 4
model.vocab_size = 1000
model.ctx_len = 512
train.learning_rate = 0.0003
train.batch_size = 1024
train.warmup_steps = 2000
train.weight_decay = 0.1
train.grad_clip_norm = 1.0
train.total_steps = 19073
train.checkpoint_every = 500
induction.half_length = 64
probe.rank = 64
";

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "paper-pcfg",
        provenance: "published PCFG and model tables verbatim; not runnable on one machine",
        text: "\
process = pcfg
pcfg.vocab_size = 1000
pcfg.num_documents = 6500000
pcfg.document_repetitions = 10
pcfg.sections_per_doc = 10
pcfg.paragraphs_per_section = 20
pcfg.sentences_per_paragraph = 5
",
    },
    Preset {
        name: "paper-ngram",
        provenance: "published N-gram and model tables verbatim; not runnable on one machine",
        text: "\
process = ngram
ngram.vocab_size = 1000
ngram.num_sentences = 400000000
ngram.len_min = 10
ngram.len_max = 1010
",
    },
    Preset {
        name: "desk-pcfg",
        provenance: "desk scale: vocab 200, 2k documents x 10, B=2 C=2 D=5, 128d/8L/4H, ~30M tokens",
        text: "\
process = pcfg
",
    },
    Preset {
        name: "desk-ngram",
        provenance: "desk scale: vocab 200, 10^5 sentences, 128d/8L/4H, ~30M tokens",
        text: "\
process = ngram
",
    },
    Preset {
        name: "mini-pcfg",
        provenance: "acceptance scale: desk corpus shape, 64d/6L/4H, context 128, minutes on one core",
        text: "\
process = pcfg
pcfg.paragraphs_per_section = 5
pcfg.num_documents = 800
",
    },
    Preset {
        name: "mini-ngram",
        provenance: "acceptance scale: desk N-gram corpus, 64d/6L/4H, context 128, minutes on one core",
        text: "\
process = ngram
ngram.sentences_per_document = 8
",
    },
    Preset {
        name: "smoke-pcfg",
        provenance: "seconds-scale pipeline check: 40 documents, 32d/3L/2H, 200 steps",
        text: "\
process = pcfg
pcfg.num_documents = 40
pcfg.document_repetitions = 2
pcfg.heldout_documents = 20
model.d_model = 32
model.n_layers = 3
model.n_heads = 2
model.ctx_len = 64
train.batch_size = 4
train.warmup_steps = 20
train.total_steps = 200
train.checkpoint_every = 100
train.learning_rate = 0.001
induction.half_length = 16
induction.orders = 1,2
induction.n_samples = 4
fv.n_tasks = 3
hydra.n_positions = 100
probe.rank = 16
probe.epochs = 4
probe.n_train = 40
probe.n_dev = 10
probe.n_test = 20
valid_mass.n_positions = 200
",
    },
];

const MINI_MODEL: &str = "\
model.d_model = 64
model.n_layers = 6
model.n_heads = 4
model.ctx_len = 128
train.batch_size = 32
train.warmup_steps = 100
train.learning_rate = 0.001
train.total_steps = 3000
train.checkpoint_every = 250
probe.rank = 64
";

pub fn find(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        HlabError::config("preset", format!("unknown preset `{name}`; known: {}", names.join(", ")))
    })
}

/// Flat text of `name`, with `run_id` defaulting to the preset name.
pub fn preset_config(name: &str) -> Result<KvConfig> {
    let p = find(name)?;
    let mut text = format!("run_id = {}\n", p.name);
    if p.name.starts_with("paper-") {
        text.push_str(PAPER_MODEL);
        let vocab = "pcfg.vocab_size = 1000\nngram.vocab_size = 1000\n";
        text.push_str(vocab);
    }
    if p.name.starts_with("mini-") {
        text.push_str(MINI_MODEL);
    }
    text.push_str(p.text);
    KvConfig::parse_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runcfg::RunConfig;

    #[test]
    fn every_preset_resolves() {
        for p in PRESETS {
            let cfg = RunConfig::from_kv(&preset_config(p.name).unwrap()).unwrap();
            assert_eq!(cfg.run_id, p.name);
        }
    }

    #[test]
    fn paper_presets_match_published_tables() {
        let c = RunConfig::from_kv(&preset_config("paper-pcfg").unwrap()).unwrap();
        assert_eq!(c.model.hidden_dim(), 688);
        assert_eq!(c.model.n_layers, 16);
        assert_eq!(c.pcfg.num_documents, 6_500_000);
        assert_eq!(c.train.batch_size, 1024);
    }
}
