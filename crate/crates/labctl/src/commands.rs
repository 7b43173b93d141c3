// SPDX-License-Identifier: MIT OR Apache-2.0

//! The five verbs: generate, train, sweep, report, validate-corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use hlab_core::corpus::{
    file_sha256, read_annotations, read_shard, write_annotations, write_shard, AnnotationRecord, Shard,
};
use hlab_core::geo::{
    annotated_windows, corpus_uuas, probe_loss, probe_sentences, train_probe, valid_mass, AnnotatedWindow,
};
use hlab_core::mech::{
    build_fv_tasks, fv_score, fv_self_patch_delta, hydra_deltas, induction_scores, sample_positions, EvalWindow,
    FvTask,
};
use hlab_core::metrics::{records_from_csv, records_to_csv, MetricRecord, Process};
use hlab_core::model::checkpoint::{NamedTensor, TensorFile};
use hlab_core::model::{Params, Scalar};
use hlab_core::pcfg::{generate_pcfg_corpus, parse_sentence, Grammar, RecognizerState, VocabLayout};
use hlab_core::train::{checkpoint_name, list_checkpoints, load_checkpoint, train, RunLog};
use hlab_core::{ngram, pcfg, HlabError, Result};

use crate::rundir::RunDir;
use crate::runcfg::RunConfig;

/// Floating-point mode for metric evaluation, from `HLAB_FP_MODE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpMode {
    /// Metrics in f64 from the stored f32 weights.
    Strict,
    /// Metrics in f32.
    Fast,
}

impl FpMode {
    pub fn from_env() -> Result<Self> {
        match std::env::var("HLAB_FP_MODE") {
            Err(_) => Ok(FpMode::Strict),
            Ok(v) => Self::parse(&v),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "" | "strict" => Ok(FpMode::Strict),
            "fast" => Ok(FpMode::Fast),
            other => Err(HlabError::config("HLAB_FP_MODE", format!("expected `strict` or `fast`, got `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FpMode::Strict => "strict",
            FpMode::Fast => "fast",
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HlabError::config("workers", e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub tokens: u64,
    pub documents: u64,
    pub sentences: u64,
    /// Least-squares slope of log frequency on log rank (non-EOS tokens).
    pub zipf_slope: f64,
    pub mean_sentence_length: f64,
    /// `(length including EOS, count)`.
    pub length_histogram: Vec<(usize, u64)>,
}

/// Unigram and sentence-length statistics; sentences end at EOS (`V − 1`).
pub fn corpus_stats(shard: &Shard) -> CorpusStats {
    let eos = shard.vocab_size.saturating_sub(1) as u16;
    let mut freq = vec![0u64; shard.vocab_size as usize];
    let mut lengths: BTreeMap<usize, u64> = BTreeMap::new();
    let mut run = 0usize;
    for &t in &shard.tokens {
        run += 1;
        if t == eos {
            *lengths.entry(run).or_default() += 1;
            run = 0;
        } else {
            freq[t as usize] += 1;
        }
    }
    let mut counts: Vec<u64> = freq.into_iter().filter(|&c| c > 0).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let pts: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .map(|(r, &c)| (((r + 1) as f64).ln(), (c as f64).ln()))
        .collect();
    let n = pts.len() as f64;
    let zipf_slope = if pts.len() < 2 {
        0.0
    } else {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    };
    let sentences: u64 = lengths.values().sum();
    let total_len: u64 = lengths.iter().map(|(l, c)| *l as u64 * c).sum();
    CorpusStats {
        tokens: shard.tokens.len() as u64,
        documents: shard.document_count() as u64,
        sentences,
        zipf_slope,
        mean_sentence_length: if sentences == 0 { 0.0 } else { total_len as f64 / sentences as f64 },
        length_histogram: lengths.into_iter().collect(),
    }
}

fn write_stats(run: &RunDir, stats: &CorpusStats) -> Result<()> {
    let p = run.corpus_dir().join("stats.txt");
    let text = format!(
        "tokens = {}\ndocuments = {}\nsentences = {}\nzipf_slope = {}\nmean_sentence_length = {}\n",
        stats.tokens, stats.documents, stats.sentences, stats.zipf_slope, stats.mean_sentence_length
    );
    fs::write(&p, text).map_err(|e| HlabError::io(&p, e))?;
    let h = run.corpus_dir().join("lengths.csv");
    let mut csv = String::from("length,count\n");
    for (l, c) in &stats.length_histogram {
        let _ = writeln!(csv, "{l},{c}");
    }
    fs::write(&h, csv).map_err(|e| HlabError::io(&h, e))
}

/// Held-out PCFG documents: ids past the training range, no repetition.
fn pcfg_heldout(cfg: &RunConfig, workers: usize) -> Result<(Shard, Vec<AnnotationRecord>)> {
    let grammar = Grammar::new(cfg.pcfg.clone())?;
    let first = cfg.pcfg.num_documents;
    let order: Vec<u64> = (first..first + cfg.pcfg_heldout_documents).collect();
    pcfg::build_shard(&grammar, &order, workers)
}

/// Writes the training and held-out corpora plus statistics. A run whose
/// corpus already exists is left untouched.
pub fn cmd_generate(run: &RunDir, cfg: &RunConfig, workers: usize) -> Result<CorpusStats> {
    run.bind_config(cfg)?;
    let _lock = run.lock()?;
    generate_locked(run, cfg, workers)
}

fn generate_locked(run: &RunDir, cfg: &RunConfig, workers: usize) -> Result<CorpusStats> {
    if !run.train_shard().exists() {
        match cfg.process {
            Process::Pcfg => {
                generate_pcfg_corpus(&cfg.pcfg, &run.train_shard(), &run.train_sidecar(), workers)?;
                let (shard, records) = pcfg_heldout(cfg, workers)?;
                let m = write_shard(&run.heldout_shard(), &shard)?;
                write_annotations(&run.heldout_sidecar(), &m.sha256, &records)?;
            }
            Process::Ngram => {
                ngram::generate_ngram_corpus(&cfg.ngram, &run.train_shard(), workers)?;
                let held =
                    ngram::build_shard(&cfg.ngram, cfg.ngram.num_sentences, cfg.ngram_heldout_sentences, workers)?;
                write_shard(&run.heldout_shard(), &held)?;
            }
        }
    }
    let stats = corpus_stats(&read_shard(&run.train_shard())?);
    write_stats(run, &stats)?;
    run.refresh_manifest(cfg, FpMode::from_env()?.as_str())?;
    Ok(stats)
}

/// Trains the run's model, generating the corpus first when missing.
pub fn cmd_train(run: &RunDir, cfg: &RunConfig, resume: bool, workers: usize) -> Result<RunLog> {
    run.bind_config(cfg)?;
    let _lock = run.lock()?;
    generate_locked(run, cfg, workers)?;
    let existing = if run.checkpoint_dir().exists() {
        list_checkpoints(&run.checkpoint_dir())?
    } else {
        Vec::new()
    };
    if !existing.is_empty() && !resume {
        return Err(HlabError::Contract(format!(
            "{} already has checkpoints; pass --resume to continue it",
            run.root.display()
        )));
    }
    let shard = read_shard(&run.train_shard())?;
    let out = train(&cfg.model, &cfg.train, std::slice::from_ref(&shard), &run.root, resume)?;
    run.refresh_manifest(cfg, FpMode::from_env()?.as_str())?;
    Ok(out.log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricKind {
    Induction,
    Fv,
    Hydra,
    Probe,
    ValidMass,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Induction,
        MetricKind::Fv,
        MetricKind::Hydra,
        MetricKind::Probe,
        MetricKind::ValidMass,
    ];

    fn needs_annotations(self) -> bool {
        matches!(self, MetricKind::Probe | MetricKind::ValidMass)
    }

    /// Comma-separated names; `all` selects every metric the run supports.
    pub fn parse_list(s: &str, process: Process) -> Result<Vec<MetricKind>> {
        let mut out = BTreeSet::new();
        for name in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match name {
                "all" => out.extend(
                    Self::ALL
                        .into_iter()
                        .filter(|m| process == Process::Pcfg || !m.needs_annotations()),
                ),
                "induction" => {
                    out.insert(MetricKind::Induction);
                }
                "fv" => {
                    out.insert(MetricKind::Fv);
                }
                "hydra" => {
                    out.insert(MetricKind::Hydra);
                }
                "probe" | "uuas" => {
                    out.insert(MetricKind::Probe);
                }
                "valid_mass" => {
                    out.insert(MetricKind::ValidMass);
                }
                other => {
                    return Err(HlabError::config(
                        "metrics",
                        format!("unknown metric `{other}`; expected induction, fv, hydra, probe, valid_mass or all"),
                    ))
                }
            }
        }
        if out.is_empty() {
            return Err(HlabError::config("metrics", "empty metric list"));
        }
        if process == Process::Ngram {
            if let Some(m) = out.iter().find(|m| m.needs_annotations()) {
                return Err(HlabError::Metric(format!("{m:?} needs parse annotations, which N-gram runs lack")));
            }
        }
        Ok(out.into_iter().collect())
    }
}

struct SweepData {
    cfg: RunConfig,
    layout: VocabLayout,
    tasks: Vec<FvTask>,
    hydra: Vec<EvalWindow>,
    annotated: Vec<AnnotatedWindow>,
}

fn record(cfg: &RunConfig, step: u64, metric: &str, layer: Option<usize>, head: Option<usize>, k: Option<usize>, value: f64) -> MetricRecord {
    MetricRecord {
        run_id: cfg.run_id.clone(),
        process: cfg.process,
        step,
        metric: metric.to_string(),
        layer,
        head,
        k,
        value,
    }
}

fn eval_checkpoint<T: Scalar>(
    params: &Params<T>,
    step: u64,
    data: &SweepData,
    metrics: &[MetricKind],
) -> Result<(Vec<MetricRecord>, Option<TensorFile>)> {
    let cfg = &data.cfg;
    let nl = params.cfg.n_layers;
    let mut rows = Vec::new();
    let mut probes = None;
    for m in metrics {
        match m {
            MetricKind::Induction => {
                for (k, scores) in induction_scores(params, &cfg.induction)? {
                    for l in 0..scores.n_layers {
                        for h in 0..scores.n_heads {
                            rows.push(record(cfg, step, "induction", Some(l), Some(h), Some(k), scores.get(l, h)));
                        }
                    }
                    rows.push(record(cfg, step, "induction_max", None, None, Some(k), scores.max()));
                }
            }
            MetricKind::Fv => {
                for l in 0..nl {
                    rows.push(record(cfg, step, "fv", Some(l), None, None, fv_score(params, l, &data.tasks, cfg.fv.mode)?));
                    let self_delta = fv_self_patch_delta(params, l, &data.tasks)?;
                    rows.push(record(cfg, step, "fv_self_patch", Some(l), None, None, self_delta));
                }
            }
            MetricKind::Hydra => {
                for (l, d) in hydra_deltas(params, &data.hydra, cfg.hydra_m)?.into_iter().enumerate() {
                    if let Some(d) = d {
                        rows.push(record(cfg, step, "hydra", Some(l), None, Some(cfg.hydra_m), d));
                    }
                }
            }
            MetricKind::Probe => {
                let pc = &cfg.probe;
                let want = pc.n_train + pc.n_dev + pc.n_test;
                let per_layer = probe_sentences(params, &data.annotated, want)?;
                let mut file = TensorFile {
                    meta: vec![("step".into(), step.to_string())],
                    tensors: Vec::new(),
                };
                for (l, sents) in per_layer.iter().enumerate() {
                    if sents.len() < want {
                        return Err(HlabError::Metric(format!(
                            "held-out corpus yields {} probe sentences, {want} requested",
                            sents.len()
                        )));
                    }
                    let (train_s, rest) = sents.split_at(pc.n_train);
                    let (dev_s, test_s) = rest.split_at(pc.n_dev);
                    let fit = train_probe(train_s, dev_s, params.cfg.d_model, pc)?;
                    rows.push(record(cfg, step, "uuas", Some(l), None, None, corpus_uuas(&fit.probe, test_s)?));
                    rows.push(record(cfg, step, "probe_loss", Some(l), None, None, probe_loss(&fit.probe, test_s, None)));
                    file.tensors.push(NamedTensor {
                        name: format!("probe.layers.{l}"),
                        shape: vec![fit.probe.rank, fit.probe.d_model],
                        data: fit.probe.b.iter().map(|&x| x as f32).collect(),
                    });
                }
                probes = Some(file);
            }
            MetricKind::ValidMass => {
                let (mass, uniform) = valid_mass(params, &data.annotated, &data.layout, cfg.valid_mass_positions)?;
                rows.push(record(cfg, step, "valid_mass", None, None, None, mass));
                rows.push(record(cfg, step, "valid_mass_uniform", None, None, None, uniform));
            }
        }
    }
    Ok((rows, probes))
}

/// Evaluates every requested metric on every checkpoint and writes
/// `metrics.csv` (rows in checkpoint order, then metric order).
pub fn cmd_sweep(run: &RunDir, metrics: &[MetricKind], workers: usize, fp: FpMode) -> Result<Vec<MetricRecord>> {
    let cfg = run
        .load_config()?
        .ok_or_else(|| HlabError::Contract(format!("{} has no run.cfg; run generate or train first", run.root.display())))?;
    let _lock = run.lock()?;
    let ckpts = list_checkpoints(&run.checkpoint_dir())?;
    if ckpts.is_empty() {
        return Err(HlabError::Contract(format!("{} has no checkpoints", run.root.display())));
    }
    let held = read_shard(&run.heldout_shard())?;
    let annotated = if metrics.iter().any(|m| m.needs_annotations()) {
        let records = read_annotations(&run.heldout_sidecar(), Some(&file_sha256(&run.heldout_shard())?))?;
        annotated_windows(&held, &records, cfg.model.ctx_len)?
    } else {
        Vec::new()
    };
    let layout = cfg.layout()?;
    let data = SweepData {
        tasks: build_fv_tasks(&layout, &cfg.fv)?,
        hydra: if metrics.contains(&MetricKind::Hydra) {
            sample_positions(std::slice::from_ref(&held), cfg.model.ctx_len, cfg.hydra_positions, cfg.seed)?
        } else {
            Vec::new()
        },
        annotated,
        layout,
        cfg: cfg.clone(),
    };
    let results: Vec<Result<(u64, Vec<MetricRecord>, Option<TensorFile>)>> = pool(workers)?.install(|| {
        ckpts
            .par_iter()
            .map(|(step, path)| {
                let state = load_checkpoint(path)?;
                let (rows, probes) = match fp {
                    FpMode::Strict => eval_checkpoint(&state.params.cast::<f64>(), *step, &data, metrics)?,
                    FpMode::Fast => eval_checkpoint(&state.params, *step, &data, metrics)?,
                };
                Ok((*step, rows, probes))
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in results {
        let (step, mut r, probes) = r?;
        if let Some(file) = probes {
            fs::create_dir_all(run.probe_dir()).map_err(|e| HlabError::io(run.probe_dir(), e))?;
            let name = checkpoint_name(step).replace(".ckpt", ".probe");
            file.save(&run.probe_dir().join(name))?;
        }
        rows.append(&mut r);
    }
    let path = run.metrics_path();
    fs::write(&path, records_to_csv(&rows)).map_err(|e| HlabError::io(&path, e))?;
    run.refresh_manifest(&cfg, fp.as_str())?;
    Ok(rows)
}

/// Result of re-checking a run's corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusCheck {
    pub shards: usize,
    pub documents: u64,
    pub sentences: u64,
    pub reparsed: u64,
}

/// Re-reads every shard, checks sidecar keys, and for PCFG re-parses every
/// annotated sentence and recomputes its masks.
pub fn cmd_validate_corpus(run: &RunDir) -> Result<CorpusCheck> {
    let cfg = run
        .load_config()?
        .ok_or_else(|| HlabError::Contract(format!("{} has no run.cfg", run.root.display())))?;
    let mut check = CorpusCheck {
        shards: 0,
        documents: 0,
        sentences: 0,
        reparsed: 0,
    };
    let pairs = [
        (run.train_shard(), run.train_sidecar()),
        (run.heldout_shard(), run.heldout_sidecar()),
    ];
    for (shard_path, sidecar) in pairs {
        let shard = read_shard(&shard_path)?;
        let bad = |reason: String| HlabError::Shard {
            shard: shard_path.display().to_string(),
            reason,
        };
        check.shards += 1;
        check.documents += shard.document_count() as u64;
        let eos = (shard.vocab_size - 1) as u16;
        for d in 0..shard.document_count() {
            if shard.document(d).last() != Some(&eos) {
                return Err(bad(format!("document {d} does not end with EOS")));
            }
        }
        if cfg.process == Process::Ngram {
            check.sentences += shard.tokens.iter().filter(|&&t| t == eos).count() as u64;
            continue;
        }
        let layout = cfg.pcfg.validate()?;
        let records = read_annotations(&sidecar, Some(&file_sha256(&shard_path)?))?;
        let mut covered = 0u64;
        for (i, r) in records.iter().enumerate() {
            let toks: Vec<u32> = shard.tokens[r.start as usize..r.end as usize].iter().map(|&t| u32::from(t)).collect();
            let tree = parse_sentence(&toks, &layout).map_err(|e| bad(format!("sentence {i}: {e}")))?;
            if tree != r.tree {
                return Err(bad(format!("sentence {i}: stored tree differs from the re-parse")));
            }
            let mut state = RecognizerState::Start;
            for (p, &t) in toks.iter().enumerate() {
                let mask = hlab_core::pcfg::valid_next_categories(state)?;
                if mask.0 != r.masks[p] {
                    return Err(bad(format!("sentence {i}: mask mismatch at position {p}")));
                }
                let c = layout.category(t).expect("parsed above");
                state = state.step(c).expect("parsed above");
            }
            covered += r.end - r.start;
            check.reparsed += 1;
        }
        if covered != shard.tokens.len() as u64 {
            return Err(bad(format!("annotations cover {covered} of {} tokens", shard.tokens.len())));
        }
        check.sentences += records.len() as u64;
    }
    Ok(check)
}

/// Per-figure tables written by [`cmd_report`].
pub const REPORT_FILES: [&str; 7] = [
    "fig2_induction.csv",
    "fig3_function_vectors.csv",
    "fig4_hydra.csv",
    "fig4_hydra_signs.csv",
    "fig5a_valid_mass.csv",
    "fig5b_uuas.csv",
    "loss_curves.csv",
];

struct RunRows {
    id: String,
    rows: Vec<MetricRecord>,
    log: Option<RunLog>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn lookup(r: &RunRows, step: u64, metric: &str, layer: Option<usize>, k: Option<usize>) -> Option<f64> {
    r.rows
        .iter()
        .find(|m| m.step == step && m.metric == metric && m.layer == layer && m.k == k && m.head.is_none())
        .map(|m| m.value)
}

/// Tables keyed by `(step, key)` with one column per run.
fn table(
    runs: &[RunRows],
    key_name: Option<&str>,
    keys: &[Option<usize>],
    steps: &BTreeSet<u64>,
    value: impl Fn(&RunRows, u64, Option<usize>) -> Option<String>,
) -> String {
    let mut s = String::from("step");
    if let Some(k) = key_name {
        s.push(',');
        s.push_str(k);
    }
    for r in runs {
        s.push(',');
        s.push_str(&r.id);
    }
    s.push('\n');
    for &step in steps {
        for &key in keys {
            s.push_str(&step.to_string());
            if key_name.is_some() {
                s.push(',');
                s.push_str(&key.map(|k| k.to_string()).unwrap_or_default());
            }
            for r in runs {
                s.push(',');
                s.push_str(&value(r, step, key).unwrap_or_default());
            }
            s.push('\n');
        }
    }
    s
}

fn sign(v: f64) -> &'static str {
    if v > 0.0 {
        "+"
    } else if v < 0.0 {
        "-"
    } else {
        "0"
    }
}

/// Joins runs on step and writes one CSV per figure into `out`. Missing
/// values are empty cells.
pub fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(HlabError::config("report", "needs at least one run directory"));
    }
    let mut loaded = Vec::new();
    let mut ids = BTreeSet::new();
    for root in runs {
        let run = RunDir::new(root);
        let cfg = run
            .load_config()?
            .ok_or_else(|| HlabError::Contract(format!("{} has no run.cfg", root.display())))?;
        if !ids.insert(cfg.run_id.clone()) {
            return Err(HlabError::Contract(format!("run id {} appears twice", cfg.run_id)));
        }
        let mp = run.metrics_path();
        let rows = if mp.exists() {
            records_from_csv(&fs::read_to_string(&mp).map_err(|e| HlabError::io(&mp, e))?)?
        } else {
            Vec::new()
        };
        let lp = run.runlog_path();
        let log = if lp.exists() {
            Some(RunLog::from_csv(&fs::read_to_string(&lp).map_err(|e| HlabError::io(&lp, e))?)?)
        } else {
            None
        };
        loaded.push(RunRows {
            id: cfg.run_id,
            rows,
            log,
        });
    }
    fs::create_dir_all(out).map_err(|e| HlabError::io(out, e))?;
    let steps: BTreeSet<u64> = loaded.iter().flat_map(|r| r.rows.iter().map(|m| m.step)).collect();
    let collect = |metric: &str, f: fn(&MetricRecord) -> Option<usize>| -> Vec<Option<usize>> {
        let set: BTreeSet<Option<usize>> =
            loaded.iter().flat_map(|r| r.rows.iter().filter(|m| m.metric == metric).map(f)).collect();
        set.into_iter().collect()
    };
    let k_list = collect("induction_max", |m| m.k);
    let fv_layers = collect("fv", |m| m.layer);
    let hydra_layers: Vec<Option<usize>> = {
        let set: BTreeSet<Option<usize>> = loaded
            .iter()
            .flat_map(|r| r.rows.iter().filter(|m| m.metric == "hydra" && m.k == Some(1)).map(|m| m.layer))
            .collect();
        set.into_iter().collect()
    };
    let uuas_layers = collect("uuas", |m| m.layer);

    let mut written = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| HlabError::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    emit(
        REPORT_FILES[0],
        table(&loaded, Some("k"), &k_list, &steps, |r, s, k| {
            lookup(r, s, "induction_max", None, k).map(|v| v.to_string())
        }),
    )?;
    emit(
        REPORT_FILES[1],
        table(&loaded, Some("layer"), &fv_layers, &steps, |r, s, l| lookup(r, s, "fv", l, None).map(|v| v.to_string())),
    )?;
    emit(
        REPORT_FILES[2],
        table(&loaded, Some("layer"), &hydra_layers, &steps, |r, s, l| {
            lookup(r, s, "hydra", l, Some(1)).map(|v| v.to_string())
        }),
    )?;
    emit(
        REPORT_FILES[3],
        table(&loaded, Some("layer"), &hydra_layers, &steps, |r, s, l| {
            lookup(r, s, "hydra", l, Some(1)).map(|v| sign(v).to_string())
        }),
    )?;
    {
        let mut s = String::from("step");
        for r in &loaded {
            let _ = write!(s, ",{},{}_uniform", r.id, r.id);
        }
        s.push('\n');
        for &step in &steps {
            s.push_str(&step.to_string());
            for r in &loaded {
                let _ = write!(
                    s,
                    ",{},{}",
                    cell(lookup(r, step, "valid_mass", None, None)),
                    cell(lookup(r, step, "valid_mass_uniform", None, None))
                );
            }
            s.push('\n');
        }
        emit(REPORT_FILES[4], s)?;
    }
    emit(
        REPORT_FILES[5],
        table(&loaded, Some("layer"), &uuas_layers, &steps, |r, s, l| lookup(r, s, "uuas", l, None).map(|v| v.to_string())),
    )?;
    {
        let log_steps: BTreeSet<u64> =
            loaded.iter().filter_map(|r| r.log.as_ref()).flat_map(|l| l.rows.iter().map(|x| x.step)).collect();
        let by_run: Vec<BTreeMap<u64, f64>> = loaded
            .iter()
            .map(|r| r.log.as_ref().map(|l| l.rows.iter().map(|x| (x.step, x.loss)).collect()).unwrap_or_default())
            .collect();
        let mut s = String::from("step");
        for r in &loaded {
            let _ = write!(s, ",{}", r.id);
        }
        s.push('\n');
        for step in log_steps {
            s.push_str(&step.to_string());
            for m in &by_run {
                let _ = write!(s, ",{}", cell(m.get(&step).copied()));
            }
            s.push('\n');
        }
        emit(REPORT_FILES[6], s)?;
    }
    Ok(written)
}

/// Reads a report table into rows of cells (header first).
pub fn read_table(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| HlabError::io(path, e))?;
    Ok(text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fp_mode_parses() {
        assert_eq!(FpMode::parse("strict").unwrap(), FpMode::Strict);
        assert_eq!(FpMode::parse("fast").unwrap(), FpMode::Fast);
        assert!(FpMode::parse("loose").is_err());
    }

    #[test]
    fn metric_lists() {
        assert_eq!(MetricKind::parse_list("all", Process::Pcfg).unwrap().len(), 5);
        assert_eq!(MetricKind::parse_list("all", Process::Ngram).unwrap().len(), 3);
        assert!(MetricKind::parse_list("probe", Process::Ngram).is_err());
        assert!(MetricKind::parse_list("bogus", Process::Pcfg).is_err());
    }

    #[test]
    fn stats_fit_a_power_law() {
        // Counts 1000/r for r = 1..=8, two tokens each followed by EOS.
        let mut tokens = Vec::new();
        for r in 1..=8u16 {
            for _ in 0..(1000 / r) {
                tokens.push(r - 1);
            }
        }
        tokens.push(9);
        let shard = Shard::from_documents(10, std::iter::once(tokens.iter().map(|&t| u32::from(t)).collect::<Vec<_>>().as_slice())).unwrap();
        let s = corpus_stats(&shard);
        assert!((s.zipf_slope + 1.0).abs() < 0.01, "{}", s.zipf_slope);
        assert_eq!(s.sentences, 1);
    }
}
