// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hlab_core::config::KvConfig;
use hlab_core::Result;
use labctl::commands::{self, FpMode, MetricKind};
use labctl::presets;
use labctl::runcfg::RunConfig;
use labctl::rundir::RunDir;

#[derive(Parser)]
#[command(name = "labctl", version, about = "N-gram vs PCFG transformer laboratory")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Key/value configuration file; applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset (paper-pcfg, desk-pcfg, mini-pcfg, smoke-pcfg, ...).
    #[arg(long)]
    preset: Option<String>,
    /// Master seed; overrides every component seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for corpus generation and metric sweeps.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Verb {
    /// Write the training and held-out corpora.
    Generate(ConfigArgs),
    /// Train a model, generating the corpus first if needed.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// Continue from the latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate metrics on every checkpoint of a run.
    Sweep {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated: induction, fv, hydra, probe, valid_mass, all.
        #[arg(long, default_value = "all")]
        metrics: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Join the metrics of several runs into per-figure CSV tables.
    Report {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output directory for the tables.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check a run's shards and parse annotations.
    ValidateCorpus {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let run = RunDir::new(&args.out);
    if args.config.is_none() && args.preset.is_none() && args.seed.is_none() {
        if let Some(cfg) = run.load_config()? {
            return Ok(cfg);
        }
    }
    let mut kv = match &args.preset {
        Some(name) => {
            let p = presets::find(name)?;
            eprintln!("preset {}: {}", p.name, p.provenance);
            presets::preset_config(name)?
        }
        None => KvConfig::default(),
    };
    if let Some(path) = &args.config {
        for (k, v) in KvConfig::load(path)?.entries {
            kv.set(&k, v);
        }
    }
    if let Some(seed) = args.seed {
        kv.set("seed", seed.to_string());
    }
    let cfg = RunConfig::from_kv(&kv)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Generate(args) => {
            let cfg = resolve(&args)?;
            let stats = commands::cmd_generate(&RunDir::new(&args.out), &cfg, args.workers)?;
            println!(
                "tokens {} documents {} sentences {} zipf_slope {:.3}",
                stats.tokens, stats.documents, stats.sentences, stats.zipf_slope
            );
        }
        Verb::Train { args, resume } => {
            let cfg = resolve(&args)?;
            let log = commands::cmd_train(&RunDir::new(&args.out), &cfg, resume, args.workers)?;
            if let Some(last) = log.rows.last() {
                println!("step {} loss {:.4} tokens {}", last.step, last.loss, last.tokens);
            }
        }
        Verb::Sweep { out, metrics, workers } => {
            let run = RunDir::new(&out);
            let process = run
                .load_config()?
                .ok_or_else(|| hlab_core::HlabError::Contract(format!("{} has no run.cfg", out.display())))?
                .process;
            let kinds = MetricKind::parse_list(&metrics, process)?;
            let rows = commands::cmd_sweep(&run, &kinds, workers, FpMode::from_env()?)?;
            println!("{} metric rows -> {}", rows.len(), run.metrics_path().display());
        }
        Verb::Report { runs, out } => {
            for p in commands::cmd_report(&runs, &out)? {
                println!("{}", p.display());
            }
        }
        Verb::ValidateCorpus { out } => {
            let c = commands::cmd_validate_corpus(&RunDir::new(&out))?;
            println!(
                "ok: {} shards, {} documents, {} sentences, {} re-parsed",
                c.shards, c.documents, c.sentences, c.reparsed
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
