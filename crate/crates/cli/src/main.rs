//! `lesicin`: split corpora, build citation graphs, train, evaluate and predict.

mod config;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use lesicin::corpus::{load_facts, load_hierarchy, load_queries, write_facts, FactDocument};
use lesicin::graph::build_citation_graph;
use lesicin::model::{Checkpoint, Model};
use lesicin::pipeline::{evaluate, fit, inference_cache, tune};
use lesicin::split::{iterative_stratified_split, SplitReport, SplitSpec};
use lesicin::synth::{synth_corpus, SynthConfig};

use config::{Ablation, Overrides, RunConfig};

const MANIFEST: &str = "split_manifest.json";
const HELD_OUT_STEMS: [&str; 4] = ["validation", "val", "dev", "test"];

#[derive(Parser)]
#[command(name = "lesicin", version, about = "Statute identification over a legal citation network")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Flat TOML file of configuration keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum)]
    ablation: Option<Ablation>,
    /// Decision threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Weight cap of threshold-based weighting.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Small dimensions suited to CPU runs.
    #[arg(long, global = true)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hierarchy and labeled facts.
    Synth {
        #[arg(long, default_value_t = 500)]
        n_docs: usize,
        #[arg(long, default_value_t = 10)]
        n_sections: usize,
    },
    /// Stratified train/validation/test split.
    Split {
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        /// Comma-separated fold ratios, e.g. 0.64,0.16,0.20.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Build the citation graph from training facts.
    BuildGraph {
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score labeled facts with a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        facts: PathBuf,
        /// Use the threshold tuned on validation data at training time.
        #[arg(long, conflicts_with = "tau")]
        tuned_tau: bool,
    },
    /// Predict statutes for facts with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        facts: PathBuf,
        #[arg(long, conflicts_with = "tau")]
        tuned_tau: bool,
    },
}

/// Fold membership written by `split`.
#[derive(Serialize, Deserialize)]
struct SplitManifest {
    seed: u64,
    train: Vec<String>,
    validation: Vec<String>,
    test: Vec<String>,
}

/// Training metadata kept inside checkpoints.
#[derive(Serialize, Deserialize)]
struct TrainingRecord {
    config: RunConfig,
    best_epoch: usize,
    best_val_macro_f1: f64,
    tuned_tau: f64,
    tuned_val_macro_f1: f64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let s = &cli.shared;
    let overrides = Overrides {
        seed: s.seed,
        ablation: s.ablation,
        tau: s.tau,
        eta: s.eta,
        desk_scale: s.desk_scale,
    };
    let out = s.out_dir.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Synth { n_docs, n_sections } => {
            let cfg = effective(s.config.as_deref(), &overrides, out)?;
            cmd_synth(&cfg, n_docs, n_sections, out)
        }
        Command::Split {
            facts,
            hierarchy,
            ratios,
        } => {
            require(&[&facts, &hierarchy])?;
            let mut cfg = RunConfig::resolve(s.config.as_deref(), &overrides)?;
            if let Some(r) = ratios {
                cfg.ratios = r
                    .try_into()
                    .map_err(|r: Vec<f64>| anyhow::anyhow!("--ratios takes three values, got {}", r.len()))?;
                cfg.validate()?;
            }
            echo(&cfg, out)?;
            cmd_split(&cfg, &facts, &hierarchy, out)
        }
        Command::BuildGraph { facts, hierarchy } => {
            require(&[&facts, &hierarchy])?;
            effective(s.config.as_deref(), &overrides, out)?;
            cmd_build_graph(&facts, &hierarchy, out)
        }
        Command::Train {
            train,
            validation,
            hierarchy,
            epochs,
        } => {
            require(&[&train, &validation, &hierarchy])?;
            let mut cfg = RunConfig::resolve(s.config.as_deref(), &overrides)?;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            echo(&cfg, out)?;
            cmd_train(&cfg, &train, &validation, &hierarchy, out)
        }
        Command::Evaluate {
            checkpoint,
            facts,
            tuned_tau,
        } => {
            require(&[&checkpoint, &facts])?;
            let (model, cfg, tau) = restore(&checkpoint, &overrides, tuned_tau, out)?;
            cmd_evaluate(&model, &cfg, tau, &facts, out)
        }
        Command::Predict {
            checkpoint,
            facts,
            tuned_tau,
        } => {
            require(&[&checkpoint, &facts])?;
            let (model, cfg, tau) = restore(&checkpoint, &overrides, tuned_tau, out)?;
            cmd_predict(&model, &cfg, tau, &facts, out)
        }
    }
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            bail!("input {} does not exist", p.display());
        }
    }
    Ok(())
}

fn effective(file: Option<&Path>, overrides: &Overrides, out: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::resolve(file, overrides)?;
    echo(&cfg, out)?;
    Ok(cfg)
}

/// Prints the effective configuration and writes it beside the outputs.
fn echo(cfg: &RunConfig, out: &Path) -> Result<()> {
    let text = cfg.to_toml()?;
    println!("# effective configuration\n{text}");
    write_file(&out.join("effective_config.toml"), text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, &serde_json::to_vec_pretty(value)?)
}

fn cmd_synth(cfg: &RunConfig, n_docs: usize, n_sections: usize, out: &Path) -> Result<()> {
    let synth = SynthConfig {
        n_docs,
        n_sections,
        seed: cfg.training.seed,
        ..SynthConfig::default()
    };
    let (h, docs) = synth_corpus(&synth)?;
    h.save(out.join("hierarchy.json"))?;
    write_facts(out.join("facts.jsonl"), &docs)?;
    write_json(&out.join("synth_config.json"), &synth)?;
    info!("wrote {} facts over {} sections to {}", docs.len(), h.num_sections(), out.display());
    Ok(())
}

fn cmd_split(cfg: &RunConfig, facts: &Path, hierarchy: &Path, out: &Path) -> Result<()> {
    let h = load_hierarchy(hierarchy)?;
    let docs = load_facts(facts, &h)?.docs;
    let spec = SplitSpec::new(cfg.ratios, cfg.training.seed)?;
    let split = iterative_stratified_split(&docs, &spec)?;
    for (name, fold) in ["train", "validation", "test"].iter().zip(split.folds()) {
        write_facts(out.join(format!("{name}.jsonl")), fold)?;
    }
    let ids = |f: &[FactDocument]| f.iter().map(|d| d.id.clone()).collect();
    write_json(
        &out.join(MANIFEST),
        &SplitManifest {
            seed: spec.seed,
            train: ids(&split.train),
            validation: ids(&split.validation),
            test: ids(&split.test),
        },
    )?;
    let report = SplitReport::new(&split, &spec);
    write_json(&out.join("split_report.json"), &report)?;
    println!(
        "train {} / validation {} / test {}; max label deviation {:.4} (labels with >= 50 docs)",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        report.max_deviation(50)
    );
    Ok(())
}

/// Refuses files that are, or contain, held-out facts of a known split.
fn check_training_only(facts: &Path, docs: &[FactDocument]) -> Result<()> {
    let stem = facts.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_lowercase();
    if HELD_OUT_STEMS.contains(&stem.as_str()) {
        bail!("{} looks like a held-out fold; the graph takes training facts only", facts.display());
    }
    let manifest = facts.parent().unwrap_or(Path::new(".")).join(MANIFEST);
    if manifest.exists() {
        let m: SplitManifest = serde_json::from_slice(&fs::read(&manifest)?)
            .with_context(|| format!("reading {}", manifest.display()))?;
        let held: HashSet<&str> = m.validation.iter().chain(&m.test).map(String::as_str).collect();
        if let Some(d) = docs.iter().find(|d| held.contains(d.id.as_str())) {
            bail!(
                "fact `{}` is in a held-out fold of {}; the graph takes training facts only",
                d.id,
                manifest.display()
            );
        }
    }
    Ok(())
}

fn cmd_build_graph(facts: &Path, hierarchy: &Path, out: &Path) -> Result<()> {
    let h = load_hierarchy(hierarchy)?;
    let docs = load_facts(facts, &h)?.docs;
    check_training_only(facts, &docs)?;
    let g = build_citation_graph(&docs, &h)?;
    g.check_invariants()?;
    g.save(out.join("graph.json"))?;
    let stats = g.stats();
    write_json(&out.join("graph_stats.json"), &stats)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn cmd_train(cfg: &RunConfig, train: &Path, validation: &Path, hierarchy: &Path, out: &Path) -> Result<()> {
    let h = load_hierarchy(hierarchy)?;
    let train_docs = load_facts(train, &h)?.docs;
    check_training_only(train, &train_docs)?;
    let val_docs = load_facts(validation, &h)?.docs;
    let log_path = out.join("epochs.jsonl");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log_err = None;
    let (model, outcome) = fit(&train_docs, &val_docs, &h, cfg.model.clone(), &cfg.training, |rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    let cache = inference_cache(&model, &cfg.training)?;
    let (tuned_tau, tuned_f1) = tune(&model, &cache, &val_docs, &cfg.training)?;
    let record = TrainingRecord {
        config: cfg.clone(),
        best_epoch: outcome.best_epoch,
        best_val_macro_f1: outcome.best_val_macro_f1,
        tuned_tau,
        tuned_val_macro_f1: tuned_f1,
    };
    Checkpoint::new(&model, serde_json::to_value(&record)?, cfg.training.seed)?.save(out.join("checkpoint.json"))?;
    write_json(&out.join("training_summary.json"), &record)?;
    println!(
        "best epoch {} validation macro-F1 {:.4} at tau {}; tuned tau {:.2} gives {:.4}",
        outcome.best_epoch, outcome.best_val_macro_f1, cfg.training.tau, tuned_tau, tuned_f1
    );
    Ok(())
}

/// Loads a checkpoint; its stored configuration is the base and flags override it.
fn restore(path: &Path, o: &Overrides, tuned: bool, out: &Path) -> Result<(Model, RunConfig, f64)> {
    let ck = Checkpoint::load(path)?;
    let record: TrainingRecord =
        serde_json::from_value(ck.training.clone()).context("checkpoint lacks a training record")?;
    let mut cfg = record.config;
    if let Some(s) = o.seed {
        cfg.training.seed = s;
    }
    if let Some(t) = o.tau {
        cfg.training.tau = t;
    }
    if o.ablation.is_some_and(|a| a != cfg.ablation) || o.eta.is_some() || o.desk_scale {
        bail!("--ablation, --eta and --desk-scale are fixed at training time");
    }
    cfg.validate()?;
    echo(&cfg, out)?;
    let tau = if tuned { record.tuned_tau } else { cfg.training.tau };
    Ok((ck.into_model()?, cfg, tau))
}

fn cmd_evaluate(model: &Model, cfg: &RunConfig, tau: f64, facts: &Path, out: &Path) -> Result<()> {
    let docs = load_facts(facts, &model.hierarchy)?.docs;
    let cache = inference_cache(model, &cfg.training)?;
    let (_, report) = evaluate(model, &cache, &docs, &cfg.training, tau)?;
    write_json(&out.join("eval_report.json"), &report)?;
    println!("tau {tau}\n{}", report.to_table());
    Ok(())
}

fn cmd_predict(model: &Model, cfg: &RunConfig, tau: f64, facts: &Path, out: &Path) -> Result<()> {
    let docs = load_queries(facts, &model.hierarchy)?;
    let cache = inference_cache(model, &cfg.training)?;
    let preds = model.predict(&cache, &docs, cfg.training.lambda(), tau)?;
    let ids = model.hierarchy.section_ids();
    let path = out.join("predictions.jsonl");
    let mut file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    for p in &preds {
        let scores: BTreeMap<&str, f64> = ids
            .iter()
            .zip(&p.combined)
            .filter(|(id, _)| p.labels.contains(*id))
            .map(|(id, s)| (id.as_str(), *s))
            .collect();
        let mut ranked: Vec<_> = scores.iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(a.1));
        let shown: Vec<String> = ranked.iter().map(|(id, s)| format!("{id}:{s:.4}")).collect();
        println!("{}\t{}", p.id, shown.join(" "));
        let line = serde_json::json!({ "id": p.id, "sections": p.labels, "scores": scores });
        writeln!(file, "{line}").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
