//! End-to-end helpers shared by the command line and the test suites.

use crate::corpus::{FactDocument, StatuteHierarchy, Vocabulary};
use crate::error::Result;
use crate::eval::EvalReport;
use crate::graph::build_citation_graph;
use crate::model::{Model, ModelConfig, Prediction, SectionCache};
use crate::training::{default_grid, golds, inference_seed, train, tune_threshold, EpochRecord, TrainOutcome, TrainingConfig};

/// Vocabulary over training fact text and section text only.
pub fn build_vocabulary(train: &[FactDocument], hierarchy: &StatuteHierarchy, min_freq: u64) -> Result<Vocabulary> {
    let facts = train.iter().flat_map(|d| d.sentences.iter().flatten());
    let sections = hierarchy.sections.iter().flat_map(|s| s.sentences.iter().flatten());
    Vocabulary::build([facts.chain(sections)], min_freq)
}

/// Builds the graph and vocabulary from `train` and trains a fresh model.
pub fn fit(
    train_docs: &[FactDocument],
    val_docs: &[FactDocument],
    hierarchy: &StatuteHierarchy,
    model_cfg: ModelConfig,
    cfg: &TrainingConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainOutcome)> {
    let graph = build_citation_graph(train_docs, hierarchy)?;
    let vocab = build_vocabulary(train_docs, hierarchy, 1)?;
    let mut model = Model::new(model_cfg, vocab, hierarchy.clone(), graph, cfg.seed)?;
    let outcome = train(&mut model, train_docs, val_docs, cfg, on_epoch)?;
    Ok((model, outcome))
}

/// Section cache under the configured inference seed.
pub fn inference_cache(model: &Model, cfg: &TrainingConfig) -> Result<SectionCache> {
    model.section_cache(cfg.k, inference_seed(cfg))
}

/// Threshold maximizing validation macro-F1 on the default grid.
pub fn tune(model: &Model, cache: &SectionCache, val_docs: &[FactDocument], cfg: &TrainingConfig) -> Result<(f64, f64)> {
    let preds = model.predict(cache, val_docs, cfg.lambda(), cfg.tau)?;
    tune_threshold(&preds, &golds(val_docs), &model.hierarchy.section_ids(), &default_grid())
}

/// Predictions at `tau` and the resulting report.
pub fn evaluate(
    model: &Model,
    cache: &SectionCache,
    docs: &[FactDocument],
    cfg: &TrainingConfig,
    tau: f64,
) -> Result<(Vec<Prediction>, EvalReport)> {
    let preds = model.predict(cache, docs, cfg.lambda(), tau)?;
    let labels: Vec<_> = preds.iter().map(|p| p.labels.clone()).collect();
    let courts: Vec<String> = docs.iter().map(|d| d.court.clone()).collect();
    let report = EvalReport::new(&labels, &golds(docs), &courts, &model.hierarchy.section_ids())?;
    Ok((preds, report))
}
