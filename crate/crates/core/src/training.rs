//! Weighted multi-label loss, Adam updates, the epoch loop with best-model
//! selection on validation macro-F1, and threshold tuning.

use std::collections::BTreeSet;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::FactDocument;
use crate::error::{Error, Result};
use crate::eval::macro_prf;
use crate::graph::derive_seed;
use crate::model::{Model, Prediction, SectionCache, TrainPass};
use crate::tape::{Gradients, Mat, ParamStore, Tape, Var};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Tws,
    Vws,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub theta_a: f64,
    pub theta_s: f64,
    pub theta_l: f64,
    pub lambda_a: f64,
    pub lambda_l: f64,
    pub tau: f64,
    pub eta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Metapath instances sampled per schema and node.
    pub k: usize,
    pub weighting: Weighting,
    /// Keep batch facts off the metapaths sampled during their own step.
    pub exclude_self_edges: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            theta_a: 1.0,
            theta_s: 2.0,
            theta_l: 3.0,
            lambda_a: 0.25,
            lambda_l: 0.75,
            tau: 0.65,
            eta: 10.0,
            lr: 1e-3,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            k: 8,
            weighting: Weighting::Tws,
            exclude_self_edges: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let weights = [self.theta_a, self.theta_s, self.theta_l, self.lambda_a, self.lambda_l];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("loss and score weights must be non-negative".into());
        }
        if self.lambda_a + self.lambda_l <= 0.0 {
            return bad("lambda_a + lambda_l must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must be in (0, 1), got {}", self.tau));
        }
        if !(self.eta >= 1.0) {
            return bad(format!("eta must be >= 1, got {}", self.eta));
        }
        if !(1e-6..=1e-2).contains(&self.lr) {
            return bad(format!("learning rate must be in [1e-6, 1e-2], got {}", self.lr));
        }
        if self.batch_size == 0 || self.k == 0 {
            return bad("batch_size and k must be positive".into());
        }
        Ok(())
    }

    pub fn lambda(&self) -> (f64, f64) {
        (self.lambda_a, self.lambda_l)
    }
}

/// `w_s = N / f_s`; unseen sections get `N`.
pub fn class_weights_vws(freqs: &[usize], n_docs: usize) -> Vec<f64> {
    freqs
        .iter()
        .map(|&f| if f == 0 { n_docs as f64 } else { n_docs as f64 / f as f64 })
        .collect()
}

/// `w_s = min(f_max / f_s, η)`; unseen sections get `η`.
pub fn class_weights_tws(freqs: &[usize], eta: f64) -> Vec<f64> {
    let fmax = freqs.iter().copied().max().unwrap_or(0) as f64;
    freqs
        .iter()
        .map(|&f| if f == 0 { eta } else { (fmax / f as f64).min(eta) })
        .collect()
}

/// Training citation count of every section, in section order.
pub fn section_frequencies(model: &Model, docs: &[FactDocument]) -> Vec<usize> {
    let mut f = vec![0; model.num_sections()];
    for d in docs {
        for l in &d.labels {
            if let Some(i) = model.hierarchy.section_index(l) {
                f[i] += 1;
            }
        }
    }
    f
}

pub fn class_weights(cfg: &TrainingConfig, freqs: &[usize], n_docs: usize) -> Vec<f64> {
    match cfg.weighting {
        Weighting::Tws => class_weights_tws(freqs, cfg.eta),
        Weighting::Vws => class_weights_vws(freqs, n_docs),
    }
}

/// `θ_a L_a + θ_s L_s + θ_l L_l`; the structural term is dropped when absent.
pub fn combined_loss(t: &mut Tape, la: Var, ls: Option<Var>, ll: Var, cfg: &TrainingConfig) -> Var {
    let a = t.scale(la, cfg.theta_a);
    let l = t.scale(ll, cfg.theta_l);
    let mut total = t.add(a, l);
    if let Some(ls) = ls {
        let s = t.scale(ls, cfg.theta_s);
        total = t.add(total, s);
    }
    total
}

/// Adam with the usual bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Mat> = store.ids().map(|id| Mat::zeros(store.get(id).dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (id, g) in grads.iter() {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = store.get_mut(id);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Per-batch losses before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub attribute: f64,
    pub structural: Option<f64>,
    pub alignment: f64,
    pub total: f64,
}

/// One optimizer step on `docs`. Returns the losses of the forward pass.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    docs: &[&FactDocument],
    weights: &[f64],
    cfg: &TrainingConfig,
    seed: u64,
    dropout: bool,
    position: (usize, usize),
) -> Result<BatchLoss> {
    let (loss, grads) = {
        let mut t = Tape::new(&model.store);
        let (total, loss) = batch_loss(model, &mut t, docs, weights, cfg, seed, dropout)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                epoch: position.0,
                batch: position.1,
                loss: loss.total,
            });
        }
        (loss, t.backward(total))
    };
    adam.step(&mut model.store, &grads);
    Ok(loss)
}

/// Builds the combined loss of one batch on `t`.
pub fn batch_loss(
    model: &Model,
    t: &mut Tape,
    docs: &[&FactDocument],
    weights: &[f64],
    cfg: &TrainingConfig,
    seed: u64,
    dropout: bool,
) -> Result<(Var, BatchLoss)> {
    let pass = TrainPass {
        k: cfg.k,
        seed,
        with_fact_structure: cfg.theta_s > 0.0,
        exclude_batch_facts: cfg.exclude_self_edges,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD50F);
    let fwd = model.forward_train(t, docs, pass, dropout.then_some(&mut rng))?;
    let y = model.targets(docs);
    let la = t.weighted_bce(fwd.scores.attribute, y.clone(), weights.to_vec(), BCE_EPS);
    let ll = t.weighted_bce(fwd.scores.alignment, y.clone(), weights.to_vec(), BCE_EPS);
    let ls = fwd
        .scores
        .structural
        .map(|s| t.weighted_bce(s, y, weights.to_vec(), BCE_EPS));
    let total = combined_loss(t, la, ls, ll, cfg);
    let loss = BatchLoss {
        attribute: t.scalar(la),
        structural: ls.map(|v| t.scalar(v)),
        alignment: t.scalar(ll),
        total: t.scalar(total),
    };
    Ok((total, loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_a: f64,
    pub loss_s: Option<f64>,
    pub loss_l: f64,
    pub loss: f64,
    pub val_macro_f1: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
}

/// Seed of the inference-time section sampling.
pub fn inference_seed(cfg: &TrainingConfig) -> u64 {
    derive_seed(cfg.seed, u64::MAX, 0)
}

/// Trains `model` in place; on return it holds the parameters of the epoch
/// with the best validation macro-F1 (earliest on ties).
pub fn train(
    model: &mut Model,
    train_docs: &[FactDocument],
    val_docs: &[FactDocument],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_docs.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    let freqs = section_frequencies(model, train_docs);
    let weights = class_weights(cfg, &freqs, train_docs.len());
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5EED, 1));
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sa, mut ss, mut sl, mut st) = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let docs: Vec<&FactDocument> = chunk.iter().map(|&i| &train_docs[i]).collect();
            let seed = derive_seed(cfg.seed, epoch as u64, b as u64 + 1);
            let loss = train_step(model, &mut adam, &docs, &weights, cfg, seed, true, (epoch, b))?;
            sa += loss.attribute;
            ss += loss.structural.unwrap_or(0.0);
            sl += loss.alignment;
            st += loss.total;
            batches += 1;
        }
        let n = batches as f64;
        let val_f1 = if val_docs.is_empty() {
            0.0
        } else {
            let cache = model.section_cache(cfg.k, inference_seed(cfg))?;
            validation_f1(model, &cache, val_docs, cfg.lambda(), cfg.tau)?
        };
        let improved = best.as_ref().map_or(true, |(f, _, _)| val_f1 > *f);
        if improved {
            best = Some((val_f1, epoch, model.store.clone()));
        }
        let record = EpochRecord {
            epoch,
            loss_a: sa / n,
            loss_s: (cfg.theta_s > 0.0).then_some(ss / n),
            loss_l: sl / n,
            loss: st / n,
            val_macro_f1: val_f1,
            best: improved,
        };
        info!(
            "epoch {epoch}: loss {:.4} (a {:.4}, l {:.4}) val macro-F1 {:.2}",
            record.loss, record.loss_a, record.loss_l, val_f1
        );
        on_epoch(&record);
        log.push(record);
    }
    let (best_f1, best_epoch, store) = best.ok_or_else(|| Error::Config("epochs must be positive".into()))?;
    model.load_params(store)?;
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_macro_f1: best_f1,
    })
}

pub fn golds(docs: &[FactDocument]) -> Vec<BTreeSet<String>> {
    docs.iter().map(|d| d.labels.clone()).collect()
}

pub fn validation_f1(
    model: &Model,
    cache: &SectionCache,
    docs: &[FactDocument],
    lambda: (f64, f64),
    tau: f64,
) -> Result<f64> {
    let preds = model.predict(cache, docs, lambda, tau)?;
    let p: Vec<_> = preds.into_iter().map(|p| p.labels).collect();
    Ok(macro_prf(&p, &golds(docs), &model.hierarchy.section_ids())?.f1)
}

/// The default threshold grid 0.05, 0.10, …, 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// The grid value with the highest macro-F1 over `predictions` (smallest on ties).
pub fn tune_threshold(
    predictions: &[Prediction],
    golds: &[BTreeSet<String>],
    universe: &[String],
    grid: &[f64],
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("threshold grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], f64::NEG_INFINITY);
    for &tau in &sorted {
        let preds: Vec<BTreeSet<String>> = predictions
            .iter()
            .map(|p| crate::model::threshold(&p.combined, universe, tau))
            .collect();
        let f1 = macro_prf(&preds, golds, universe)?.f1;
        if f1 > best.1 {
            best = (tau, f1);
        }
    }
    Ok(best)
}
