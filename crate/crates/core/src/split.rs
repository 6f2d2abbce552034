//! Iterative stratification for multi-label corpora.
//!
//! Labels are processed rarest-first. Every remaining document carrying the
//! current label goes to the fold with the largest outstanding demand for
//! that label; ties fall back to the largest outstanding fold capacity, then
//! to a seeded uniform choice.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::FactDocument;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.64, 0.16, 0.20],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        let spec = SplitSpec { ratios, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!(
                "split ratios must be non-negative, got {:?}",
                self.ratios
            )));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Integer fold sizes summing exactly to `n` (largest-remainder rounding).
pub fn fold_targets(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Assigns each label set to a fold; returns the fold index per input.
pub fn stratify<L: Ord + Clone>(label_sets: &[BTreeSet<L>], spec: &SplitSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    if label_sets.is_empty() {
        return Err(Error::EmptyInput("corpus to split".into()));
    }
    if let Some(i) = label_sets.iter().position(BTreeSet::is_empty) {
        return Err(Error::Config(format!(
            "document {i} has no labels; stratification needs at least one"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let labels: Vec<L> = label_sets
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let label_id: BTreeMap<&L, usize> = labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let doc_labels: Vec<Vec<usize>> = label_sets
        .iter()
        .map(|s| s.iter().map(|l| label_id[l]).collect())
        .collect();

    let mut docs_with: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for (d, ls) in doc_labels.iter().enumerate() {
        for &l in ls {
            docs_with[l].push(d);
        }
    }

    let mut capacity: Vec<f64> = fold_targets(label_sets.len(), &spec.ratios)
        .into_iter()
        .map(|s| s as f64)
        .collect();
    let mut demand: Vec<Vec<f64>> = docs_with
        .iter()
        .map(|ds| spec.ratios.iter().map(|r| r * ds.len() as f64).collect())
        .collect();
    let mut remaining: Vec<usize> = docs_with.iter().map(Vec::len).collect();
    let mut assignment: Vec<Option<usize>> = vec![None; label_sets.len()];
    let mut unassigned = label_sets.len();

    while unassigned > 0 {
        let label = (0..labels.len())
            .filter(|&l| remaining[l] > 0)
            .min_by_key(|&l| (remaining[l], l))
            .expect("unassigned documents imply a label with remaining documents");
        for &d in &docs_with[label] {
            if assignment[d].is_some() {
                continue;
            }
            let fold = choose_fold(&demand[label], &capacity, &mut rng);
            assignment[d] = Some(fold);
            unassigned -= 1;
            capacity[fold] -= 1.0;
            for &l in &doc_labels[d] {
                demand[l][fold] -= 1.0;
                remaining[l] -= 1;
            }
        }
    }
    Ok(assignment.into_iter().map(Option::unwrap).collect())
}

fn choose_fold(demand: &[f64], capacity: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let max_demand = demand.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let by_demand: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] == max_demand).collect();
    if by_demand.len() == 1 {
        return by_demand[0];
    }
    let max_cap = by_demand
        .iter()
        .map(|&j| capacity[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let by_cap: Vec<usize> = by_demand
        .into_iter()
        .filter(|&j| capacity[j] == max_cap)
        .collect();
    if by_cap.len() == 1 {
        by_cap[0]
    } else {
        by_cap[rng.gen_range(0..by_cap.len())]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<FactDocument>,
    pub validation: Vec<FactDocument>,
    pub test: Vec<FactDocument>,
}

impl Split {
    pub fn folds(&self) -> [&[FactDocument]; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

/// Splits documents into train/validation/test, preserving input order within folds.
pub fn iterative_stratified_split(docs: &[FactDocument], spec: &SplitSpec) -> Result<Split> {
    let sets: Vec<BTreeSet<String>> = docs.iter().map(|d| d.labels.clone()).collect();
    let assignment = stratify(&sets, spec)?;
    let mut folds: [Vec<FactDocument>; 3] = Default::default();
    for (d, f) in docs.iter().zip(assignment) {
        folds[f].push(d.clone());
    }
    let [train, validation, test] = folds;
    Ok(Split {
        train,
        validation,
        test,
    })
}

/// Per-label share of documents in each fold versus the whole corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitReport {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub fold_sizes: [usize; 3],
    pub fold_targets: [usize; 3],
    pub labels: BTreeMap<String, LabelProportions>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelProportions {
    pub count: usize,
    pub global: f64,
    pub folds: [f64; 3],
}

impl SplitReport {
    pub fn new(split: &Split, spec: &SplitSpec) -> Self {
        let folds = split.folds();
        let n: usize = folds.iter().map(|f| f.len()).sum();
        let targets = fold_targets(n, &spec.ratios);
        let mut labels: BTreeMap<String, LabelProportions> = BTreeMap::new();
        for (j, fold) in folds.iter().enumerate() {
            for d in fold.iter() {
                for l in &d.labels {
                    let e = labels.entry(l.clone()).or_insert(LabelProportions {
                        count: 0,
                        global: 0.0,
                        folds: [0.0; 3],
                    });
                    e.count += 1;
                    e.folds[j] += 1.0;
                }
            }
        }
        for e in labels.values_mut() {
            e.global = e.count as f64 / n as f64;
            for j in 0..3 {
                let len = folds[j].len();
                e.folds[j] = if len == 0 { 0.0 } else { e.folds[j] / len as f64 };
            }
        }
        SplitReport {
            seed: spec.seed,
            ratios: spec.ratios,
            fold_sizes: [folds[0].len(), folds[1].len(), folds[2].len()],
            fold_targets: [targets[0], targets[1], targets[2]],
            labels,
        }
    }

    /// Largest |fold share − global share| over labels with at least `min_count` documents,
    /// ignoring empty folds.
    pub fn max_deviation(&self, min_count: usize) -> f64 {
        self.labels
            .values()
            .filter(|p| p.count >= min_count)
            .flat_map(|p| {
                (0..3)
                    .filter(|&j| self.fold_sizes[j] > 0)
                    .map(move |j| (p.folds[j] - p.global).abs())
            })
            .fold(0.0, f64::max)
    }
}
