//! Multi-label metrics: macro precision/recall/F1 from per-label counts,
//! document-level Jaccard, and breakdowns by label frequency and by court.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl LabelCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Macro metrics as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn check_lengths<A, B>(preds: &[A], golds: &[B]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold label sets",
            preds.len(),
            golds.len()
        )));
    }
    Ok(())
}

/// Per-label counts over the whole collection.
pub fn label_counts(
    preds: &[BTreeSet<String>],
    golds: &[BTreeSet<String>],
    universe: &[String],
) -> Result<Vec<LabelCounts>> {
    check_lengths(preds, golds)?;
    if universe.is_empty() {
        return Err(Error::EmptyInput("label universe".into()));
    }
    let pos: BTreeMap<&str, usize> = universe.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut counts = vec![LabelCounts::default(); universe.len()];
    for (p, g) in preds.iter().zip(golds) {
        for l in p {
            if let Some(&i) = pos.get(l.as_str()) {
                if g.contains(l) {
                    counts[i].tp += 1;
                } else {
                    counts[i].fp += 1;
                }
            }
        }
        for l in g.difference(p) {
            if let Some(&i) = pos.get(l.as_str()) {
                counts[i].fn_ += 1;
            }
        }
    }
    Ok(counts)
}

/// Unweighted means over the universe of per-label P, R and F1, in percent.
pub fn macro_prf(
    preds: &[BTreeSet<String>],
    golds: &[BTreeSet<String>],
    universe: &[String],
) -> Result<MacroScores> {
    let counts = label_counts(preds, golds, universe)?;
    Ok(macro_from_counts(&counts))
}

fn macro_from_counts(counts: &[LabelCounts]) -> MacroScores {
    let n = counts.len() as f64;
    MacroScores {
        precision: 100.0 * counts.iter().map(LabelCounts::precision).sum::<f64>() / n,
        recall: 100.0 * counts.iter().map(LabelCounts::recall).sum::<f64>() / n,
        f1: 100.0 * counts.iter().map(LabelCounts::f1).sum::<f64>() / n,
    }
}

/// Mean per-document `|p ∩ g| / |p ∪ g|` in percent; an empty union scores 1.
pub fn mean_jaccard(preds: &[BTreeSet<String>], golds: &[BTreeSet<String>]) -> Result<f64> {
    check_lengths(preds, golds)?;
    if preds.is_empty() {
        return Err(Error::EmptyInput("document list".into()));
    }
    let total: f64 = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| {
            let union = p.union(g).count();
            if union == 0 {
                1.0
            } else {
                p.intersection(g).count() as f64 / union as f64
            }
        })
        .sum();
    Ok(100.0 * total / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGroup {
    pub labels: Vec<String>,
    pub macro_f1: f64,
}

/// Sorts labels by descending `freqs` (ties by universe order) and reports the
/// macro-F1 of `groups` consecutive, near-equal slices.
pub fn frequency_group_report(per_label: &[LabelMetrics], freqs: &[usize], groups: usize) -> Vec<FrequencyGroup> {
    assert_eq!(per_label.len(), freqs.len());
    let mut order: Vec<usize> = (0..per_label.len()).collect();
    order.sort_by(|&a, &b| freqs[b].cmp(&freqs[a]).then(a.cmp(&b)));
    let n = order.len();
    (0..groups)
        .map(|g| {
            let (lo, hi) = (g * n / groups, (g + 1) * n / groups);
            let slice = &order[lo..hi];
            let f1 = if slice.is_empty() {
                0.0
            } else {
                slice.iter().map(|&i| per_label[i].f1).sum::<f64>() / slice.len() as f64
            };
            FrequencyGroup {
                labels: slice.iter().map(|&i| per_label[i].label.clone()).collect(),
                macro_f1: f1,
            }
        })
        .collect()
}

/// Macro-F1 within each court's documents; courts with no documents are absent.
pub fn per_court_report(
    preds: &[BTreeSet<String>],
    golds: &[BTreeSet<String>],
    courts: &[String],
    universe: &[String],
) -> Result<BTreeMap<String, f64>> {
    check_lengths(preds, golds)?;
    check_lengths(preds, courts)?;
    let mut parts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in courts.iter().enumerate() {
        parts.entry(c.as_str()).or_default().push(i);
    }
    parts
        .into_iter()
        .map(|(court, idx)| {
            let p: Vec<_> = idx.iter().map(|&i| preds[i].clone()).collect();
            let g: Vec<_> = idx.iter().map(|&i| golds[i].clone()).collect();
            Ok((court.to_string(), macro_prf(&p, &g, universe)?.f1))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_docs: usize,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub jaccard: f64,
    pub per_label: Vec<LabelMetrics>,
    pub frequency_groups: Vec<FrequencyGroup>,
    pub per_court: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn new(
        preds: &[BTreeSet<String>],
        golds: &[BTreeSet<String>],
        courts: &[String],
        universe: &[String],
    ) -> Result<Self> {
        let counts = label_counts(preds, golds, universe)?;
        let macro_ = macro_from_counts(&counts);
        let per_label: Vec<LabelMetrics> = universe
            .iter()
            .zip(&counts)
            .map(|(l, c)| LabelMetrics {
                label: l.clone(),
                precision: 100.0 * c.precision(),
                recall: 100.0 * c.recall(),
                f1: 100.0 * c.f1(),
                support: c.tp + c.fn_,
            })
            .collect();
        let freqs: Vec<usize> = per_label.iter().map(|m| m.support).collect();
        Ok(EvalReport {
            num_docs: preds.len(),
            macro_p: macro_.precision,
            macro_r: macro_.recall,
            macro_f1: macro_.f1,
            jaccard: mean_jaccard(preds, golds)?,
            frequency_groups: frequency_group_report(&per_label, &freqs, 4),
            per_court: per_court_report(preds, golds, courts, universe)?,
            per_label,
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "documents  {}", self.num_docs);
        let _ = writeln!(s, "macro-P    {:6.2}", self.macro_p);
        let _ = writeln!(s, "macro-R    {:6.2}", self.macro_r);
        let _ = writeln!(s, "macro-F1   {:6.2}", self.macro_f1);
        let _ = writeln!(s, "Jaccard    {:6.2}", self.jaccard);
        let _ = writeln!(s, "\n{:<16} {:>7} {:>7} {:>7} {:>7}", "label", "P", "R", "F1", "support");
        for m in &self.per_label {
            let _ = writeln!(
                s,
                "{:<16} {:7.2} {:7.2} {:7.2} {:7}",
                m.label, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(s, "\nfrequency group  macro-F1");
        for (i, g) in self.frequency_groups.iter().enumerate() {
            let _ = writeln!(s, "{:<16} {:8.2}", format!("G{} ({})", i + 1, g.labels.len()), g.macro_f1);
        }
        let _ = writeln!(s, "\ncourt            macro-F1");
        for (c, f) in &self.per_court {
            let _ = writeln!(s, "{c:<16} {f:8.2}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn uni(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_and_half_recall() {
        let g = vec![set(&["a"]), set(&["a", "b"])];
        let m = macro_prf(&g, &g, &uni(&["a", "b"])).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (100.0, 100.0, 100.0));
        let p = vec![set(&["a"]), set(&["a"])];
        let m = macro_prf(&p, &g, &uni(&["a", "b"])).unwrap();
        assert_eq!(m.recall, 50.0);
    }

    #[test]
    fn macro_f1_is_mean_of_label_f1() {
        let g = vec![set(&["a"]), set(&["a"]), set(&["b"])];
        let p = vec![set(&["a", "b"]), set(&[]), set(&["b"])];
        let m = macro_prf(&p, &g, &uni(&["a", "b"])).unwrap();
        let harmonic = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        assert!((m.f1 - harmonic).abs() > 1e-6);
        assert!((m.f1 - 100.0 * (2.0 / 3.0 + 2.0 / 3.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn jaccard_conventions() {
        assert_eq!(mean_jaccard(&[set(&["201", "302"])], &[set(&["201", "302"])]).unwrap(), 100.0);
        assert_eq!(mean_jaccard(&[set(&["302"])], &[set(&["201", "302"])]).unwrap(), 50.0);
        assert_eq!(mean_jaccard(&[set(&[])], &[set(&[])]).unwrap(), 100.0);
    }

    #[test]
    fn empty_universe_and_length_mismatch() {
        assert!(macro_prf(&[set(&["a"])], &[set(&["a"])], &[]).is_err());
        assert!(macro_prf(&[set(&["a"])], &[], &uni(&["a"])).is_err());
    }

    #[test]
    fn groups_and_courts() {
        let per_label: Vec<LabelMetrics> = (0..100)
            .map(|i| LabelMetrics {
                label: i.to_string(),
                precision: 0.0,
                recall: 0.0,
                f1: 40.0,
                support: i,
            })
            .collect();
        let freqs: Vec<usize> = (0..100).collect();
        let groups = frequency_group_report(&per_label, &freqs, 4);
        assert!(groups.iter().all(|g| g.labels.len() == 25 && g.macro_f1 == 40.0));
        assert_eq!(groups[0].labels[0], "99");

        let g = vec![set(&["a"]), set(&["b"])];
        let p = vec![set(&["a"]), set(&["a"])];
        let courts = uni(&["x", "x"]);
        let u = uni(&["a", "b"]);
        let r = per_court_report(&p, &g, &courts, &u).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r["x"] - macro_prf(&p, &g, &u).unwrap().f1).abs() < 1e-12);
    }
}
