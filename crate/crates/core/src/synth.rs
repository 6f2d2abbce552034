//! Seeded synthetic corpora: a small statute hierarchy whose sections own
//! keyword pools, and fact documents whose text mixes the keywords of their
//! cited sections with shared noise.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FactDocument, HierarchyNode, Statute, StatuteHierarchy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub n_sections: usize,
    pub seed: u64,
    pub sections_per_topic: usize,
    pub keywords_per_section: usize,
    pub topic_words: usize,
    pub noise_words: usize,
    /// Share of fact tokens drawn from cited sections' keywords.
    pub keyword_rate: f64,
    /// Chance that each additional citation stays in the first one's topic.
    pub same_topic: f64,
    /// Exponent of the power law over section popularity.
    pub skew: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_docs: 500,
            n_sections: 10,
            seed: 0,
            sections_per_topic: 3,
            keywords_per_section: 8,
            topic_words: 6,
            noise_words: 300,
            keyword_rate: 0.3,
            same_topic: 0.8,
            skew: 0.7,
        }
    }
}

const COURTS: [&str; 4] = ["SC", "HC-DEL", "HC-BOM", "HC-MAD"];
const SYLLABLES: [&str; 16] = [
    "ka", "ro", "mi", "ten", "sal", "vu", "dor", "pe", "lin", "gra", "zo", "bet", "qui", "han", "fel", "mu",
];

fn word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let n = rng.gen_range(2..=3);
        let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn sentence(rng: &mut ChaCha8Rng, pools: &[&[String]], noise: &[String], rate: f64, len: usize) -> Vec<String> {
    (0..len)
        .map(|_| {
            if !pools.is_empty() && rng.gen::<f64>() < rate {
                let pool = pools[rng.gen_range(0..pools.len())];
                pool.choose(rng).unwrap().clone()
            } else {
                // Zipf-like noise: low indices are common.
                let i = (rng.gen::<f64>().powi(2) * noise.len() as f64) as usize;
                noise[i.min(noise.len() - 1)].clone()
            }
        })
        .collect()
}

/// Generates a hierarchy and `n_docs` labeled facts, deterministic in the seed.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<(StatuteHierarchy, Vec<FactDocument>)> {
    if cfg.n_sections == 0 || cfg.n_docs == 0 || cfg.sections_per_topic == 0 {
        return Err(Error::Config("synthetic corpus needs documents and sections".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = BTreeSet::new();
    let noise: Vec<String> = (0..cfg.noise_words).map(|_| word(&mut rng, &mut used)).collect();

    let n_topics = cfg.n_sections.div_ceil(cfg.sections_per_topic);
    let chapters = vec![
        HierarchyNode { id: "CH1".into(), title: "Chapter one".into(), parent: "ACT".into() },
        HierarchyNode { id: "CH2".into(), title: "Chapter two".into(), parent: "ACT".into() },
    ];
    let topic_pools: Vec<Vec<String>> = (0..n_topics)
        .map(|_| (0..cfg.topic_words).map(|_| word(&mut rng, &mut used)).collect())
        .collect();
    let topics: Vec<HierarchyNode> = (0..n_topics)
        .map(|t| HierarchyNode {
            id: format!("T{}", t + 1),
            title: format!("Topic {}", t + 1),
            parent: if t < n_topics.div_ceil(2) { "CH1" } else { "CH2" }.into(),
        })
        .collect();
    let section_topic: Vec<usize> = (0..cfg.n_sections).map(|s| s / cfg.sections_per_topic).collect();
    let keywords: Vec<Vec<String>> = (0..cfg.n_sections)
        .map(|_| (0..cfg.keywords_per_section).map(|_| word(&mut rng, &mut used)).collect())
        .collect();
    let sections: Vec<Statute> = (0..cfg.n_sections)
        .map(|s| {
            let t = section_topic[s];
            let pools: [&[String]; 2] = [&keywords[s], &topic_pools[t]];
            let sentences = (0..3)
                .map(|_| sentence(&mut rng, &pools, &noise, 0.7, 10))
                .collect();
            Statute {
                id: format!("S{}", s + 1),
                title: format!("Section {}", s + 1),
                sentences,
                parent_topic: topics[t].id.clone(),
            }
        })
        .collect();
    let hierarchy = StatuteHierarchy::new("ACT".into(), chapters, topics, sections)?;

    let mut popularity: Vec<f64> = (0..cfg.n_sections)
        .map(|r| 1.0 / ((r + 1) as f64).powf(cfg.skew))
        .collect();
    popularity.shuffle(&mut rng);
    let global = WeightedIndex::new(&popularity).expect("positive weights");
    let count_dist = WeightedIndex::new([0.15, 0.35, 0.35, 0.15]).unwrap();

    let docs = (0..cfg.n_docs)
        .map(|i| {
            let want = (count_dist.sample(&mut rng) + 1).min(cfg.n_sections);
            let first = global.sample(&mut rng);
            let mut labels = vec![first];
            let mut guard = 0;
            while labels.len() < want && guard < 1000 {
                guard += 1;
                let mates: Vec<usize> = (0..cfg.n_sections)
                    .filter(|&s| section_topic[s] == section_topic[first] && !labels.contains(&s))
                    .collect();
                let pick = if !mates.is_empty() && rng.gen::<f64>() < cfg.same_topic {
                    let w: Vec<f64> = mates.iter().map(|&s| popularity[s]).collect();
                    mates[WeightedIndex::new(&w).unwrap().sample(&mut rng)]
                } else {
                    global.sample(&mut rng)
                };
                if !labels.contains(&pick) {
                    labels.push(pick);
                }
            }
            let pools: Vec<&[String]> = labels.iter().map(|&s| keywords[s].as_slice()).collect();
            let n_sents = rng.gen_range(3..=8);
            let sentences = (0..n_sents)
                .map(|_| {
                    let len = rng.gen_range(6..=14);
                    sentence(&mut rng, &pools, &noise, cfg.keyword_rate, len)
                })
                .collect();
            FactDocument {
                id: format!("F{:05}", i + 1),
                court: COURTS.choose(&mut rng).unwrap().to_string(),
                sentences,
                labels: labels.iter().map(|&s| format!("S{}", s + 1)).collect(),
            }
        })
        .collect();
    Ok((hierarchy, docs))
}
