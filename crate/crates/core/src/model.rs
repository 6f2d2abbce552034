//! The assembled model: text encoder, structural encoder and shared scorer
//! over one statute hierarchy and one training citation graph.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_text, FactDocument, StatuteHierarchy, TextGrid, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::{default_schemas, HeteroGraph, MetapathSampler, NodeIdx, NodeType};
use crate::han::Han;
use crate::scorer::{combine_scores, ScoreTriple, Scorer};
use crate::structural::{LookupEncoder, MetapathEncoder, StructuralDims, StructuralEncoder};
use crate::tape::{Mat, ParamStore, Tape, Var};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Metapath,
    Lookup,
}

/// Architecture sizes and switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Word embedding width.
    pub emb_dim: usize,
    /// Shared embedding width `d′`; must be even.
    pub dim: usize,
    /// Node feature width `d_A`.
    pub feature_dim: usize,
    /// Inter-metapath summary width `d_m`.
    pub summary_dim: usize,
    /// Section-pooling attention width `d_s`.
    pub attn_dim: usize,
    pub fact_max_sents: usize,
    pub fact_max_words: usize,
    pub section_max_sents: usize,
    pub section_max_words: usize,
    pub dropout: f64,
    pub dynamic_context: bool,
    pub encoder: EncoderKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            emb_dim: 200,
            dim: 200,
            feature_dim: 200,
            summary_dim: 200,
            attn_dim: 200,
            fact_max_sents: 64,
            fact_max_words: 64,
            section_max_sents: 32,
            section_max_words: 64,
            dropout: 0.5,
            dynamic_context: true,
            encoder: EncoderKind::Metapath,
        }
    }
}

impl ModelConfig {
    /// Small sizes for CPU runs on synthetic corpora.
    pub fn desk_scale() -> Self {
        ModelConfig {
            emb_dim: 32,
            dim: 32,
            feature_dim: 32,
            summary_dim: 32,
            attn_dim: 32,
            fact_max_sents: 8,
            fact_max_words: 16,
            section_max_sents: 4,
            section_max_words: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.emb_dim,
            self.dim,
            self.feature_dim,
            self.summary_dim,
            self.attn_dim,
            self.fact_max_sents,
            self.fact_max_words,
            self.section_max_sents,
            self.section_max_words,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.dim % 2 != 0 {
            return Err(Error::Config(format!("dim must be even, got {}", self.dim)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Embeddings of one forward pass over a batch of facts.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub fact_attr: Var,
    pub fact_struct: Option<Var>,
    pub section_attr: Var,
    pub section_struct: Var,
    pub scores: ScoreTriple,
}

/// Options of a training-mode forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TrainPass {
    pub k: usize,
    pub seed: u64,
    pub with_fact_structure: bool,
    pub exclude_batch_facts: bool,
}

/// Section-side values cached for inference.
#[derive(Debug, Clone)]
pub struct SectionCache {
    pub attr: Mat,
    pub structural: Mat,
    pub attr_context: Mat,
    pub struct_context: Mat,
}

/// Scores of one fact at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub labels: BTreeSet<String>,
    pub combined: Vec<f64>,
    pub attribute: Vec<f64>,
    pub alignment: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub han: Han,
    pub structural: StructuralEncoder,
    pub scorer: Scorer,
    pub vocab: Vocabulary,
    pub hierarchy: StatuteHierarchy,
    pub graph: HeteroGraph,
    sampler: MetapathSampler,
    section_grids: Vec<TextGrid>,
}

impl Model {
    /// Initializes all parameters from `seed`.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        hierarchy: StatuteHierarchy,
        graph: HeteroGraph,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if graph.count(NodeType::Section) != hierarchy.num_sections() {
            return Err(Error::Config("graph and hierarchy disagree on sections".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let schemas = default_schemas();
        let han = Han::new(&mut store, &vocab, config.emb_dim, config.dim, &mut rng);
        let structural = match config.encoder {
            EncoderKind::Metapath => StructuralEncoder::Metapath(MetapathEncoder::new(
                &mut store,
                &graph,
                &schemas,
                StructuralDims {
                    feature: config.feature_dim,
                    dim: config.dim,
                    summary: config.summary_dim,
                },
                config.dynamic_context,
                &mut rng,
            )),
            EncoderKind::Lookup => {
                StructuralEncoder::Lookup(LookupEncoder::new(&mut store, &graph, config.dim, &mut rng))
            }
        };
        let scorer = Scorer::new(
            &mut store,
            config.dim,
            config.attn_dim,
            hierarchy.num_sections(),
            config.dynamic_context,
            &mut rng,
        );
        let sampler = MetapathSampler::new(&graph, &schemas);
        let section_grids = hierarchy
            .sections
            .iter()
            .map(|s| encode_text(s, &vocab, config.section_max_sents, config.section_max_words))
            .collect();
        Ok(Model {
            config,
            store,
            han,
            structural,
            scorer,
            vocab,
            hierarchy,
            graph,
            sampler,
            section_grids,
        })
    }

    pub fn num_sections(&self) -> usize {
        self.hierarchy.num_sections()
    }

    pub fn section_nodes(&self) -> &[NodeIdx] {
        self.graph.nodes_of(NodeType::Section)
    }

    pub fn sampler(&self) -> &MetapathSampler {
        &self.sampler
    }

    pub fn fact_grid(&self, doc: &FactDocument) -> TextGrid {
        encode_text(doc, &self.vocab, self.config.fact_max_sents, self.config.fact_max_words)
    }

    /// Multi-hot targets in section order, `n × |S|`.
    pub fn targets(&self, docs: &[&FactDocument]) -> Mat {
        let mut y = Mat::zeros((docs.len(), self.num_sections()));
        for (i, d) in docs.iter().enumerate() {
            for (j, v) in self.hierarchy.label_vector(&d.labels).into_iter().enumerate() {
                y[[i, j]] = v;
            }
        }
        y
    }

    /// Training-mode forward pass over `docs`, which must all be graph facts.
    pub fn forward_train(
        &self,
        t: &mut Tape,
        docs: &[&FactDocument],
        pass: TrainPass,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass> {
        let fact_nodes: Vec<NodeIdx> = docs
            .iter()
            .map(|d| self.graph.node(NodeType::Fact, &d.id))
            .collect::<Result<_>>()?;
        let grids: Vec<TextGrid> = docs.iter().map(|d| self.fact_grid(d)).collect();
        let grid_refs: Vec<&TextGrid> = grids.iter().collect();
        let section_refs: Vec<&TextGrid> = self.section_grids.iter().collect();
        let p = self.config.dropout;
        let (fact_attr, section_attr) = match dropout_rng {
            Some(rng) => {
                let f = self.han.encode(t, &grid_refs, Some((p, &mut *rng)))?.docs;
                let s = self.han.encode(t, &section_refs, Some((p, rng)))?.docs;
                (f, s)
            }
            None => (
                self.han.encode(t, &grid_refs, None)?.docs,
                self.han.encode(t, &section_refs, None)?.docs,
            ),
        };
        let exclude: Option<HashSet<NodeIdx>> =
            pass.exclude_batch_facts.then(|| fact_nodes.iter().copied().collect());
        let section_struct = self.structural.encode(
            t,
            &self.graph,
            &self.sampler,
            NodeType::Section,
            self.section_nodes(),
            Some(section_attr),
            pass.k,
            pass.seed,
            exclude.as_ref(),
        )?;
        let fact_struct = if pass.with_fact_structure {
            Some(self.structural.encode(
                t,
                &self.graph,
                &self.sampler,
                NodeType::Fact,
                &fact_nodes,
                Some(fact_attr),
                pass.k,
                pass.seed,
                exclude.as_ref(),
            )?)
        } else {
            None
        };
        let scores = self
            .scorer
            .score_triple(t, fact_attr, fact_struct, section_attr, section_struct);
        Ok(ForwardPass {
            fact_attr,
            fact_struct,
            section_attr,
            section_struct,
            scores,
        })
    }

    /// Section embeddings and their contextualizations for inference, sampled
    /// with `k` instances per schema under `seed`. Touches only hierarchy and
    /// training-fact nodes.
    pub fn section_cache(&self, k: usize, seed: u64) -> Result<SectionCache> {
        let mut t = Tape::new(&self.store);
        let refs: Vec<&TextGrid> = self.section_grids.iter().collect();
        let attr = self.han.encode(&mut t, &refs, None)?.docs;
        let structural = self.structural.encode(
            &mut t,
            &self.graph,
            &self.sampler,
            NodeType::Section,
            self.section_nodes(),
            Some(attr),
            k,
            seed,
            None,
        )?;
        let ca = self.scorer.contextualize_sections(&mut t, attr);
        let cs = self.scorer.contextualize_sections(&mut t, structural);
        Ok(SectionCache {
            attr: t.value(attr).clone(),
            structural: t.value(structural).clone(),
            attr_context: t.value(ca).clone(),
            struct_context: t.value(cs).clone(),
        })
    }

    /// Attribute and alignment scores for one unseen fact. Never consults
    /// the graph, so the fact need not (and at test time does not) exist in it.
    pub fn score_fact(&self, cache: &SectionCache, doc: &FactDocument) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut t = Tape::new(&self.store);
        let grid = self.fact_grid(doc);
        let fa = self.han.encode(&mut t, &[&grid], None)?.docs;
        let w = self.scorer.dynamic_context(&mut t, fa);
        let ca = t.constant(cache.attr_context.clone());
        let cs = t.constant(cache.struct_context.clone());
        let (pa, _) = self.scorer.pool_sections(&mut t, ca, w);
        let oa = self.scorer.score(&mut t, fa, pa);
        let (pl, _) = self.scorer.pool_sections(&mut t, cs, w);
        let ol = self.scorer.score(&mut t, fa, pl);
        Ok((t.value(oa).row(0).to_vec(), t.value(ol).row(0).to_vec()))
    }

    /// Thresholded `λ_a o^(a) + λ_l o^(l)` for each document.
    pub fn predict(
        &self,
        cache: &SectionCache,
        docs: &[FactDocument],
        lambda: (f64, f64),
        tau: f64,
    ) -> Result<Vec<Prediction>> {
        let ids = self.hierarchy.section_ids();
        docs.iter()
            .map(|d| {
                let (a, l) = self.score_fact(cache, d)?;
                let am = Array2::from_shape_vec((1, a.len()), a.clone()).unwrap();
                let lm = Array2::from_shape_vec((1, l.len()), l.clone()).unwrap();
                let combined = combine_scores(&am, &lm, lambda).row(0).to_vec();
                let labels = threshold(&combined, &ids, tau);
                Ok(Prediction {
                    id: d.id.clone(),
                    labels,
                    combined,
                    attribute: a,
                    alignment: l,
                })
            })
            .collect()
    }

    /// Replaces parameters with `store`, which must match names and shapes.
    pub fn load_params(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                store.len(),
                self.store.len()
            )));
        }
        for id in self.store.ids() {
            if store.name(id) != self.store.name(id) || store.get(id).dim() != self.store.get(id).dim() {
                return Err(Error::Config(format!(
                    "checkpoint tensor `{}` does not match the model",
                    store.name(id)
                )));
            }
        }
        let mut store = store;
        store.rebuild_index();
        self.store = store;
        Ok(())
    }
}

/// Sections whose combined score reaches `tau`.
pub fn threshold(combined: &[f64], ids: &[String], tau: f64) -> BTreeSet<String> {
    combined
        .iter()
        .zip(ids)
        .filter(|(s, _)| **s >= tau)
        .map(|(_, id)| id.clone())
        .collect()
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub training: serde_json::Value,
    pub init_seed: u64,
    pub params: ParamStore,
    pub vocab: Vocabulary,
    pub hierarchy: StatuteHierarchy,
    pub graph: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: &Model, training: serde_json::Value, init_seed: u64) -> Result<Self> {
        Ok(Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: model.config.clone(),
            training,
            init_seed,
            params: model.store.clone(),
            vocab: model.vocab.clone(),
            hierarchy: model.hierarchy.clone(),
            graph: serde_json::from_str(&model.graph.to_json()?)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn into_model(self) -> Result<Model> {
        let mut vocab = self.vocab;
        vocab.rebuild_index();
        let mut hierarchy = self.hierarchy;
        hierarchy.rebuild_index();
        let graph = HeteroGraph::from_json(&self.graph.to_string())?;
        let mut model = Model::new(self.model, vocab, hierarchy, graph, self.init_seed)?;
        model.load_params(self.params)?;
        Ok(model)
    }
}
