//! Shared match scorer: contextualize section embeddings in hierarchy order,
//! pool them with fact-conditioned attention, and score every section from
//! `[h_f ‖ h_S]`.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{BiLstm, ContextVector, Linear};
use crate::tape::{Mat, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct Scorer {
    pub dim: usize,
    pub num_sections: usize,
    lstm: BiLstm,
    project: Linear,
    attn: Linear,
    context: ContextVector,
    classifier: Linear,
}

/// Per-fact section probabilities, each `n_facts × |S|`.
#[derive(Debug, Clone)]
pub struct ScoreTriple {
    pub attribute: Var,
    pub structural: Option<Var>,
    pub alignment: Var,
}

impl ScoreTriple {
    pub fn structural(&self) -> Result<Var> {
        self.structural.ok_or(Error::MissingStructural)
    }
}

impl Scorer {
    pub fn new(
        store: &mut ParamStore,
        dim: usize,
        attn_dim: usize,
        num_sections: usize,
        dynamic: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Scorer {
            dim,
            num_sections,
            lstm: BiLstm::new(store, "scorer.lstm", dim, dim, rng),
            project: Linear::new(store, "scorer.project", 2 * dim, dim, true, rng),
            attn: Linear::new(store, "scorer.attn", dim, attn_dim, true, rng),
            context: ContextVector::new(store, "scorer.context", dynamic, dim, attn_dim, rng),
            classifier: Linear::new(store, "scorer.classifier", 2 * dim, num_sections, true, rng),
        }
    }

    /// `|S| × d′` in hierarchy order → `|S| × d′` contextualized.
    pub fn contextualize_sections(&self, t: &mut Tape, sections: Var) -> Var {
        let h = self.lstm.run(t, sections);
        self.project.forward(t, h)
    }

    /// Attention context `w_S` per fact, `n × d_s`, from fact attribute embeddings.
    pub fn dynamic_context(&self, t: &mut Tape, facts_attr: Var) -> Var {
        let n = t.shape(facts_attr).0;
        self.context
            .rows(t, Some(facts_attr), n)
            .expect("attribute embeddings supplied")
    }

    /// `h_S = Σ_s γ_s h̃_s`, `γ = softmax_s(w_S · tanh(h̃_s M_S + b_S))`, one
    /// row per row of `w` (`n × d_s`). Returns `n × d′` and the `n × |S|` weights.
    pub fn pool_sections(&self, t: &mut Tape, contextualized: Var, w: Var) -> (Var, Mat) {
        let u = self.attn.forward(t, contextualized);
        let u = t.tanh(u);
        let ut = t.transpose(u);
        let e = t.matmul(w, ut);
        let gamma = t.softmax_rows(e, None);
        debug_assert!(t
            .value(gamma)
            .rows()
            .into_iter()
            .all(|r| (r.sum() - 1.0).abs() < 1e-9));
        let weights = t.value(gamma).clone();
        (t.matmul(gamma, contextualized), weights)
    }

    /// `σ([h_f ‖ h_S] W_C + b_C)`, `n × |S|`.
    pub fn score(&self, t: &mut Tape, facts: Var, pooled: Var) -> Var {
        let x = t.concat_cols(&[facts, pooled]);
        let z = self.classifier.forward(t, x);
        t.sigmoid(z)
    }

    /// The full scoring function for one pairing of fact and section embeddings.
    pub fn match_score(&self, t: &mut Tape, facts: Var, sections: Var, w: Var) -> Var {
        let ctx = self.contextualize_sections(t, sections);
        let (pooled, _) = self.pool_sections(t, ctx, w);
        self.score(t, facts, pooled)
    }

    /// Attribute, structural (when `fact_struct` is given) and alignment scores.
    /// `w_S` is derived from the fact attribute embeddings for all three.
    pub fn score_triple(
        &self,
        t: &mut Tape,
        fact_attr: Var,
        fact_struct: Option<Var>,
        section_attr: Var,
        section_struct: Var,
    ) -> ScoreTriple {
        let w = self.dynamic_context(t, fact_attr);
        let attribute = self.match_score(t, fact_attr, section_attr, w);
        let alignment = self.match_score(t, fact_attr, section_struct, w);
        let structural = fact_struct.map(|fs| self.match_score(t, fs, section_struct, w));
        ScoreTriple {
            attribute,
            structural,
            alignment,
        }
    }
}

/// `λ_a o^(a) + λ_l o^(l)` elementwise.
pub fn combine_scores(attribute: &Array2<f64>, alignment: &Array2<f64>, lambda: (f64, f64)) -> Array2<f64> {
    attribute * lambda.0 + alignment * lambda.1
}
