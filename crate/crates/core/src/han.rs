//! Hierarchical attention text encoder shared by facts and sections.
//!
//! Words of every sentence run through a bidirectional GRU and are pooled by
//! additive attention into sentence vectors; sentences run through a second
//! bidirectional GRU and are pooled the same way into one document vector.
//! Padding never receives attention mass and never advances a recurrence.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TextGrid, Vocabulary};
use crate::error::{Error, Result};
use crate::layers::{uniform, BiGru, Linear};
use crate::tape::{Mat, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct Han {
    pub dim: usize,
    pub embedding: ParamId,
    word_rnn: BiGru,
    word_proj: Linear,
    word_ctx: ParamId,
    sent_rnn: BiGru,
    sent_proj: Linear,
    sent_ctx: ParamId,
}

/// Encoded documents plus the attention weights that produced them.
#[derive(Debug, Clone)]
pub struct HanOutput {
    /// `n_docs × dim`.
    pub docs: Var,
    /// `(n_docs · max_sents) × max_words`.
    pub word_attention: Mat,
    /// `n_docs × max_sents`.
    pub sentence_attention: Mat,
}

impl Han {
    /// `dim` must be even; each recurrence direction has `dim / 2` units.
    /// Embeddings come from the vocabulary's pretrained vectors when their
    /// dimension matches `emb_dim`, else uniform(−0.1, 0.1).
    pub fn new(
        store: &mut ParamStore,
        vocab: &Vocabulary,
        emb_dim: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(dim % 2 == 0, "attribute dimension must be even");
        let mut table = uniform(rng, vocab.len(), emb_dim, 0.1);
        if let Some(pre) = vocab.pretrained.as_ref().filter(|p| p.dim == emb_dim) {
            for (i, v) in pre.vectors.iter().enumerate() {
                if let Some(v) = v {
                    for (j, x) in v.iter().enumerate() {
                        table[[i, j]] = *x;
                    }
                }
            }
        }
        table.row_mut(0).fill(0.0);
        let embedding = store.add("han.embedding", table);
        let half = dim / 2;
        let word_rnn = BiGru::new(store, "han.word_rnn", emb_dim, half, rng);
        let word_proj = Linear::new(store, "han.word_proj", dim, dim, true, rng);
        let word_ctx = store.add("han.word_ctx", uniform(rng, dim, 1, 0.1));
        let sent_rnn = BiGru::new(store, "han.sent_rnn", dim, half, rng);
        let sent_proj = Linear::new(store, "han.sent_proj", dim, dim, true, rng);
        let sent_ctx = store.add("han.sent_ctx", uniform(rng, dim, 1, 0.1));
        Han {
            dim,
            embedding,
            word_rnn,
            word_proj,
            word_ctx,
            sent_rnn,
            sent_proj,
            sent_ctx,
        }
    }

    /// Encodes a batch of same-shape grids. `dropout` is `(p, rng)` during
    /// training and is applied to sentence vectors and document vectors.
    pub fn encode(
        &self,
        t: &mut Tape,
        grids: &[&TextGrid],
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<HanOutput> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Shape("no documents to encode".into()))?;
        let (max_sents, max_words) = (first.max_sents, first.max_words);
        if grids.iter().any(|g| g.max_sents != max_sents || g.max_words != max_words) {
            return Err(Error::Shape("grids in one batch must share a shape".into()));
        }
        if let Some(i) = grids.iter().position(|g| g.mask_sum() == 0) {
            return Err(Error::Shape(format!("document {i} is all padding")));
        }
        let n_docs = grids.len();
        let n_rows = n_docs * max_sents;

        let word_mask = Array2::from_shape_fn((n_rows, max_words), |(r, w)| {
            grids[r / max_sents].is_real(r % max_sents, w)
        });
        let emb = t.param(self.embedding);
        let mut inputs = Vec::with_capacity(max_words);
        let mut masks = Vec::with_capacity(max_words);
        for w in 0..max_words {
            let idx = (0..n_rows)
                .map(|r| grids[r / max_sents].id(r % max_sents, w))
                .collect();
            inputs.push(t.gather_rows(emb, idx));
            masks.push(Mat::from_shape_fn((n_rows, 1), |(r, _)| {
                f64::from(u8::from(word_mask[[r, w]]))
            }));
        }
        let word_states = self.word_rnn.run(t, &inputs, &masks);
        let (sentences, word_attention) =
            attend(t, &word_states, &self.word_proj, self.word_ctx, &word_mask);
        let sentences = apply_dropout(t, sentences, dropout.as_mut());

        let sent_mask = Array2::from_shape_fn((n_docs, max_sents), |(d, s)| {
            grids[d].sentence_len(s) > 0
        });
        let mut inputs = Vec::with_capacity(max_sents);
        let mut masks = Vec::with_capacity(max_sents);
        for s in 0..max_sents {
            let idx = (0..n_docs).map(|d| d * max_sents + s).collect();
            inputs.push(t.gather_rows(sentences, idx));
            masks.push(Mat::from_shape_fn((n_docs, 1), |(d, _)| {
                f64::from(u8::from(sent_mask[[d, s]]))
            }));
        }
        let sent_states = self.sent_rnn.run(t, &inputs, &masks);
        let (docs, sentence_attention) =
            attend(t, &sent_states, &self.sent_proj, self.sent_ctx, &sent_mask);
        let docs = apply_dropout(t, docs, dropout.as_mut());
        Ok(HanOutput {
            docs,
            word_attention,
            sentence_attention,
        })
    }
}

/// Additive attention over time steps:
/// `e_t = ctx · tanh(h_t W + b)`, masked softmax over `t`, weighted sum of `h_t`.
pub fn attend(
    t: &mut Tape,
    states: &[Var],
    proj: &Linear,
    ctx: ParamId,
    mask: &Array2<bool>,
) -> (Var, Mat) {
    let ctx = t.param(ctx);
    let scores: Vec<Var> = states
        .iter()
        .map(|&h| {
            let u = proj.forward(t, h);
            let u = t.tanh(u);
            t.matmul(u, ctx)
        })
        .collect();
    let scores = t.concat_cols(&scores);
    let alpha = t.softmax_rows(scores, Some(mask));
    let mut pooled = None;
    for (i, &h) in states.iter().enumerate() {
        let a = t.slice_cols(alpha, i, 1);
        let term = t.mul_col(h, a);
        pooled = Some(match pooled {
            None => term,
            Some(acc) => t.add(acc, term),
        });
    }
    let weights = t.value(alpha).clone();
    (pooled.expect("at least one step"), weights)
}

/// Inverted dropout: kept units are scaled by `1 / (1 − p)`.
fn apply_dropout(t: &mut Tape, x: Var, dropout: Option<&mut (f64, &mut ChaCha8Rng)>) -> Var {
    match dropout {
        Some((p, rng)) if *p > 0.0 => {
            let keep = 1.0 - *p;
            let shape = t.shape(x);
            let mask = Mat::from_shape_fn(shape, |_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            t.mul_const(x, mask)
        }
        _ => x,
    }
}
