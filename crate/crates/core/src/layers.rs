//! Dense, GRU and LSTM building blocks on the tape.
//!
//! Weights are stored input-major (`in × out`) so a batch of row vectors is
//! transformed with a single `x · W`.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{Mat, ParamId, ParamStore, Tape, Var};

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound))
}

/// Glorot-uniform bound for a `fan_in × fan_out` matrix.
pub fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, input, output, glorot(input, output)),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Mat::zeros((1, output))));
        Linear { weight, bias }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.weight);
        let y = t.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = t.param(b);
                t.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Gated recurrent unit:
/// `r = σ(x W_r + h U_r + b_r)`, `z = σ(x W_z + h U_z + b_z)`,
/// `n = tanh(x W_n + b_n + r ⊙ (h U_n + c_n))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub hidden: usize,
    w: ParamId,
    u: ParamId,
    b: ParamId,
    c: ParamId,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruCell {
            hidden,
            w: store.add(format!("{name}.w"), uniform(rng, input, 3 * hidden, bound)),
            u: store.add(format!("{name}.u"), uniform(rng, hidden, 3 * hidden, bound)),
            b: store.add(format!("{name}.b"), uniform(rng, 1, 3 * hidden, bound)),
            c: store.add(format!("{name}.c"), uniform(rng, 1, 3 * hidden, bound)),
        }
    }

    pub fn step(&self, t: &mut Tape, x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let (w, u, b, c) = (t.param(self.w), t.param(self.u), t.param(self.b), t.param(self.c));
        let gx = t.matmul(x, w);
        let gx = t.add_row(gx, b);
        let gh = t.matmul(h, u);
        let gh = t.add_row(gh, c);

        let xr = t.slice_cols(gx, 0, hd);
        let hr = t.slice_cols(gh, 0, hd);
        let r = t.add(xr, hr);
        let r = t.sigmoid(r);

        let xz = t.slice_cols(gx, hd, hd);
        let hz = t.slice_cols(gh, hd, hd);
        let z = t.add(xz, hz);
        let z = t.sigmoid(z);

        let xn = t.slice_cols(gx, 2 * hd, hd);
        let hn = t.slice_cols(gh, 2 * hd, hd);
        let rn = t.mul(r, hn);
        let n = t.add(xn, rn);
        let n = t.tanh(n);

        let keep = t.one_minus(z);
        let a = t.mul(keep, n);
        let bz = t.mul(z, h);
        t.add(a, bz)
    }
}

/// Bidirectional GRU over time-major inputs with per-row step masks.
///
/// Masked steps leave the hidden state untouched, so a padded row behaves
/// exactly like its unpadded sequence: the forward pass freezes after the last
/// real step and the backward pass stays at zero until the first real one.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGru {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        BiGru {
            forward: GruCell::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: GruCell::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// `inputs[t]` and `masks[t]` (`n × 1`, 1.0 for real) per step; returns
    /// `[h_fwd ‖ h_bwd]` per step.
    pub fn run(&self, t: &mut Tape, inputs: &[Var], masks: &[Mat]) -> Vec<Var> {
        let steps = inputs.len();
        let n = t.shape(inputs[0]).0;
        let fwd = run_direction(t, &self.forward, inputs, masks, n, 0..steps);
        let bwd = run_direction(t, &self.backward, inputs, masks, n, (0..steps).rev());
        (0..steps).map(|i| t.concat_cols(&[fwd[i], bwd[i]])).collect()
    }
}

fn run_direction(
    t: &mut Tape,
    cell: &GruCell,
    inputs: &[Var],
    masks: &[Mat],
    n: usize,
    order: impl Iterator<Item = usize>,
) -> Vec<Var> {
    let mut h = t.constant(Mat::zeros((n, cell.hidden)));
    let mut out = vec![None; inputs.len()];
    for i in order {
        let cand = cell.step(t, inputs[i], h);
        h = masked_update(t, cand, h, &masks[i]);
        out[i] = Some(h);
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// `m ⊙ new + (1 − m) ⊙ old`, row-wise, with a constant 0/1 column mask.
pub fn masked_update(t: &mut Tape, new: Var, old: Var, mask: &Mat) -> Var {
    if mask.iter().all(|&m| m == 1.0) {
        return new;
    }
    let m = t.constant(mask.clone());
    let inv = t.constant(mask.mapv(|x| 1.0 - x));
    let a = t.mul_col(new, m);
    let b = t.mul_col(old, inv);
    t.add(a, b)
}

/// LSTM cell with gates ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub hidden: usize,
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        LstmCell {
            hidden,
            w: store.add(format!("{name}.w"), uniform(rng, input, 4 * hidden, bound)),
            u: store.add(format!("{name}.u"), uniform(rng, hidden, 4 * hidden, bound)),
            b: store.add(format!("{name}.b"), uniform(rng, 1, 4 * hidden, bound)),
        }
    }

    /// Returns `(h', c')`.
    pub fn step(&self, t: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let (w, u, b) = (t.param(self.w), t.param(self.u), t.param(self.b));
        let gx = t.matmul(x, w);
        let gh = t.matmul(h, u);
        let g = t.add(gx, gh);
        let g = t.add_row(g, b);
        let i = t.slice_cols(g, 0, hd);
        let i = t.sigmoid(i);
        let f = t.slice_cols(g, hd, hd);
        let f = t.sigmoid(f);
        let cand = t.slice_cols(g, 2 * hd, hd);
        let cand = t.tanh(cand);
        let o = t.slice_cols(g, 3 * hd, hd);
        let o = t.sigmoid(o);
        let fc = t.mul(f, c);
        let ic = t.mul(i, cand);
        let c2 = t.add(fc, ic);
        let tc = t.tanh(c2);
        (t.mul(o, tc), c2)
    }
}

/// Bidirectional LSTM over the rows of one sequence (`len × input`).
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        BiLstm {
            forward: LstmCell::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: LstmCell::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    /// Returns `len × 2·hidden`, row `i` being `[h_fwd(i) ‖ h_bwd(i)]`.
    pub fn run(&self, t: &mut Tape, seq: Var) -> Var {
        let len = t.shape(seq).0;
        let rows: Vec<Var> = (0..len).map(|i| t.gather_rows(seq, vec![i])).collect();
        let fwd = lstm_direction(t, &self.forward, &rows, 0..len);
        let bwd = lstm_direction(t, &self.backward, &rows, (0..len).rev());
        let f = t.concat_rows(&fwd);
        let b = t.concat_rows(&bwd);
        t.concat_cols(&[f, b])
    }
}

fn lstm_direction(
    t: &mut Tape,
    cell: &LstmCell,
    rows: &[Var],
    order: impl Iterator<Item = usize>,
) -> Vec<Var> {
    let mut h = t.constant(Mat::zeros((1, cell.hidden)));
    let mut c = t.constant(Mat::zeros((1, cell.hidden)));
    let mut out = vec![None; rows.len()];
    for i in order {
        let (h2, c2) = cell.step(t, rows[i], h, c);
        h = h2;
        c = c2;
        out[i] = Some(h);
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// A learned context vector, either one shared row (`1 × out`) or generated
/// per item from an attribute embedding through a transform (`in × out`).
#[derive(Debug, Clone)]
pub enum ContextVector {
    Static(ParamId),
    Dynamic(ParamId),
}

impl ContextVector {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dynamic: bool,
        input: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        if dynamic {
            let w = uniform(rng, input, output, glorot(input, output));
            ContextVector::Dynamic(store.add(format!("{name}.transform"), w))
        } else {
            let w = uniform(rng, 1, output, glorot(1, output));
            ContextVector::Static(store.add(format!("{name}.vector"), w))
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self, ContextVector::Dynamic(_))
    }

    /// One context row per item: `attr · T` when dynamic, else `n` copies of
    /// the shared vector. Dynamic contexts need `attr` (`n × input`).
    pub fn rows(&self, t: &mut Tape, attr: Option<Var>, n: usize) -> Option<Var> {
        match *self {
            ContextVector::Static(p) => {
                let v = t.param(p);
                Some(t.gather_rows(v, vec![0; n]))
            }
            ContextVector::Dynamic(p) => {
                let a = attr?;
                debug_assert_eq!(t.shape(a).0, n);
                let w = t.param(p);
                Some(t.matmul(a, w))
            }
        }
    }
}
