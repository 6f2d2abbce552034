//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters live in a
//! [`ParamStore`] and are read by reference, so a pass never copies weights.
//! All values are 2-D; row vectors are `1 × n` and scalars `1 × 1`.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Mat),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    RowSum(Var),
    SumRows(Var),
    Sum(Var),
    Reshape(Var),
    SumGroups(Var, usize),
    SoftmaxRows(Var),
    WeightedBce {
        scores: Var,
        targets: Mat,
        weights: Vec<f64>,
        eps: f64,
        batch: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Largest absolute gradient entry over all parameters.
    pub fn max_abs(&self) -> f64 {
        self.iter()
            .flat_map(|(_, g)| g.iter().map(|x| x.abs()))
            .fold(0.0, f64::max)
    }
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("only parameters are stored by reference"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a `1 × 1` variable.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Reads a parameter; repeated reads return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id.0) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id.0, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().as_standard_layout().into_owned();
        let ng = self.ng(a);
        self.push(v, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Elementwise product with a constant of the same shape (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = self.value(a) * &c;
        let ng = self.ng(a);
        self.push(v, Op::MulConst(a, c), ng)
    }

    /// `a + row`, broadcasting a `1 × m` row over `a`'s rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let v = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    /// `a ⊙ row`, broadcasting a `1 × m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let v = self.value(a) * self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::MulRow(a, row), ng)
    }

    /// Scales row `i` of `a` by `col[i]`, with `col` of shape `n × 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        debug_assert_eq!(self.shape(col), (self.shape(a).0, 1));
        let v = self.value(a) * self.value(col);
        let ng = self.ng(a) || self.ng(col);
        self.push(v, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 - x);
        let ng = self.ng(a);
        self.push(v, Op::OneMinus(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(v, Op::LeakyRelu(a, slope), ng)
    }

    /// Rows of `a` at `idx`, in order; repeats allowed.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let v = self.value(a).select(Axis(0), &idx);
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx), ng)
    }

    /// An `n × m` zero matrix with row `idx[i]` set to row `i` of `a`.
    pub fn scatter_rows(&mut self, a: Var, idx: Vec<usize>, n: usize) -> Var {
        let src = self.value(a);
        let mut v = Mat::zeros((n, src.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            v.row_mut(r).assign(&src.row(i));
        }
        let ng = self.ng(a);
        self.push(v, Op::ScatterRows(a, idx), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts must agree");
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts must agree");
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start, len), ng)
    }

    /// Per-row sums, `n × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(v, Op::RowSum(a), ng)
    }

    /// Column sums over all rows, `1 × m`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(v, Op::SumRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape must preserve size");
        let data: Vec<f64> = src.iter().copied().collect();
        let v = Mat::from_shape_vec((rows, cols), data).unwrap();
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    /// Sums each block of `group` consecutive rows: `(n·group) × m → n × m`.
    pub fn sum_groups(&mut self, a: Var, group: usize) -> Var {
        let src = self.value(a);
        let (r, c) = src.dim();
        assert!(group > 0 && r % group == 0, "rows must divide into groups");
        let mut v = Mat::zeros((r / group, c));
        for i in 0..r {
            let mut row = v.row_mut(i / group);
            row += &src.row(i);
        }
        let ng = self.ng(a);
        self.push(v, Op::SumGroups(a, group), ng)
    }

    /// Row-wise softmax. Entries where `mask` is false get exactly zero
    /// probability; a fully masked row is all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Array2<bool>>) -> Var {
        let x = self.value(a);
        let mut y = Mat::zeros(x.dim());
        for (i, row) in x.rows().into_iter().enumerate() {
            let keep = |j: usize| mask.map_or(true, |m| m[[i, j]]);
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| keep(*j))
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for (j, v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - max).exp();
                    y[[i, j]] = e;
                    total += e;
                }
            }
            y.row_mut(i).mapv_inplace(|e| e / total);
        }
        let ng = self.ng(a);
        self.push(y, Op::SoftmaxRows(a), ng)
    }

    /// `−(1/batch) Σ_f Σ_s [w_s y log o + (1 − y) log(1 − o)]` with `o`
    /// clamped to `[eps, 1 − eps]`.
    pub fn weighted_bce(&mut self, scores: Var, targets: Mat, weights: Vec<f64>, eps: f64) -> Var {
        let o = self.value(scores);
        assert_eq!(o.dim(), targets.dim());
        assert_eq!(o.ncols(), weights.len());
        let batch = o.nrows() as f64;
        let mut total = 0.0;
        for ((f, s), &y) in targets.indexed_iter() {
            let p = o[[f, s]].clamp(eps, 1.0 - eps);
            total += weights[s] * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let v = Mat::from_elem((1, 1), -total / batch);
        let ng = self.ng(scores);
        self.push(
            v,
            Op::WeightedBce {
                scores,
                targets,
                weights,
                eps,
                batch,
            },
            ng,
        )
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let mut param_grads: Vec<Option<Mat>> = vec![None; self.params.len()];
        grads[output.0] = Some(Mat::from_elem((1, 1), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => accumulate(&mut param_grads[id.0], g),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Transpose(a) => self.acc(&mut grads, *a, g.t().as_standard_layout().into_owned()),
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        self.acc(&mut grads, *b, g.clone());
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.ng(*b) {
                        self.acc(&mut grads, *b, -&g);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.ng(*b) {
                        self.acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::MulConst(a, c) => self.acc(&mut grads, *a, g * c),
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, gr);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    if self.ng(*row) {
                        let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, gr);
                    }
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, &g * self.value(*row));
                    }
                }
                Op::MulCol(a, col) => {
                    if self.ng(*col) {
                        let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        self.acc(&mut grads, *col, gc);
                    }
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, &g * self.value(*col));
                    }
                }
                Op::Scale(a, k) => self.acc(&mut grads, *a, g * *k),
                Op::OneMinus(a) => self.acc(&mut grads, *a, -g),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= y * (1.0 - y));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    Zip::from(&mut ga).and(x).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    self.acc(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    Zip::from(&mut ga).and(x).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g *= slope
                        }
                    });
                    self.acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let shape = self.shape(*a);
                    let target = self.slot(&mut grads, &mut param_grads, *a, shape);
                    for (i, &r) in idx.iter().enumerate() {
                        let mut row = target.row_mut(r);
                        row += &g.row(i);
                    }
                }
                Op::ScatterRows(a, idx) => {
                    let ga = g.select(Axis(0), idx);
                    self.acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.ng(*p) {
                            let gp = g.slice(s![.., start..start + w]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        if self.ng(*p) {
                            let gp = g.slice(s![start..start + h, ..]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        start += h;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let shape = self.shape(*a);
                    let target = self.slot(&mut grads, &mut param_grads, *a, shape);
                    let mut view = target.slice_mut(s![.., *start..*start + *len]);
                    view += &g;
                }
                Op::RowSum(a) => {
                    let shape = self.shape(*a);
                    let ga = Mat::from_shape_fn(shape, |(r, _)| g[[r, 0]]);
                    self.acc(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let shape = self.shape(*a);
                    let ga = Mat::from_shape_fn(shape, |(_, c)| g[[0, c]]);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let shape = self.shape(*a);
                    self.acc(&mut grads, *a, Mat::from_elem(shape, g[[0, 0]]));
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a);
                    let data: Vec<f64> = g.iter().copied().collect();
                    self.acc(&mut grads, *a, Mat::from_shape_vec(shape, data).unwrap());
                }
                Op::SumGroups(a, group) => {
                    let shape = self.shape(*a);
                    let ga = Mat::from_shape_fn(shape, |(r, c)| g[[r / group, c]]);
                    self.acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let dot = (&g * y).sum_axis(Axis(1));
                    let ga = Mat::from_shape_fn(y.dim(), |(r, c)| y[[r, c]] * (g[[r, c]] - dot[r]));
                    self.acc(&mut grads, *a, ga);
                }
                Op::WeightedBce {
                    scores,
                    targets,
                    weights,
                    eps,
                    batch,
                } => {
                    let o = self.value(*scores);
                    let up = g[[0, 0]];
                    let ga = Mat::from_shape_fn(o.dim(), |(f, s)| {
                        let p = o[[f, s]];
                        if p < *eps || p > 1.0 - *eps {
                            return 0.0;
                        }
                        let y = targets[[f, s]];
                        -up / batch * (weights[s] * y / p - (1.0 - y) / (1.0 - p))
                    });
                    self.acc(&mut grads, *scores, ga);
                }
            }
        }
        Gradients { grads: param_grads }
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if self.ng(v) {
            accumulate(&mut grads[v.0], g);
        }
    }

    /// Mutable gradient buffer for `v`, created as zeros when absent. Parameter
    /// leaves are written straight into the parameter gradient.
    fn slot<'g>(
        &self,
        grads: &'g mut [Option<Mat>],
        param_grads: &'g mut [Option<Mat>],
        v: Var,
        shape: (usize, usize),
    ) -> &'g mut Mat {
        let cell = match self.nodes[v.0].op {
            Op::Param(id) => &mut param_grads[id.0],
            _ => &mut grads[v.0],
        };
        cell.get_or_insert_with(|| Mat::zeros(shape))
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}
