//! Matrix-valued reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse and returns
//! the gradient of a scalar (1×1) node with respect to every parameter
//! read through [`Tape::param`]. Inputs registered with
//! [`Tape::constant`] never receive gradients, and operations depending
//! only on constants are skipped during the backward sweep.

use std::fmt::{Debug, Display};
use std::rc::Rc;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, NdFloat, Zip};

/// Floating-point element type of tape computations.
pub trait Real: NdFloat + Default {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Coarse phase of a forward pass, used to attribute matmul FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Encoder = 0,
    Pooling = 1,
    /// Projections, output map and feed-forward of the attention blocks.
    AttentionDense = 2,
    /// Query-key products and attention-weighted value sums.
    AttentionScores = 3,
    Decoder = 4,
    Other = 5,
}

const STAGES: usize = 6;

/// Forward-pass multiply-add counts per stage (2 FLOPs per multiply-add).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCounter {
    pub by_stage: [u64; STAGES],
}

impl FlopCounter {
    pub fn stage(&self, stage: Stage) -> u64 {
        self.by_stage[stage as usize]
    }

    /// All FLOPs spent in the attention module.
    pub fn attention(&self) -> u64 {
        self.stage(Stage::AttentionDense) + self.stage(Stage::AttentionScores)
    }

    pub fn total(&self) -> u64 {
        self.by_stage.iter().sum()
    }
}

enum Value<F> {
    Owned(Array2<F>),
    Param(usize),
}

enum Op<F> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<F>,
        inv_std: Array1<F>,
    },
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    Gather(Var, Rc<Vec<usize>>),
    ScatterAdd(Var, Rc<Vec<usize>>),
    ReplaceRows(Var, Var, Rc<Vec<usize>>),
    Softmax(Var),
    MeanSquaredError(Var, Rc<Array2<F>>),
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'p, F: Real> {
    params: &'p [Array2<F>],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<F>>,
    stage: Stage,
    flops: FlopCounter,
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p [Array2<F>]) -> Self {
        Tape {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            stage: Stage::Other,
            flops: FlopCounter::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_stage(&mut self, stage: Stage) -> Stage {
        std::mem::replace(&mut self.stage, stage)
    }

    pub fn flops(&self) -> FlopCounter {
        self.flops
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a,
            Value::Param(i) => &self.params[*i],
        }
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v)[[0, 0]]
    }

    /// Sign pattern of every ReLU output recorded so far. Two evaluations
    /// with equal patterns lie on the same smooth piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Relu(_) = node.op {
                out.extend(self.value(Var(i)).iter().map(|&x| x > F::zero()));
            }
        }
        out
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Parameter `id` of the tape's parameter slice; repeated reads share
    /// one node.
    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    fn count(&mut self, n: usize, k: usize, m: usize) {
        self.flops.by_stage[self.stage as usize] += 2 * (n * k * m) as u64;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions {n}x{k} · {k2}x{m}");
        self.count(n, k, m);
        let out = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (m, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_bt inner dimensions {n}x{k} · ({m}x{k2})ᵀ");
        self.count(n, k, m);
        let out = self.value(a).dot(&self.value(b).t());
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMulBt(a, b), ng)
    }

    /// `a + bias` with `bias` a 1×m row broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        assert_eq!(self.shape(bias).0, 1, "bias must be a row");
        let out = self.value(a) + self.value(bias);
        let ng = self.needs(a) || self.needs(bias);
        self.push(out, Op::AddBias(a, bias), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let out = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let out = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a) * c;
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| if x > F::zero() { x } else { F::zero() });
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.tanh());
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| F::one() / (F::one() + (-x).exp()));
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Row-wise layer normalization with affine 1×m `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.dim();
        let eps = F::of(LAYER_NORM_EPS);
        let inv_m = F::one() / F::of(m as f64);
        let mut xhat = Array2::<F>::zeros((n, m));
        let mut inv_std = Array1::<F>::zeros(n);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() * inv_m;
            let var = row.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_m;
            let is = F::one() / (var + eps).sqrt();
            inv_std[i] = is;
            Zip::from(xhat.row_mut(i))
                .and(row)
                .for_each(|h, &v| *h = (v - mean) * is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat requires equal row counts");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let out = self.value(a).slice(s![.., lo..hi]).to_owned();
        let ng = self.needs(a);
        self.push(out, Op::SliceCols(a, lo, hi), ng)
    }

    pub fn slice_rows(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let out = self.value(a).slice(s![lo..hi, ..]).to_owned();
        let ng = self.needs(a);
        self.push(out, Op::SliceRows(a, lo, hi), ng)
    }

    /// `out[i] = a[idx[i]]`
    pub fn gather(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let out = self.value(a).select(Axis(0), &idx);
        let ng = self.needs(a);
        self.push(out, Op::Gather(a, idx), ng)
    }

    /// `out[idx[i]] += a[i]` over `rows` output rows.
    pub fn scatter_add(&mut self, a: Var, idx: Rc<Vec<usize>>, rows: usize) -> Var {
        let av = self.value(a);
        let mut out = Array2::<F>::zeros((rows, av.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            let mut dst = out.row_mut(r);
            dst += &av.row(i);
        }
        let ng = self.needs(a);
        self.push(out, Op::ScatterAdd(a, idx), ng)
    }

    /// Copy of `base` with row `idx[i]` replaced by `update[i]`. Indices
    /// must be distinct.
    pub fn replace_rows(&mut self, base: Var, update: Var, idx: Rc<Vec<usize>>) -> Var {
        let mut out = self.value(base).clone();
        let up = self.value(update);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(r).assign(&up.row(i));
        }
        let ng = self.needs(base) || self.needs(update);
        self.push(out, Op::ReplaceRows(base, update, idx), ng)
    }

    /// Row-wise softmax. Entries where `mask` is false get weight 0; each
    /// row must keep at least one entry.
    pub fn softmax(&mut self, a: Var, mask: Option<&Array2<bool>>) -> Var {
        let mut out = self.value(a).clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let allowed = |j: usize| mask.is_none_or(|m| m[[i, j]]);
            let mut max = F::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) && v > max {
                    max = v;
                }
            }
            let mut sum = F::zero();
            for (j, v) in row.iter_mut().enumerate() {
                if allowed(j) {
                    *v = (*v - max).exp();
                    sum += *v;
                } else {
                    *v = F::zero();
                }
            }
            row.mapv_inplace(|v| v / sum);
        }
        let ng = self.needs(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Mean over all entries of `(a - target)²`, as a 1×1 node.
    pub fn mse(&mut self, a: Var, target: Rc<Array2<F>>) -> Var {
        let av = self.value(a);
        assert_eq!(av.dim(), target.dim(), "mse shapes");
        let count = av.len().max(1);
        let sum = Zip::from(av)
            .and(&*target)
            .fold(F::zero(), |acc, &x, &t| acc + (x - t) * (x - t));
        let out = Array2::from_elem((1, 1), sum / F::of(count as f64));
        let ng = self.needs(a);
        self.push(out, Op::MeanSquaredError(a, target), ng)
    }

    /// Gradients of the 1×1 node `root` with respect to every parameter.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<F>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        let mut param_grads: Vec<Option<Array2<F>>> = vec![None; self.params.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), F::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => accumulate_into(&mut param_grads[*id], g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulBt(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(self.value(*b));
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = g.t().dot(self.value(*a));
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddBias(a, b) => {
                    if self.needs(*b) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) && self.needs(*b) {
                        accumulate(&mut grads, *a, g.clone());
                        accumulate(&mut grads, *b, g);
                    } else if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    } else {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.mapv(|v| -v));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::Relu(a) => {
                    let y = self.value(Var(i));
                    let mut g = g;
                    Zip::from(&mut g).and(y).for_each(|gv, &yv| {
                        if yv <= F::zero() {
                            *gv = F::zero();
                        }
                    });
                    accumulate(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(i));
                    let mut g = g;
                    Zip::from(&mut g).and(y).for_each(|gv, &yv| *gv *= F::one() - yv * yv);
                    accumulate(&mut grads, *a, g);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(i));
                    let mut g = g;
                    Zip::from(&mut g)
                        .and(y)
                        .for_each(|gv, &yv| *gv = *gv * yv * (F::one() - yv));
                    accumulate(&mut grads, *a, g);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if self.needs(*beta) {
                        accumulate(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*gamma) {
                        let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *gamma, gg);
                    }
                    if self.needs(*x) {
                        let gxh = &g * self.value(*gamma);
                        let m = F::of(xhat.ncols() as f64);
                        let mut gx = Array2::<F>::zeros(g.dim());
                        for r in 0..g.nrows() {
                            let gr = gxh.row(r);
                            let hr = xhat.row(r);
                            let mean_g = gr.sum() / m;
                            let mean_gh = gr.dot(&hr) / m;
                            let is = inv_std[r];
                            Zip::from(gx.row_mut(r))
                                .and(gr)
                                .and(hr)
                                .for_each(|o, &gv, &hv| *o = is * (gv - mean_g - hv * mean_gh));
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.needs(p) {
                            accumulate(&mut grads, p, g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                Op::SliceCols(a, lo, hi) => {
                    let mut full = Array2::<F>::zeros(self.shape(*a));
                    full.slice_mut(s![.., *lo..*hi]).assign(&g);
                    accumulate(&mut grads, *a, full);
                }
                Op::SliceRows(a, lo, hi) => {
                    let mut full = Array2::<F>::zeros(self.shape(*a));
                    full.slice_mut(s![*lo..*hi, ..]).assign(&g);
                    accumulate(&mut grads, *a, full);
                }
                Op::Gather(a, idx) => {
                    let mut full = Array2::<F>::zeros(self.shape(*a));
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = full.row_mut(src);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *a, full);
                }
                Op::ScatterAdd(a, idx) => {
                    let ga = g.select(Axis(0), idx);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ReplaceRows(base, update, idx) => {
                    if self.needs(*update) {
                        accumulate(&mut grads, *update, g.select(Axis(0), idx));
                    }
                    if self.needs(*base) {
                        let mut gb = g;
                        for &r in idx.iter() {
                            gb.row_mut(r).fill(F::zero());
                        }
                        accumulate(&mut grads, *base, gb);
                    }
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(i));
                    let mut gx = &g * y;
                    for (mut row, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(yrow).for_each(|o, &yv| *o -= yv * dot);
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::MeanSquaredError(a, target) => {
                    let av = self.value(*a);
                    let c = g[[0, 0]] * F::of(2.0) / F::of(av.len().max(1) as f64);
                    let ga = (av - &**target) * c;
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Gradients { params: param_grads }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Array2<F>>], v: Var, delta: Array2<F>) {
    accumulate_into(&mut grads[v.0], delta);
}

fn accumulate_into<F: Real>(slot: &mut Option<Array2<F>>, delta: Array2<F>) {
    match slot {
        Some(existing) => *existing += &delta,
        None => *slot = Some(delta),
    }
}

/// Parameter gradients from one backward sweep. Parameters that did not
/// influence the root have no entry.
pub struct Gradients<F> {
    params: Vec<Option<Array2<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn param(&self, id: usize) -> Option<&Array2<F>> {
        self.params[id].as_ref()
    }

    pub fn into_params(self) -> Vec<Option<Array2<F>>> {
        self.params
    }
}

impl<F: Real + Debug + Display> Debug for Gradients<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gradients")
            .field("params", &self.params.len())
            .field("populated", &self.params.iter().filter(|p| p.is_some()).count())
            .finish()
    }
}
