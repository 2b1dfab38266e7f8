//! Reverse-mode automatic differentiation over small dense `f64` matrices.
//!
//! The whole pipeline runs at desk scale (dozens of spans, widths in the
//! tens), so a straightforward tape of `ndarray` values is fast enough and
//! keeps every gradient exactly checkable against finite differences.
//!
//! Row vectors are `[1, d]` matrices and scalars are `[1, 1]`.

use ndarray::{concatenate, s, Array2, Axis};

use crate::nn::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// `[n, d]` plus a `[1, d]` row broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `[n, d]` times a `[1, d]` row broadcast over rows.
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    /// The added constant is baked into the forward value; only the input
    /// link is needed for backward.
    AddScalar(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    PowConst(NodeId, f64),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    LayerNormRows(NodeId),
    /// Columnwise max over rows `r0..=r1`, yielding `[1, d]`.
    MaxPoolRows(NodeId, usize, usize),
    /// `[1, d]` replicated to `[n, d]`.
    RepeatRow(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Vec<usize>),
    /// Gather scalar entries into a `[k, 1]` column.
    GatherElems(NodeId, Vec<(usize, usize)>),
    SumAll(NodeId),
    MeanAll(NodeId),
    LogSumExpAll(NodeId),
    /// Elementwise multiply by a fixed (already scaled) dropout mask.
    Dropout(NodeId, Array2<f64>),
    /// Log-partition of a linear-chain CRF; see [`Tape::crf_log_partition`].
    CrfLogZ {
        emissions: NodeId,
        transitions: NodeId,
        start: NodeId,
        end: NodeId,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradient tape. Create one per forward pass (or per batch).
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const SIGMOID_CLAMP: f64 = 1e-12;

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    // -- leaves ------------------------------------------------------------

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn scalar_const(&mut self, value: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    // -- arithmetic --------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.ncols(), vb.nrows(), "matmul shape mismatch");
        let value = va.dot(vb);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) / self.value(b);
        self.push(value, Op::Div(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.value(row).nrows(), 1);
        assert_eq!(self.value(a).ncols(), self.value(row).ncols());
        let value = self.value(a) + &self.value(row).row(0);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.value(row).nrows(), 1);
        assert_eq!(self.value(a).ncols(), self.value(row).ncols());
        let value = self.value(a) * &self.value(row).row(0);
        self.push(value, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) + c;
        self.push(value, Op::AddScalar(a))
    }

    // -- nonlinearities ----------------------------------------------------

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| {
            let y = 1.0 / (1.0 + (-x).exp());
            y.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
        });
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn pow_const(&mut self, a: NodeId, p: f64) -> NodeId {
        let value = self.value(a).mapv(|x| x.powf(p));
        self.push(value, Op::PowConst(a, p))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let lse = log_sum_exp(row.iter().copied());
            row.mapv_inplace(|v| v - lse);
        }
        self.push(value, Op::LogSoftmaxRows(a))
    }

    /// Rowwise normalization to zero mean, unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let (mean, inv_std) = row_moments(row.iter().copied());
            row.mapv_inplace(|v| (v - mean) * inv_std);
        }
        self.push(value, Op::LayerNormRows(a))
    }

    // -- shape manipulation ------------------------------------------------

    pub fn max_pool_rows(&mut self, a: NodeId, r0: usize, r1: usize) -> NodeId {
        let x = self.value(a);
        assert!(r0 <= r1 && r1 < x.nrows(), "max pool range out of bounds");
        let mut out = Array2::from_elem((1, x.ncols()), f64::NEG_INFINITY);
        for r in r0..=r1 {
            for c in 0..x.ncols() {
                if x[[r, c]] > out[[0, c]] {
                    out[[0, c]] = x[[r, c]];
                }
            }
        }
        self.push(out, Op::MaxPoolRows(a, r0, r1))
    }

    pub fn repeat_row(&mut self, a: NodeId, n: usize) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.nrows(), 1);
        let mut out = Array2::zeros((n, x.ncols()));
        for mut row in out.rows_mut() {
            row.assign(&x.row(0));
        }
        self.push(out, Op::RepeatRow(a))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows shape mismatch");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: NodeId, c0: usize, c1: usize) -> NodeId {
        let value = self.value(a).slice(s![.., c0..c1]).to_owned();
        self.push(value, Op::SliceCols(a, c0, c1))
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> NodeId {
        let x = self.value(a);
        let mut out = Array2::zeros((rows.len(), x.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).assign(&x.row(r));
        }
        self.push(out, Op::GatherRows(a, rows.to_vec()))
    }

    pub fn gather_elems(&mut self, a: NodeId, elems: &[(usize, usize)]) -> NodeId {
        let x = self.value(a);
        let mut out = Array2::zeros((elems.len(), 1));
        for (k, &(r, c)) in elems.iter().enumerate() {
            out[[k, 0]] = x[[r, c]];
        }
        self.push(out, Op::GatherElems(a, elems.to_vec()))
    }

    // -- reductions --------------------------------------------------------

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let value = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(value, Op::MeanAll(a))
    }

    pub fn log_sum_exp_all(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), log_sum_exp(self.value(a).iter().copied()));
        self.push(value, Op::LogSumExpAll(a))
    }

    // -- stochastic --------------------------------------------------------

    /// Inverted dropout with a caller-supplied mask of `0` / `1/keep` entries.
    pub fn dropout(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        assert_eq!(self.value(a).dim(), mask.dim());
        let value = self.value(a) * &mask;
        self.push(value, Op::Dropout(a, mask))
    }

    // -- CRF ---------------------------------------------------------------

    /// Log-partition of a linear-chain CRF with per-position `emissions`
    /// `[n, k]`, `transitions` `[k, k]` and `start`/`end` scores `[1, k]`.
    pub fn crf_log_partition(
        &mut self,
        emissions: NodeId,
        transitions: NodeId,
        start: NodeId,
        end: NodeId,
    ) -> NodeId {
        let em = self.value(emissions);
        let tr = self.value(transitions);
        let st = self.value(start);
        let en = self.value(end);
        let k = em.ncols();
        assert_eq!(tr.dim(), (k, k));
        assert_eq!(st.dim(), (1, k));
        assert_eq!(en.dim(), (1, k));
        assert!(em.nrows() >= 1);
        let (log_z, _) = crf_forward(em, tr, st, en);
        self.push(
            Array2::from_elem((1, 1), log_z),
            Op::CrfLogZ {
                emissions,
                transitions,
                start,
                end,
            },
        )
    }

    // -- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar `loss` node. Returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let add = |grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>| {
            match &mut grads[id.0] {
                Some(existing) => *existing += &delta,
                slot => *slot = Some(delta),
            }
        };

        match &self.nodes[idx].op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                add(grads, *a, g.dot(&vb.t()));
                add(grads, *b, va.t().dot(g));
            }
            Op::Transpose(a) => add(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                add(grads, *a, g.clone());
                add(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add(grads, *a, g.clone());
                add(grads, *b, -g.clone());
            }
            Op::Mul(a, b) => {
                add(grads, *a, g * self.value(*b));
                add(grads, *b, g * self.value(*a));
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                let y = &self.nodes[idx].value;
                add(grads, *a, g / vb);
                add(grads, *b, -(g * y / vb));
            }
            Op::AddRow(a, row) => {
                add(grads, *a, g.clone());
                add(grads, *row, sum_rows(g));
            }
            Op::MulRow(a, row) => {
                let va = self.value(*a);
                let vrow = self.value(*row);
                add(grads, *a, g * &vrow.row(0));
                add(grads, *row, sum_rows(&(g * va)));
            }
            Op::Scale(a, c) => add(grads, *a, g * *c),
            Op::AddScalar(a) => add(grads, *a, g.clone()),
            Op::Relu(a) => {
                let va = self.value(*a);
                let mask = va.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                add(grads, *a, g * &mask);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                add(grads, *a, g * &(y * &y.mapv(|v| 1.0 - v)));
            }
            Op::Exp(a) => add(grads, *a, g * &self.nodes[idx].value),
            Op::PowConst(a, p) => {
                let va = self.value(*a);
                let coef = va.mapv(|x| pow_grad_coef(x, *p));
                add(grads, *a, g * &coef);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut ga = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot: f64 = (0..y.ncols()).map(|c| g[[r, c]] * y[[r, c]]).sum();
                    for c in 0..y.ncols() {
                        ga[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                    }
                }
                add(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let mut ga = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let gsum: f64 = (0..y.ncols()).map(|c| g[[r, c]]).sum();
                    for c in 0..y.ncols() {
                        ga[[r, c]] = g[[r, c]] - y[[r, c]].exp() * gsum;
                    }
                }
                add(grads, *a, ga);
            }
            Op::LayerNormRows(a) => {
                let x = self.value(*a);
                let xhat = &self.nodes[idx].value;
                let d = x.ncols() as f64;
                let mut ga = Array2::zeros(x.dim());
                for r in 0..x.nrows() {
                    let (_, inv_std) = row_moments(x.row(r).iter().copied());
                    let g_mean: f64 = (0..x.ncols()).map(|c| g[[r, c]]).sum::<f64>() / d;
                    let gx_mean: f64 = (0..x.ncols())
                        .map(|c| g[[r, c]] * xhat[[r, c]])
                        .sum::<f64>()
                        / d;
                    for c in 0..x.ncols() {
                        ga[[r, c]] = inv_std * (g[[r, c]] - g_mean - xhat[[r, c]] * gx_mean);
                    }
                }
                add(grads, *a, ga);
            }
            Op::MaxPoolRows(a, r0, r1) => {
                let x = self.value(*a);
                let mut ga = Array2::zeros(x.dim());
                for c in 0..x.ncols() {
                    // first-max wins, matching the forward pass
                    let mut best = *r0;
                    for r in *r0..=*r1 {
                        if x[[r, c]] > x[[best, c]] {
                            best = r;
                        }
                    }
                    ga[[best, c]] += g[[0, c]];
                }
                add(grads, *a, ga);
            }
            Op::RepeatRow(a) => add(grads, *a, sum_rows(g)),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).nrows();
                    add(grads, p, g.slice(s![offset..offset + n, ..]).to_owned());
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).ncols();
                    add(grads, p, g.slice(s![.., offset..offset + n]).to_owned());
                    offset += n;
                }
            }
            Op::SliceCols(a, c0, c1) => {
                let x = self.value(*a);
                let mut ga = Array2::zeros(x.dim());
                ga.slice_mut(s![.., *c0..*c1]).assign(g);
                add(grads, *a, ga);
            }
            Op::GatherRows(a, rows) => {
                let x = self.value(*a);
                let mut ga = Array2::zeros(x.dim());
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..x.ncols() {
                        ga[[r, c]] += g[[k, c]];
                    }
                }
                add(grads, *a, ga);
            }
            Op::GatherElems(a, elems) => {
                let x = self.value(*a);
                let mut ga = Array2::zeros(x.dim());
                for (k, &(r, c)) in elems.iter().enumerate() {
                    ga[[r, c]] += g[[k, 0]];
                }
                add(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let x = self.value(*a);
                add(grads, *a, Array2::from_elem(x.dim(), g[[0, 0]]));
            }
            Op::MeanAll(a) => {
                let x = self.value(*a);
                let c = g[[0, 0]] / x.len() as f64;
                add(grads, *a, Array2::from_elem(x.dim(), c));
            }
            Op::LogSumExpAll(a) => {
                let x = self.value(*a);
                let lse = self.nodes[idx].value[[0, 0]];
                let ga = x.mapv(|v| (v - lse).exp() * g[[0, 0]]);
                add(grads, *a, ga);
            }
            Op::Dropout(a, mask) => add(grads, *a, g * mask),
            Op::CrfLogZ {
                emissions,
                transitions,
                start,
                end,
            } => {
                let (g_em, g_tr, g_st, g_en) = crf_log_z_grads(
                    self.value(*emissions),
                    self.value(*transitions),
                    self.value(*start),
                    self.value(*end),
                );
                let s = g[[0, 0]];
                add(grads, *emissions, g_em * s);
                add(grads, *transitions, g_tr * s);
                add(grads, *start, g_st * s);
                add(grads, *end, g_en * s);
            }
        }
    }
}

/// Per-node gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    /// Add every parameter-leaf gradient into the store's `grad` buffers.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (idx, node) in tape.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = &self.grads[idx] {
                    store.add_grad(pid, g);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn sum_rows(g: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((1, g.ncols()));
    for r in 0..g.nrows() {
        for c in 0..g.ncols() {
            out[[0, c]] += g[[r, c]];
        }
    }
    out
}

fn row_moments(row: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = row.clone().count() as f64;
    let mean = row.clone().sum::<f64>() / n;
    let var = row.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LN_EPS).sqrt())
}

fn pow_grad_coef(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    let e = p - 1.0;
    if x == 0.0 && e < 0.0 {
        // boundary convention: forward value is 0, keep the gradient finite
        return 0.0;
    }
    p * x.powf(e)
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values
        .clone()
        .fold(f64::NEG_INFINITY, |acc, v| if v > acc { v } else { acc });
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub(crate) fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|v| (v - lse).exp());
    }
    out
}

/// Alpha recursion; returns `(log_z, alphas)` where `alphas[t][j]` is the
/// log-score of all prefixes ending at position `t` with tag `j`.
fn crf_forward(
    em: &Array2<f64>,
    tr: &Array2<f64>,
    st: &Array2<f64>,
    en: &Array2<f64>,
) -> (f64, Array2<f64>) {
    let (n, k) = em.dim();
    let mut alpha = Array2::zeros((n, k));
    for j in 0..k {
        alpha[[0, j]] = st[[0, j]] + em[[0, j]];
    }
    for t in 1..n {
        for j in 0..k {
            let prev = (0..k).map(|i| alpha[[t - 1, i]] + tr[[i, j]]);
            alpha[[t, j]] = em[[t, j]] + log_sum_exp(prev);
        }
    }
    let log_z = log_sum_exp((0..k).map(|j| alpha[[n - 1, j]] + en[[0, j]]));
    (log_z, alpha)
}

/// Gradients of the log-partition: marginal tag and transition probabilities
/// from the forward-backward recursions.
fn crf_log_z_grads(
    em: &Array2<f64>,
    tr: &Array2<f64>,
    st: &Array2<f64>,
    en: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let (n, k) = em.dim();
    let (log_z, alpha) = crf_forward(em, tr, st, en);

    let mut beta = Array2::zeros((n, k));
    for j in 0..k {
        beta[[n - 1, j]] = en[[0, j]];
    }
    for t in (0..n - 1).rev() {
        for i in 0..k {
            let next = (0..k).map(|j| tr[[i, j]] + em[[t + 1, j]] + beta[[t + 1, j]]);
            beta[[t, i]] = log_sum_exp(next);
        }
    }

    let mut g_em = Array2::zeros((n, k));
    for t in 0..n {
        for j in 0..k {
            g_em[[t, j]] = (alpha[[t, j]] + beta[[t, j]] - log_z).exp();
        }
    }

    let mut g_tr = Array2::zeros((k, k));
    for t in 0..n.saturating_sub(1) {
        for i in 0..k {
            for j in 0..k {
                g_tr[[i, j]] += (alpha[[t, i]]
                    + tr[[i, j]]
                    + em[[t + 1, j]]
                    + beta[[t + 1, j]]
                    - log_z)
                    .exp();
            }
        }
    }

    let mut g_st = Array2::zeros((1, k));
    let mut g_en = Array2::zeros((1, k));
    for j in 0..k {
        g_st[[0, j]] = (alpha[[0, j]] + beta[[0, j]] - log_z).exp();
        g_en[[0, j]] = (alpha[[n - 1, j]] + en[[0, j]] - log_z).exp();
    }
    (g_em, g_tr, g_st, g_en)
}
