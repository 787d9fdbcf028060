//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`]; [`Graph::backward`] returns gradients only
//! for parameters that actually took part in the computation, which is what
//! keeps unrelated task heads untouched by an optimizer step.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Mat, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    Norm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
        axis: NormAxis,
    },
    Gather(Var, Vec<usize>),
    Unfold {
        x: Var,
        table: Vec<Option<usize>>,
        width: usize,
    },
    SegmentMean(Var, Vec<Vec<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Mat,
        denom: f64,
    },
}

/// Which axis a normalization reduces over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NormAxis {
    /// Layer norm: statistics per row.
    Row,
    /// Batch norm with batch statistics: per column over rows.
    ColBatch,
    /// Batch norm with fixed (running) statistics.
    ColFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics observed during a training-mode batch-norm pass, to be
/// folded into the running buffers after the step.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    param_vars: HashMap<ParamId, Var>,
    train: bool,
    rng: ChaCha8Rng,
    batch_stats: Vec<BatchStats>,
}

/// Parameter gradients keyed by id, in id order.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub grads: BTreeMap<ParamId, Mat>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(&id)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore, train: bool, seed: u64) -> Graph<'a> {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch_stats: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn take_batch_stats(&mut self) -> Vec<BatchStats> {
        std::mem::take(&mut self.batch_stats)
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store;
        let trainable = store.is_trainable(id);
        let v = self.push(Cow::Borrowed(store.get(id)), Op::Param(id), trainable);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.derived(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.derived(value, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        self.derived(value, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a single row");
        let value = self.value(a) + self.value(row);
        self.derived(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let value = self.value(a) * self.value(b);
        self.derived(value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.derived(value, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.max(0.0));
        self.derived(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.derived(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.derived(value, Op::Tanh(a), &[a])
    }

    /// Row-wise softmax. Entries may be negative infinity as long as every
    /// row has a finite entry.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.derived(value, Op::SoftmaxRows(a), &[a])
    }

    fn normalize(&mut self, x: Var, gain: Var, bias: Var, axis: NormAxis, stats: Option<(&[f64], &[f64])>) -> (Var, Vec<f64>, Vec<f64>) {
        const EPS: f64 = 1e-5;
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = xv.clone();
        let (means, vars): (Vec<f64>, Vec<f64>) = match (axis, stats) {
            (NormAxis::Row, _) => xv
                .rows()
                .into_iter()
                .map(|r| {
                    let m = r.sum() / cols as f64;
                    (m, r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / cols as f64)
                })
                .unzip(),
            (NormAxis::ColBatch, _) => xv
                .columns()
                .into_iter()
                .map(|c| {
                    let m = c.sum() / rows as f64;
                    (m, c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / rows as f64)
                })
                .unzip(),
            (NormAxis::ColFixed, Some((m, v))) => (m.to_vec(), v.to_vec()),
            (NormAxis::ColFixed, None) => unreachable!("fixed normalization needs statistics"),
        };
        let inv_std: Vec<f64> = vars.iter().map(|v| 1.0 / (v + EPS).sqrt()).collect();
        match axis {
            NormAxis::Row => {
                for (i, mut r) in xhat.rows_mut().into_iter().enumerate() {
                    r.mapv_inplace(|v| (v - means[i]) * inv_std[i]);
                }
            }
            _ => {
                for (j, mut c) in xhat.columns_mut().into_iter().enumerate() {
                    c.mapv_inplace(|v| (v - means[j]) * inv_std[j]);
                }
            }
        }
        let value = &xhat * self.value(gain) + self.value(bias);
        let var = self.derived(
            value,
            Op::Norm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                axis,
            },
            &[x, gain, bias],
        );
        (var, means, vars)
    }

    /// Per-row normalization with `1 x d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        self.normalize(x, gain, bias, NormAxis::Row, None).0
    }

    /// Per-column normalization. In training mode batch statistics are used
    /// and recorded for the running buffers; otherwise the buffers are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Var {
        if self.train {
            let (v, mean, var) = self.normalize(x, gain, bias, NormAxis::ColBatch, None);
            let rows = self.shape(x).0 as f64;
            // unbiased variance for the running estimate
            let corr = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
            self.batch_stats.push(BatchStats {
                running_mean,
                running_var,
                mean,
                var: var.iter().map(|v| v * corr).collect(),
            });
            v
        } else {
            let store = self.store;
            let m = store.get(running_mean).iter().copied().collect::<Vec<_>>();
            let s = store.get(running_var).iter().copied().collect::<Vec<_>>();
            self.normalize(x, gain, bias, NormAxis::ColFixed, Some((&m, &s))).0
        }
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let (r, c) = self.shape(x);
        let rng = &mut self.rng;
        let mask = Array2::from_shape_fn((r, c), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = self.constant(mask);
        self.mul(x, m)
    }

    /// Rows of `a` at `idx`, in order; indices may repeat.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&src.row(i));
        }
        self.derived(value, Op::Gather(a, idx), &[a])
    }

    /// im2col: output row `r` is the concatenation of the source rows
    /// `table[r * width .. (r + 1) * width]`, with `None` as zero padding.
    pub fn unfold(&mut self, x: Var, table: Vec<Option<usize>>, width: usize) -> Var {
        assert_eq!(table.len() % width, 0, "unfold table not a multiple of width");
        let src = self.value(x);
        let d = src.ncols();
        let rows = table.len() / width;
        let mut value = Array2::zeros((rows, width * d));
        for r in 0..rows {
            for j in 0..width {
                if let Some(i) = table[r * width + j] {
                    value.slice_mut(s![r, j * d..(j + 1) * d]).assign(&src.row(i));
                }
            }
        }
        self.derived(value, Op::Unfold { x, table, width }, &[x])
    }

    /// One output row per segment: the mean of that segment's rows.
    pub fn segment_mean(&mut self, a: Var, segments: Vec<Vec<usize>>) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((segments.len(), src.ncols()));
        for (r, seg) in segments.iter().enumerate() {
            assert!(!seg.is_empty(), "empty segment");
            let mut row = value.row_mut(r);
            for &i in seg {
                row += &src.row(i);
            }
            row /= seg.len() as f64;
        }
        self.derived(value, Op::SegmentMean(a, segments), &[a])
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let parents = parts.clone();
        self.derived(value, Op::ConcatCols(parts), &parents)
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows col mismatch");
        let parents = parts.clone();
        self.derived(value, Op::ConcatRows(parts), &parents)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.derived(value, Op::SliceCols(a, start, end), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        if start == 0 && end == self.shape(a).0 {
            return a;
        }
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        self.derived(value, Op::SliceRows(a, start, end), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.derived(value, Op::SumAll(a), &[a])
    }

    /// Softmax cross-entropy per row against `targets` (`None` rows are
    /// ignored). Entries with `mask == false` are excluded from the softmax.
    /// Targets must be unmasked; callers validate this.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: Vec<Option<usize>>,
        mask: Option<&Array2<bool>>,
        reduction: Reduction,
    ) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy target count");
        if let Some(m) = mask {
            assert_eq!(m.dim(), lv.dim(), "cross_entropy mask shape");
        }
        let mut probs = Array2::zeros(lv.dim());
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, row) in lv.rows().into_iter().enumerate() {
            let allowed = |j: usize| mask.is_none_or(|m| m[[i, j]]);
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| allowed(*j))
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if allowed(j) {
                    let e = (v - max).exp();
                    probs[[i, j]] = e;
                    sum += e;
                }
            }
            probs.row_mut(i).mapv_inplace(|p| p / sum);
            if let Some(t) = targets[i] {
                assert!(allowed(t), "cross_entropy target {t} is masked in row {i}");
                total += -(row[t] - max - sum.ln());
                count += 1;
            }
        }
        let denom = match reduction {
            Reduction::Mean => count.max(1) as f64,
            Reduction::Sum => 1.0,
        };
        let value = Array2::from_elem((1, 1), total / denom);
        self.derived(
            value,
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                denom,
            },
            &[logits],
        )
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let rg = |v: Var| self.nodes[v.0].requires_grad;
            let val = |v: Var| -> &Mat { &self.nodes[v.0].value };
            macro_rules! send {
                ($v:expr, $g:expr) => {
                    if rg($v) {
                        let g = $g;
                        accumulate(&mut grads[$v.0], g);
                    }
                };
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    out.grads.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    send!(*a, g.dot(&val(*b).t()));
                    send!(*b, val(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    send!(*a, g.dot(val(*b)));
                    send!(*b, g.t().dot(val(*a)));
                }
                Op::Add(a, b) => {
                    send!(*b, g.clone());
                    send!(*a, g);
                }
                Op::AddRow(a, row) => {
                    send!(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send!(*a, g);
                }
                Op::Mul(a, b) => {
                    send!(*a, &g * val(*b));
                    send!(*b, &g * val(*a));
                }
                Op::Scale(a, c) => send!(*a, g * *c),
                Op::Relu(a) => {
                    let y: &Mat = &node.value;
                    let mut d = g;
                    d.zip_mut_with(y, |d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
                    send!(*a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    d.zip_mut_with(&node.value, |d, &y| *d *= y * (1.0 - y));
                    send!(*a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    d.zip_mut_with(&node.value, |d, &y| *d *= 1.0 - y * y);
                    send!(*a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y: &Mat = &node.value;
                    let mut d = &g * y;
                    let sums = d.sum_axis(Axis(1));
                    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                        let yr = y.row(i);
                        row.zip_mut_with(&yr, |dv, &yv| *dv -= yv * sums[i]);
                    }
                    send!(*a, d);
                }
                Op::Norm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                    axis,
                } => {
                    send!(*gain, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send!(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    if rg(*x) {
                        let dxhat = &g * val(*gain);
                        let dx = norm_backward(&dxhat, xhat, inv_std, *axis);
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Gather(a, idx) => {
                    if rg(*a) {
                        let mut d = Array2::zeros(val(*a).dim());
                        for (r, &i) in idx.iter().enumerate() {
                            let mut row = d.row_mut(i);
                            row += &g.row(r);
                        }
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::Unfold { x, table, width } => {
                    if rg(*x) {
                        let src = val(*x);
                        let dcols = src.ncols();
                        let mut d = Array2::zeros(src.dim());
                        for r in 0..table.len() / width {
                            for j in 0..*width {
                                if let Some(i) = table[r * width + j] {
                                    let mut row = d.row_mut(i);
                                    row += &g.slice(s![r, j * dcols..(j + 1) * dcols]);
                                }
                            }
                        }
                        accumulate(&mut grads[x.0], d);
                    }
                }
                Op::SegmentMean(a, segments) => {
                    if rg(*a) {
                        let mut d = Array2::zeros(val(*a).dim());
                        for (r, seg) in segments.iter().enumerate() {
                            let scaled = &g.row(r) / seg.len() as f64;
                            for &i in seg {
                                let mut row = d.row_mut(i);
                                row += &scaled;
                            }
                        }
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        send!(*p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        send!(*p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    if rg(*a) {
                        let mut d = Array2::zeros(val(*a).dim());
                        d.slice_mut(s![.., *start..*end]).assign(&g);
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::SliceRows(a, start, end) => {
                    if rg(*a) {
                        let mut d = Array2::zeros(val(*a).dim());
                        d.slice_mut(s![*start..*end, ..]).assign(&g);
                        accumulate(&mut grads[a.0], d);
                    }
                }
                Op::SumAll(a) => {
                    let c = g[[0, 0]];
                    send!(*a, Array2::from_elem(val(*a).dim(), c));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    denom,
                } => {
                    if rg(*logits) {
                        let c = g[[0, 0]] / denom;
                        let mut d = probs.clone();
                        for (i, t) in targets.iter().enumerate() {
                            match t {
                                Some(t) => d[[i, *t]] -= 1.0,
                                None => d.row_mut(i).fill(0.0),
                            }
                        }
                        d *= c;
                        accumulate(&mut grads[logits.0], d);
                    }
                }
            }
        }
        out
    }
}

fn norm_backward(dxhat: &Mat, xhat: &Mat, inv_std: &[f64], axis: NormAxis) -> Mat {
    let mut dx = Array2::zeros(dxhat.dim());
    match axis {
        NormAxis::Row => {
            let d = dxhat.ncols() as f64;
            for i in 0..dxhat.nrows() {
                let dh = dxhat.row(i);
                let xh = xhat.row(i);
                let sum_dh = dh.sum();
                let sum_dh_xh = (&dh * &xh).sum();
                let mut out = dx.row_mut(i);
                for j in 0..dh.len() {
                    out[j] = inv_std[i] / d * (d * dh[j] - sum_dh - xh[j] * sum_dh_xh);
                }
            }
        }
        NormAxis::ColBatch => {
            let n = dxhat.nrows() as f64;
            for j in 0..dxhat.ncols() {
                let dh = dxhat.column(j);
                let xh = xhat.column(j);
                let sum_dh = dh.sum();
                let sum_dh_xh = (&dh * &xh).sum();
                let mut out = dx.column_mut(j);
                for i in 0..dh.len() {
                    out[i] = inv_std[j] / n * (n * dh[i] - sum_dh - xh[i] * sum_dh_xh);
                }
            }
        }
        NormAxis::ColFixed => {
            for j in 0..dxhat.ncols() {
                let mut out = dx.column_mut(j);
                out.assign(&(&dxhat.column(j) * inv_std[j]));
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_fn((rows, cols), |_| d.sample(&mut rng))
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let l = g.constant(Array2::zeros((2, 5)));
        let loss = g.cross_entropy(l, vec![Some(1), Some(4)], None, Reduction::Mean);
        assert!((g.value(loss)[[0, 0]] - 5f64.ln()).abs() < 1e-12);

        let l = g.constant(array![[1000.0, 0.0, 0.0]]);
        let loss = g.cross_entropy(l, vec![Some(0)], None, Reduction::Mean);
        assert!(g.value(loss)[[0, 0]].abs() < 1e-12);
    }

    #[test]
    fn masked_cross_entropy_two_way() {
        // logits [1, 3, 2] with rule 1 masked: softmax over {0, 2}
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let l = g.constant(array![[1.0, 3.0, 2.0]]);
        let mask = array![[true, false, true]];
        let loss = g.cross_entropy(l, vec![Some(0)], Some(&mask), Reduction::Mean);
        let expect = -(1.0f64 - (1f64.exp() + 2f64.exp()).ln());
        assert!((g.value(loss)[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn softmax_handles_negative_infinity() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let x = g.constant(array![[0.0, f64::NEG_INFINITY], [1.0, 1.0]]);
        let y = g.softmax_rows(x);
        assert_eq!(g.value(y), &array![[1.0, 0.0], [0.5, 0.5]]);
    }

    #[test]
    fn gradients_of_primitive_ops() {
        let mut store = ParamStore::new();
        let a = store.add("a", random(4, 3, 1));
        let b = store.add("b", random(3, 5, 2));
        let row = store.add("row", random(1, 5, 3));
        let gain = store.add("gain", random(1, 5, 4));
        let bias = store.add("bias", random(1, 5, 5));
        let rm = store.add_buffer("rm", Array2::zeros((1, 5)));
        let rv = store.add_buffer("rv", Array2::ones((1, 5)));
        let weights = random(5, 3, 6);
        let ids = [a, b, row, gain, bias];
        let report = check_gradients(&mut store, &ids, 1e-5, |g| {
            let av = g.param(a);
            let bv = g.param(b);
            let m = g.matmul(av, bv);
            let r = g.param(row);
            let m = g.add_row(m, r);
            let (gn, bs) = (g.param(gain), g.param(bias));
            let ln = g.layer_norm(m, gn, bs);
            let bn = g.batch_norm(ln, gn, bs, rm, rv);
            let t = g.tanh(bn);
            let s = g.sigmoid(m);
            let p = g.mul(t, s);
            let sm = g.softmax_rows(p);
            let gathered = g.gather(sm, vec![0, 2, 2]);
            let seg = g.segment_mean(p, vec![vec![0, 1], vec![3], vec![1, 2, 3]]);
            let cat = g.concat_rows(vec![gathered, seg]);
            let sl = g.slice_cols(cat, 0, 5);
            let sr = g.slice_rows(sl, 1, 6);
            let mt = g.matmul_t(sr, bv);
            let ce = g.cross_entropy(mt, vec![Some(1), None, Some(0), Some(2), Some(1)], None, Reduction::Mean);
            let relu = g.relu(mt);
            let w = g.constant(weights.clone());
            let prod = g.mul(relu, w);
            let sum = g.sum_all(prod);
            let sum = g.scale(sum, 0.3);
            g.add(ce, sum)
        });
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn unfold_and_concat_cols_gradients() {
        let mut store = ParamStore::new();
        let x = store.add("x", random(5, 2, 11));
        let w = store.add("w", random(6, 3, 12));
        let table = vec![
            None, Some(0), Some(1),
            Some(0), Some(1), None,
            None, Some(2), Some(3),
            Some(2), Some(3), Some(4),
            Some(3), Some(4), None,
        ];
        let report = check_gradients(&mut store, &[x, w], 1e-5, |g| {
            let xv = g.param(x);
            let u = g.unfold(xv, table.clone(), 3);
            let wv = g.param(w);
            let y = g.matmul(u, wv);
            let a = g.slice_cols(y, 0, 1);
            let b = g.slice_cols(y, 1, 3);
            let c = g.concat_cols(vec![b, a]);
            let c = g.tanh(c);
            g.sum_all(c)
        });
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn unused_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", random(2, 2, 1));
        let b = store.add("b", random(2, 2, 2));
        let buf = store.add_buffer("buf", random(2, 2, 3));
        let mut g = Graph::new(&store, true, 0);
        let av = g.param(a);
        let bufv = g.param(buf);
        let p = g.mul(av, bufv);
        let s = g.sum_all(p);
        let grads = g.backward(s);
        assert!(grads.contains(a));
        assert!(!grads.contains(b));
        assert!(!grads.contains(buf));
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, false, 0);
        let x = g.constant(Array2::ones((3, 3)));
        assert_eq!(g.dropout(x, 0.5), x);
        let mut g = Graph::new(&store, true, 0);
        let x = g.constant(Array2::ones((50, 50)));
        let y = g.dropout(x, 0.5);
        let zeros = g.value(y).iter().filter(|v| **v == 0.0).count();
        assert!(zeros > 1000 && zeros < 1500);
        assert!(g.value(y).iter().all(|v| *v == 0.0 || *v == 2.0));
    }
}
