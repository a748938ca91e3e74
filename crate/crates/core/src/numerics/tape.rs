//! Reverse-mode differentiation over whole tensors.
//!
//! A [`Tape`] records every primitive in execution order, so the node list
//! is already a topological order: `backward` walks it once in reverse and
//! each node propagates its adjoint to its parents exactly once. Leaves may
//! borrow their value (model parameters) instead of copying it.

use std::borrow::Cow;

use super::kernels;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::masks::MaskMatrix;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    MaskedSoftmax(Var),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<T> },
    Gelu(Var),
    Embedding { table: Var, ids: Vec<u32> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    L2Normalize { x: Var, norms: Vec<T> },
    Rope { x: Var, positions: Vec<usize>, head_dim: usize, base: f64 },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-node adjoints produced by a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

const RMS_EPS: f64 = 1e-6;
const NORM_EPS: f64 = 1e-12;

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Borrowed leaf, typically a model parameter.
    pub fn param(&mut self, t: &'a Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(mismatch("matmul", ta.shape(), tb.shape()));
        }
        let c = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, c)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(mismatch("add_row", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        let n = ta.cols();
        for r in 0..ta.rows() {
            for (x, &b) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let out = Tensor::matrix(c, r, kernels::transpose(t.data(), r, c)).expect("transpose shape");
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Row softmax. Blocked cells are replaced by the most negative finite
    /// value before the row max is taken, so they receive exactly zero
    /// probability.
    pub fn masked_softmax(&mut self, logits: Var, mask: Option<&MaskMatrix>) -> Result<Var> {
        let t = self.value(logits);
        let (rows, cols) = (t.rows(), t.cols());
        if let Some(m) = mask {
            if m.len() != rows || m.len() != cols {
                return Err(mismatch("masked_softmax", t.shape(), &[m.len(), m.len()]));
            }
        }
        let mut out = t.clone();
        for r in 0..rows {
            let row = out.row_mut(r);
            if let Some(m) = mask {
                for (x, &ok) in row.iter_mut().zip(m.row(r)) {
                    if !ok {
                        *x = T::min_value();
                    }
                }
            }
            let max = row.iter().copied().fold(T::min_value(), T::max);
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let inv = T::one() / sum;
            for x in row.iter_mut() {
                *x *= inv;
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(out, Op::MaskedSoftmax(logits), rg))
    }

    /// Row-wise RMS normalization with a learned `1×n` gain.
    pub fn rmsnorm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(gain));
        if tg.rows() != 1 || tg.cols() != tx.cols() {
            return Err(mismatch("rmsnorm", tx.shape(), tg.shape()));
        }
        let n = tx.cols();
        let eps = T::from_f64(RMS_EPS);
        let nf = T::from_f64(n as f64);
        let mut out = tx.clone();
        let mut inv_rms = Vec::with_capacity(tx.rows());
        for r in 0..tx.rows() {
            let row = out.row_mut(r);
            let ms = row.iter().map(|&v| v * v).sum::<T>() / nf;
            let inv = T::one() / (ms + eps).sqrt();
            inv_rms.push(inv);
            for (v, &g) in row.iter_mut().zip(tg.data()) {
                *v = *v * inv * g;
            }
        }
        let rg = self.rg(x) || self.rg(gain);
        Ok(self.push(out, Op::RmsNorm { x, gain, inv_rms }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::gelu);
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Gathers rows of a `V×d` table.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= v {
                return Err(mismatch("embedding", t.shape(), &[id]));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::matrix(ids.len(), d, data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Summed cross-entropy `Σ_r −log softmax(logits_r)[targets_r]` as `1×1`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, cols) = (t.rows(), t.cols());
        if targets.len() != rows || targets.iter().any(|&c| c >= cols) {
            return Err(mismatch("cross_entropy_rows", t.shape(), &[targets.len()]));
        }
        let mut probs = Vec::with_capacity(rows * cols);
        let mut total = T::zero();
        for (r, &target) in targets.iter().enumerate() {
            let row = t.row(r);
            let lse = kernels::log_sum_exp(row);
            total += lse - row[target];
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]).shape(), self.value(p).shape()));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, total, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]).shape(), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start >= end || end > t.cols() {
            return Err(mismatch("slice_cols", t.shape(), &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(t.rows() * w);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::matrix(t.rows(), w, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let rows: Vec<usize> = (start..end).collect();
        self.gather_rows(x, &rows)
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if rows.is_empty() || rows.iter().any(|&r| r >= t.rows()) {
            return Err(mismatch("gather_rows", t.shape(), rows));
        }
        let mut data = Vec::with_capacity(rows.len() * t.cols());
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::matrix(rows.len(), t.cols(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows { x, rows: rows.to_vec() }, rg))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::from_f64(NORM_EPS));
            norms.push(n);
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::L2Normalize { x, norms }, rg)
    }

    /// Rotary position rotation applied independently to each `head_dim`
    /// block of the columns.
    pub fn rope(&mut self, x: Var, positions: &[usize], head_dim: usize, base: f64) -> Result<Var> {
        let t = self.value(x);
        if positions.len() != t.rows() {
            return Err(mismatch("rope", t.shape(), &[positions.len()]));
        }
        let mut out = t.clone();
        crate::model::rope::rotate_in_place(&mut out, positions, head_dim, base, false)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::Rope {
                x,
                positions: positions.to_vec(),
                head_dim,
                base,
            },
            rg,
        ))
    }

    /// Backward from a `1×1` root with unit seed.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let one = Tensor::scalar(T::one());
        self.backward_seeded(vec![(root, one)])
    }

    /// Backward from arbitrary seed adjoints.
    pub fn backward_seeded(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            if g.shape() != self.value(v).shape() {
                return Err(mismatch("backward seed", self.value(v).shape(), g.shape()));
            }
            last = last.max(v.0);
            accumulate(&mut grads, v, |acc| acc.add_assign(&g), self.value(v).shape());
        }
        for i in (0..=last).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    accumulate(grads, *a, |acc| {
                        kernels::matmul_nt_acc(acc.data_mut(), g.data(), tb.data(), m, n, k)
                    }, ta.shape());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, |acc| {
                        kernels::matmul_tn_acc(acc.data_mut(), ta.data(), g.data(), m, k, n)
                    }, tb.shape());
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        accumulate(grads, v, |acc| acc.add_assign(g), g.shape());
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.rg(*a) {
                    accumulate(grads, *a, |acc| acc.add_assign(g), g.shape());
                }
                if self.rg(*bias) {
                    let n = g.cols();
                    accumulate(grads, *bias, |acc| {
                        for r in 0..g.rows() {
                            for (x, &y) in acc.data_mut().iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                                *x += y;
                            }
                        }
                    }, self.value(*bias).shape());
                }
            }
            Op::Scale(a, s) => {
                accumulate(grads, *a, |acc| {
                    for (x, &y) in acc.data_mut().iter_mut().zip(g.data()) {
                        *x += y * *s;
                    }
                }, g.shape());
            }
            Op::Transpose(a) => {
                let (r, c) = (g.rows(), g.cols());
                let t = kernels::transpose(g.data(), r, c);
                accumulate(grads, *a, |acc| {
                    for (x, &y) in acc.data_mut().iter_mut().zip(&t) {
                        *x += y;
                    }
                }, self.value(*a).shape());
            }
            Op::MaskedSoftmax(a) => {
                let cols = g.cols();
                accumulate(grads, *a, |acc| {
                    for r in 0..g.rows() {
                        let y = out.row(r);
                        let dy = &g.data()[r * cols..(r + 1) * cols];
                        let s = kernels::dot(y, dy);
                        let dx = &mut acc.data_mut()[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dx[j] += y[j] * (dy[j] - s);
                        }
                    }
                }, g.shape());
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let tx = self.value(*x);
                let tg = self.value(*gain);
                let n = tx.cols();
                let nf = T::from_f64(n as f64);
                if self.rg(*gain) {
                    accumulate(grads, *gain, |acc| {
                        for r in 0..tx.rows() {
                            let inv = inv_rms[r];
                            for ((a, &xv), &gv) in acc.data_mut().iter_mut().zip(tx.row(r)).zip(&g.data()[r * n..(r + 1) * n]) {
                                *a += gv * xv * inv;
                            }
                        }
                    }, tg.shape());
                }
                if self.rg(*x) {
                    accumulate(grads, *x, |acc| {
                        for r in 0..tx.rows() {
                            let inv = inv_rms[r];
                            let xr = tx.row(r);
                            let gr = &g.data()[r * n..(r + 1) * n];
                            // d = g ⊙ gain; dx = inv·(d − x̂·mean(d ⊙ x̂))
                            let mut m = T::zero();
                            for j in 0..n {
                                m += gr[j] * tg.data()[j] * xr[j] * inv;
                            }
                            m /= nf;
                            let dx = &mut acc.data_mut()[r * n..(r + 1) * n];
                            for j in 0..n {
                                dx[j] += inv * (gr[j] * tg.data()[j] - xr[j] * inv * m);
                            }
                        }
                    }, tx.shape());
                }
            }
            Op::Gelu(a) => {
                let ta = self.value(*a);
                accumulate(grads, *a, |acc| {
                    for ((d, &xv), &gv) in acc.data_mut().iter_mut().zip(ta.data()).zip(g.data()) {
                        *d += gv * kernels::gelu_grad(xv);
                    }
                }, ta.shape());
            }
            Op::Embedding { table, ids } => {
                let tt = self.value(*table);
                let d = tt.cols();
                accumulate(grads, *table, |acc| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut acc.data_mut()[id as usize * d..(id as usize + 1) * d];
                        for (x, &y) in dst.iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                            *x += y;
                        }
                    }
                }, tt.shape());
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let gv = g.item();
                let cols = self.value(*logits).cols();
                accumulate(grads, *logits, |acc| {
                    for (r, &t) in targets.iter().enumerate() {
                        let dst = &mut acc.data_mut()[r * cols..(r + 1) * cols];
                        for (x, &p) in dst.iter_mut().zip(&probs[r * cols..(r + 1) * cols]) {
                            *x += gv * p;
                        }
                        dst[t] -= gv;
                    }
                }, self.value(*logits).shape());
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        accumulate(grads, p, |acc| {
                            for r in 0..g.rows() {
                                let src = &g.data()[r * total + offset..r * total + offset + w];
                                for (x, &y) in acc.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *x += y;
                                }
                            }
                        }, self.value(p).shape());
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.rg(p) {
                        accumulate(grads, p, |acc| {
                            for (x, &y) in acc.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                                *x += y;
                            }
                        }, self.value(p).shape());
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let (n, w) = (tx.cols(), g.cols());
                accumulate(grads, *x, |acc| {
                    for r in 0..g.rows() {
                        let dst = &mut acc.data_mut()[r * n + start..r * n + start + w];
                        for (a, &b) in dst.iter_mut().zip(&g.data()[r * w..(r + 1) * w]) {
                            *a += b;
                        }
                    }
                }, tx.shape());
            }
            Op::GatherRows { x, rows } => {
                let tx = self.value(*x);
                let n = tx.cols();
                accumulate(grads, *x, |acc| {
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut acc.data_mut()[r * n..(r + 1) * n];
                        for (a, &b) in dst.iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
                            *a += b;
                        }
                    }
                }, tx.shape());
            }
            Op::L2Normalize { x, norms } => {
                let n = g.cols();
                accumulate(grads, *x, |acc| {
                    for r in 0..g.rows() {
                        let y = out.row(r);
                        let dy = &g.data()[r * n..(r + 1) * n];
                        let s = kernels::dot(y, dy);
                        let inv = T::one() / norms[r];
                        for ((d, &yv), &gv) in acc.data_mut()[r * n..(r + 1) * n].iter_mut().zip(y).zip(dy) {
                            *d += (gv - yv * s) * inv;
                        }
                    }
                }, g.shape());
            }
            Op::Rope { x, positions, head_dim, base } => {
                let mut back = g.clone();
                crate::model::rope::rotate_in_place(&mut back, positions, *head_dim, *base, true)
                    .expect("shape checked in forward");
                accumulate(grads, *x, |acc| acc.add_assign(&back), g.shape());
            }
        }
    }
}

fn accumulate<T: Real>(
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    f: impl FnOnce(&mut Tensor<T>),
    shape: &[usize],
) {
    let slot = &mut grads[v.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shape));
    }
    f(slot.as_mut().expect("initialized above"));
}
