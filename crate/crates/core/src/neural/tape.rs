//! Reverse-mode differentiation over dense matrices, limited to the
//! operators the graph networks use.

use crate::linalg::Matrix;
use crate::scalar::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'g, T> {
    Leaf,
    MatMul(Var, Var),
    /// `a + 1 · row`, broadcasting a `1 × k` row over every row of `a`.
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Relu(Var),
    /// Elementwise product with a constant (dropout masks).
    Mask(Var, Matrix<T>),
    Concat(Vec<Var>),
    /// `out[i] += w · x[j]` for every `(i, j, w)` entry of a fixed sparse matrix.
    Sparse {
        entries: &'g [(usize, usize, T)],
        x: Var,
    },
    /// `out[receivers[e]] += scores[e] · x[senders[e]]`.
    Gate {
        scores: Var,
        x: Var,
        receivers: &'g [usize],
        senders: &'g [usize],
    },
    /// Mean softmax cross-entropy over rows with a target.
    SoftmaxXent {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix<T>,
        count: usize,
    },
}

struct Entry<'g, T> {
    value: Matrix<T>,
    op: Op<'g, T>,
    needs_grad: bool,
}

pub struct Tape<'g, T> {
    entries: Vec<Entry<'g, T>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'g, T: Real> Tape<'g, T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    fn push(&mut self, value: Matrix<T>, op: Op<'g, T>, needs_grad: bool) -> Var {
        self.entries.push(Entry {
            value,
            op,
            needs_grad,
        });
        Var(self.entries.len() - 1)
    }

    fn grad_of(&self, parents: &[Var]) -> bool {
        parents.iter().any(|p| self.entries[p.0].needs_grad)
    }

    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.entries[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::MatMul(a, b), g)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "broadcast row must have one row");
        let mut value = self.value(a).clone();
        assert_eq!(value.cols(), r.cols(), "broadcast width");
        for i in 0..value.rows() {
            for (o, &b) in value.row_mut(i).iter_mut().zip(r.row(0)) {
                *o += b;
            }
        }
        let g = self.grad_of(&[a, row]);
        self.push(value, Op::AddRow(a, row), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Add(a, b), g)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let mut value = self.value(a).clone();
        value.scale(factor);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Scale(a, factor), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let g = self.grad_of(&[a]);
        self.push(value, Op::Relu(a), g)
    }

    pub fn mask(&mut self, a: Var, mask: Matrix<T>) -> Var {
        let mut value = self.value(a).clone();
        assert_eq!(value.shape(), mask.shape(), "mask shape");
        for (v, &m) in value.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
        let g = self.grad_of(&[a]);
        self.push(value, Op::Mask(a, mask), g)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p);
                assert_eq!(src.rows(), rows, "concat row count");
                value.row_mut(i)[offset..offset + src.cols()].copy_from_slice(src.row(i));
                offset += src.cols();
            }
        }
        let g = self.grad_of(parts);
        self.push(value, Op::Concat(parts.to_vec()), g)
    }

    pub fn sparse(&mut self, entries: &'g [(usize, usize, T)], rows: usize, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = Matrix::zeros(rows, xv.cols());
        for &(i, j, w) in entries {
            for (o, &s) in value.row_mut(i).iter_mut().zip(xv.row(j)) {
                *o += w * s;
            }
        }
        let g = self.grad_of(&[x]);
        self.push(value, Op::Sparse { entries, x }, g)
    }

    /// Gated aggregation; `scores` is `1 × m`, `x` is `n × k`.
    pub fn gate(
        &mut self,
        scores: Var,
        x: Var,
        receivers: &'g [usize],
        senders: &'g [usize],
    ) -> Var {
        let (s, xv) = (self.value(scores), self.value(x));
        assert_eq!(s.shape(), (1, receivers.len()), "gate score shape");
        let mut value = Matrix::zeros(xv.rows(), xv.cols());
        for (e, (&r, &t)) in receivers.iter().zip(senders).enumerate() {
            let w = s[(0, e)];
            if w == T::zero() {
                continue;
            }
            for (o, &v) in value.row_mut(r).iter_mut().zip(xv.row(t)) {
                *o += w * v;
            }
        }
        let g = self.grad_of(&[scores, x]);
        self.push(
            value,
            Op::Gate {
                scores,
                x,
                receivers,
                senders,
            },
            g,
        )
    }

    /// Row-wise softmax of `logits`.
    pub fn softmax(&self, logits: Var) -> Matrix<T> {
        softmax_rows(self.value(logits))
    }

    /// Mean negative log-likelihood over rows whose target is `Some`.
    /// Panics if no row has a target.
    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target slot per row");
        let probs = softmax_rows(lv);
        let mut total = T::zero();
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(c) = *t {
                let row = lv.row(i);
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                total += lse - row[c];
                count += 1;
            }
        }
        assert!(count > 0, "softmax_xent needs at least one target");
        let value = Matrix::filled(1, 1, total / T::of(count as f64));
        let g = self.grad_of(&[logits]);
        self.push(
            value,
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
                count,
            },
            g,
        )
    }

    /// Sign pattern (`> 0`) of every ReLU input on the tape. Finite
    /// differences are only meaningful when this pattern is stable.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for e in &self.entries {
            if let Op::Relu(a) = e.op {
                out.extend(self.value(a).data().iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> Grads<T> {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward needs a scalar root"
        );
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.entries.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let entry = &self.entries[idx];
            if !entry.needs_grad {
                continue;
            }
            self.propagate(&entry.op, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads(grads)
    }

    fn propagate(&self, op: &Op<'g, T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let needs = |v: Var| self.entries[v.0].needs_grad;
        let mut accumulate = |v: Var, delta: Matrix<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    accumulate(*a, g.matmul_t(self.value(*b)));
                }
                if needs(*b) {
                    accumulate(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::AddRow(a, row) => {
                if needs(*a) {
                    accumulate(*a, g.clone());
                }
                if needs(*row) {
                    let mut sums = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, &v) in sums.row_mut(0).iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    accumulate(*row, sums);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(*a, g.clone());
                }
                if needs(*b) {
                    accumulate(*b, g.clone());
                }
            }
            Op::Scale(a, factor) => {
                if needs(*a) {
                    let mut d = g.clone();
                    d.scale(*factor);
                    accumulate(*a, d);
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let input = self.value(*a);
                    let mut d = g.clone();
                    for (dv, &x) in d.data_mut().iter_mut().zip(input.data()) {
                        if x <= T::zero() {
                            *dv = T::zero();
                        }
                    }
                    accumulate(*a, d);
                }
            }
            Op::Mask(a, mask) => {
                if needs(*a) {
                    let mut d = g.clone();
                    for (dv, &m) in d.data_mut().iter_mut().zip(mask.data()) {
                        *dv *= m;
                    }
                    accumulate(*a, d);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if needs(*p) {
                        let d = Matrix::from_fn(g.rows(), w, |i, j| g[(i, offset + j)]);
                        accumulate(*p, d);
                    }
                    offset += w;
                }
            }
            Op::Sparse { entries, x } => {
                if needs(*x) {
                    let xv = self.value(*x);
                    let mut d = Matrix::zeros(xv.rows(), xv.cols());
                    for &(i, j, w) in entries.iter() {
                        for (o, &s) in d.row_mut(j).iter_mut().zip(g.row(i)) {
                            *o += w * s;
                        }
                    }
                    accumulate(*x, d);
                }
            }
            Op::Gate {
                scores,
                x,
                receivers,
                senders,
            } => {
                let (s, xv) = (self.value(*scores), self.value(*x));
                if needs(*x) {
                    let mut d = Matrix::zeros(xv.rows(), xv.cols());
                    for (e, (&r, &t)) in receivers.iter().zip(senders.iter()).enumerate() {
                        let w = s[(0, e)];
                        if w == T::zero() {
                            continue;
                        }
                        for (o, &v) in d.row_mut(t).iter_mut().zip(g.row(r)) {
                            *o += w * v;
                        }
                    }
                    accumulate(*x, d);
                }
                if needs(*scores) {
                    let d = Matrix::from_fn(1, receivers.len(), |_, e| {
                        g.row(receivers[e])
                            .iter()
                            .zip(xv.row(senders[e]))
                            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
                    });
                    accumulate(*scores, d);
                }
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
                count,
            } => {
                if needs(*logits) {
                    let scale = g[(0, 0)] / T::of(*count as f64);
                    let mut d = Matrix::zeros(probs.rows(), probs.cols());
                    for (i, t) in targets.iter().enumerate() {
                        if let Some(c) = *t {
                            for (k, dv) in d.row_mut(i).iter_mut().enumerate() {
                                let y = if k == c { T::one() } else { T::zero() };
                                *dv = scale * (probs[(i, k)] - y);
                            }
                        }
                    }
                    accumulate(*logits, d);
                }
            }
        }
    }
}

pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T>(Vec<Option<Matrix<T>>>);

impl<T: Real> Grads<T> {
    /// Gradient with respect to `v`, or `None` if no path reached it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.0[v.0].as_ref()
    }

    /// Like [`Grads::get`] but returns zeros of the right shape when unreached.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape<'_, T>) -> Matrix<T> {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Matrix::zeros(r, c)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix<f64> {
        Matrix::from_f64(rows, cols, v)
    }

    /// Central-difference gradient of `f` at `x`.
    fn numeric(x: &Matrix<f64>, f: impl Fn(&Matrix<f64>) -> f64) -> Matrix<f64> {
        let h = 1e-6;
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            let mut p = x.clone();
            p[(i, j)] += h;
            let mut q = x.clone();
            q[(i, j)] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
    }

    fn close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn uniform_logits_cost_ln_classes() {
        let mut t: Tape<f64> = Tape::new();
        let l = t.constant(Matrix::zeros(3, 5));
        let loss = t.softmax_xent(l, vec![Some(0), Some(2), Some(4)]);
        assert!((t.value(loss)[(0, 0)] - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gate_and_sparse_gradients_match_finite_differences() {
        let receivers = [0usize, 1, 2, 0];
        let senders = [1usize, 2, 0, 2];
        let entries = [(0usize, 0usize, 0.5f64), (0, 1, 0.25), (2, 1, 1.5)];
        let x0 = m(3, 2, &[0.3, -0.2, 0.8, 0.1, -0.5, 0.7]);
        let s0 = m(1, 4, &[0.9, 0.2, -0.4, 1.1]);
        let run = |x: &Matrix<f64>, s: &Matrix<f64>| {
            let mut t = Tape::new();
            let xv = t.param(x.clone());
            let sv = t.param(s.clone());
            let r = t.relu(sv);
            let g = t.gate(r, xv, &receivers, &senders);
            let sp = t.sparse(&entries, 3, g);
            let c = t.concat(&[sp, xv]);
            let loss = t.softmax_xent(c, vec![Some(1), None, Some(3)]);
            let v = t.value(loss)[(0, 0)];
            let grads = t.backward(loss);
            (v, grads.get_or_zeros(xv, &t), grads.get_or_zeros(sv, &t))
        };
        let (_, gx, gs) = run(&x0, &s0);
        close(&gx, &numeric(&x0, |x| run(x, &s0).0), 1e-7);
        close(&gs, &numeric(&s0, |s| run(&x0, s).0), 1e-7);
    }

    #[test]
    fn matmul_bias_mask_gradients() {
        let a0 = m(2, 3, &[0.1, 0.2, -0.3, 0.4, -0.5, 0.6]);
        let w0 = m(3, 2, &[1.0, -1.0, 0.5, 0.25, -0.75, 2.0]);
        let b0 = m(1, 2, &[0.05, -0.1]);
        let mask = m(2, 2, &[2.0, 0.0, 1.0, 2.0]);
        let run = |w: &Matrix<f64>, b: &Matrix<f64>| {
            let mut t = Tape::new();
            let av = t.constant(a0.clone());
            let wv = t.param(w.clone());
            let bv = t.param(b.clone());
            let p = t.matmul(av, wv);
            let q = t.add_row(p, bv);
            let r = t.mask(q, mask.clone());
            let s = t.scale(r, 0.5);
            let u = t.add(s, q);
            let loss = t.softmax_xent(u, vec![Some(0), Some(1)]);
            let v = t.value(loss)[(0, 0)];
            let g = t.backward(loss);
            assert!(g.get(av).is_none());
            (v, g.get_or_zeros(wv, &t), g.get_or_zeros(bv, &t))
        };
        let (_, gw, gb) = run(&w0, &b0);
        close(&gw, &numeric(&w0, |w| run(w, &b0).0), 1e-7);
        close(&gb, &numeric(&b0, |b| run(&w0, b).0), 1e-7);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&m(2, 3, &[1.0, 2.0, 3.0, -100.0, 0.0, 100.0]));
        for i in 0..2 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
