//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients for every node that depends on a differentiable
//! leaf. Graphs are cheap and meant to be built once per example.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    ScalarMul(Var, Var),
    GatherRows(Var, Vec<usize>),
    Rotate { a: Var, cos: Vec<f64>, sin: Vec<f64> },
    RelLogits { q: Var, table: Var, clip: usize },
    Softmax(Var),
    Normalize { a: Var, inv_std: Vec<f64> },
    Gelu(Var),
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    PadRows { a: Var, front: usize },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, scale: f64 },
    MeanRows(Var),
    DotConst(Var, Vec<f64>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient w.r.t. `v`, zeros when absent.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// A constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf not owned by a parameter store.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter (once per graph) as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Makes later [`Graph::param`] calls for `id` resolve to `v`.
    pub fn bind_param(&mut self, id: ParamId, v: Var) {
        self.params.insert(id, v);
    }

    /// Parameters bound to this graph, in binding order of their ids.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        let mut out: Vec<_> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        out.sort_by_key(|(p, _)| p.index());
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions [{m},{k}] x [{k2},{n}]");
        let mut out = vec![0.0; m * n];
        matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::MatMul(a, b), rg)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt inner dimensions");
        let mut out = vec![0.0; m * n];
        matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let (m, n) = self.shape(a);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::Add(a, b), rg)
    }

    /// `a[m,n] + b[1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.value(b).len(), n, "add_row width");
        let bv = self.value(b).data();
        let data = self.value(a).data().chunks(n).flat_map(|r| r.iter().zip(bv).map(|(x, y)| x + y)).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::AddRow(a, b), rg)
    }

    /// `a[m,n] * b[1,n]` elementwise, broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.value(b).len(), n, "mul_row width");
        let bv = self.value(b).data();
        let data = self.value(a).data().chunks(n).flat_map(|r| r.iter().zip(bv).map(|(x, y)| x * y)).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::MulRow(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let (m, n) = self.shape(a);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::Mul(a, b), rg)
    }

    /// Elementwise product with a constant array (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Var {
        assert_eq!(self.value(a).len(), c.len(), "mul_const length");
        let data = self.value(a).data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let (m, n) = self.shape(a);
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::MulConst(a, c), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let (m, n) = self.shape(a);
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::Scale(a, s), rg)
    }

    /// `s * a` where `s` is a `[1,1]` node.
    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "scalar_mul expects a scalar");
        let sv = self.value(s).data()[0];
        let data = self.value(a).data().iter().map(|x| x * sv).collect();
        let (m, n) = self.shape(a);
        let rg = self.rg(s) || self.rg(a);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::ScalarMul(s, a), rg)
    }

    /// Row lookup `table[idx[i]]`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let (rows, n) = self.shape(table);
        let t = self.value(table);
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in &idx {
            assert!(i < rows, "gather_rows index {i} out of {rows}");
            data.extend_from_slice(t.row(i));
        }
        let m = idx.len();
        let rg = self.rg(table);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::GatherRows(table, idx), rg)
    }

    /// Rotates each consecutive column pair `(2i, 2i+1)` of row `r` by the
    /// 2x2 block `[[c, -s], [s, c]]` with `c = cos[r*h + i]`, `s = sin[r*h + i]`.
    pub fn rotate(&mut self, a: Var, cos: Vec<f64>, sin: Vec<f64>) -> Var {
        let (m, n) = self.shape(a);
        assert!(n % 2 == 0, "rotate needs an even width");
        let h = n / 2;
        assert_eq!(cos.len(), m * h, "rotate coefficient count");
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for i in 0..h {
                let (c, s) = (cos[r * h + i], sin[r * h + i]);
                let (x0, x1) = (x[r * n + 2 * i], x[r * n + 2 * i + 1]);
                out[r * n + 2 * i] = c * x0 - s * x1;
                out[r * n + 2 * i + 1] = s * x0 + c * x1;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::Rotate { a, cos, sin }, rg)
    }

    /// `out[i,j] = q_i . table[clamp(i - j, -clip, clip) + clip]` for a square
    /// `[n,n]` self-attention map.
    pub fn rel_logits(&mut self, q: Var, table: Var, clip: usize) -> Var {
        let (n, d) = self.shape(q);
        let (rows, d2) = self.shape(table);
        assert_eq!(d, d2, "rel_logits width");
        assert_eq!(rows, 2 * clip + 1, "rel_logits table rows");
        let (qv, tv) = (self.value(q), self.value(table));
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let r = rel_index(i, j, clip);
                out[i * n + j] = qv.row(i).iter().zip(tv.row(r)).map(|(a, b)| a * b).sum();
            }
        }
        let rg = self.rg(q) || self.rg(table);
        self.push(Tensor::matrix(n, n, out).unwrap(), Op::RelLogits { q, table, clip }, rg)
    }

    /// Row softmax. Entries set to `-inf` get probability exactly 0.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::Softmax(a), rg)
    }

    /// Sets `a[i,j] = -inf` for `j > i` (a constant mask; no gradient flows
    /// through masked entries after the softmax).
    pub fn causal_mask(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mask: Vec<f64> = (0..m * n).map(|k| if k % n > k / n { 0.0 } else { 1.0 }).collect();
        let masked = self.mul_const(a, mask);
        let node = &mut self.nodes[masked.0];
        for k in 0..m * n {
            if k % n > k / n {
                node.value.data_mut()[k] = f64::NEG_INFINITY;
            }
        }
        masked
    }

    /// Per-row standardization to zero mean, unit (biased) variance.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let (m, n) = self.shape(a);
        let mut out = self.value(a).data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for row in out.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, out).unwrap(), Op::Normalize { a, inv_std }, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()))
            .collect();
        let (m, n) = self.shape(a);
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::Gelu(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + len <= n, "slice_cols out of range");
        let v = self.value(a);
        let data = (0..m).flat_map(|r| v.row(r)[start..start + len].iter().copied()).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(m, len, data).unwrap(), Op::SliceCols { a, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                assert_eq!(self.shape(p).0, m, "concat_cols row count");
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(m, n, data).unwrap(), Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Zero-pads `a` to `total` rows, `front` of them before the data.
    pub fn pad_rows(&mut self, a: Var, total: usize, front: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(front + m <= total, "pad_rows target too small");
        let mut data = vec![0.0; total * n];
        data[front * n..(front + m) * n].copy_from_slice(self.value(a).data());
        let rg = self.rg(a);
        self.push(Tensor::matrix(total, n, data).unwrap(), Op::PadRows { a, front }, rg)
    }

    /// `scale * sum_i -log softmax(logits_i)[target_i]`; rows whose target
    /// is `None` are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>, scale: f64) -> Var {
        let (m, n) = self.shape(logits);
        assert_eq!(targets.len(), m, "cross_entropy target count");
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, t) in probs.chunks_mut(n).zip(&targets) {
            softmax_in_place(row);
            if let Some(t) = *t {
                assert!(t < n, "target {t} out of {n} classes");
                loss -= row[t].max(f64::MIN_POSITIVE).ln();
            }
        }
        let rg = self.rg(logits);
        self.push(Tensor::scalar(scale * loss), Op::CrossEntropy { logits, targets, probs, scale }, rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = vec![0.0; n];
        for row in self.value(a).data().chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x / m as f64;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(1, n, out).unwrap(), Op::MeanRows(a), rg)
    }

    /// `sum(a * w)` for a constant `w`.
    pub fn dot_const(&mut self, a: Var, w: Vec<f64>) -> Var {
        assert_eq!(self.value(a).len(), w.len(), "dot_const length");
        let s = self.value(a).data().iter().zip(&w).map(|(x, y)| x * y).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::DotConst(a, w), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward from a non-scalar; use backward_with");
        self.backward_with(out, vec![1.0])
    }

    /// Backpropagates an explicit upstream gradient for `out`.
    pub fn backward_with(&self, out: Var, seed: Vec<f64>) -> Gradients {
        assert_eq!(seed.len(), self.value(out).len(), "seed gradient length");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (m, n) = (node.value.rows(), node.value.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let k = self.shape(*a).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_nt(g, bv, m, n, k, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_tn(av, g, m, k, n, gb);
                }
            }
            Op::MatMulNT(a, b) => {
                let k = self.shape(*a).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_nn(g, bv, m, n, k, ga);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_tn(g, av, m, n, k, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.acc(grads, *v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::MulRow(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for (k, x) in ga.iter_mut().enumerate() {
                        *x += g[k] * bv[k % n];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (k, &gk) in g.iter().enumerate() {
                        gb[k % n] += gk * av[k];
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for k in 0..gb.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            Op::MulConst(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * c[k];
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, gk) in ga.iter_mut().zip(g) {
                        *x += gk * s;
                    }
                }
            }
            Op::ScalarMul(s, a) => {
                let sv = self.value(*s).data()[0];
                let av = self.value(*a).data();
                if let Some(gs) = self.acc(grads, *s) {
                    gs[0] += g.iter().zip(av).map(|(x, y)| x * y).sum::<f64>();
                }
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, gk) in ga.iter_mut().zip(g) {
                        *x += gk * sv;
                    }
                }
            }
            Op::GatherRows(table, idx) => {
                if let Some(gt) = self.acc(grads, *table) {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut gt[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::Rotate { a, cos, sin } => {
                if let Some(ga) = self.acc(grads, *a) {
                    let h = n / 2;
                    for r in 0..m {
                        for i in 0..h {
                            let (c, s) = (cos[r * h + i], sin[r * h + i]);
                            let (g0, g1) = (g[r * n + 2 * i], g[r * n + 2 * i + 1]);
                            ga[r * n + 2 * i] += c * g0 + s * g1;
                            ga[r * n + 2 * i + 1] += -s * g0 + c * g1;
                        }
                    }
                }
            }
            Op::RelLogits { q, table, clip } => {
                let d = self.shape(*q).1;
                let (qv, tv) = (self.value(*q), self.value(*table));
                if let Some(gq) = self.acc(grads, *q) {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            let r = rel_index(i, j, *clip);
                            for (x, t) in gq[i * d..(i + 1) * d].iter_mut().zip(tv.row(r)) {
                                *x += gij * t;
                            }
                        }
                    }
                }
                if let Some(gt) = self.acc(grads, *table) {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            let r = rel_index(i, j, *clip);
                            for (x, q) in gt[r * d..(r + 1) * d].iter_mut().zip(qv.row(i)) {
                                *x += gij * q;
                            }
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let y = node.value.data();
                    for r in 0..m {
                        let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            ga[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Normalize { a, inv_std } => {
                if let Some(ga) = self.acc(grads, *a) {
                    let y = node.value.data();
                    for r in 0..m {
                        let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let mean_g = gr.iter().sum::<f64>() / n as f64;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            ga[r * n + j] += inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for k in 0..ga.len() {
                        let x = av[k];
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                        ga[k] += g[k] * d;
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let src_n = self.shape(*a).1;
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..m {
                        add_into(&mut ga[r * src_n + start..r * src_n + start + n], &g[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if let Some(gp) = self.acc(grads, p) {
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * n + offset..r * n + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::PadRows { a, front } => {
                let rows = self.shape(*a).0;
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, &g[front * n..(front + rows) * n]);
                }
            }
            Op::CrossEntropy { logits, targets, probs, scale } => {
                let classes = self.shape(*logits).1;
                if let Some(gl) = self.acc(grads, *logits) {
                    let up = g[0] * scale;
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..classes {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * classes + j] += up * (probs[r * classes + j] - onehot);
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                let rows = self.shape(*a).0;
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..rows {
                        for j in 0..n {
                            ga[r * n + j] += g[j] / rows as f64;
                        }
                    }
                }
            }
            Op::DotConst(a, w) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, wk) in ga.iter_mut().zip(w) {
                        *x += g[0] * wk;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
        }
    }
}

pub(crate) fn rel_index(i: usize, j: usize, clip: usize) -> usize {
    let off = (i as i64 - j as i64).clamp(-(clip as i64), clip as i64);
    (off + clip as i64) as usize
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = if *x == f64::NEG_INFINITY { 0.0 } else { (*x - max).exp() };
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
