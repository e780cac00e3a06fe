//! Reverse-mode tape.
//!
//! A [`Graph`] is an append-only arena of nodes; ops may only reference
//! ids already in the arena, so node order is a topological order and
//! [`Graph::backward`] is a single reverse sweep that visits each node
//! exactly once. All arithmetic is f64 and sequential, so identical
//! inputs produce bit-identical values and gradients.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires: bool,
    op: Op,
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// matrix + row vector, broadcast over rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// a (m x k) times b-transpose where b is (n x k).
    MatMulNT(NodeId, NodeId),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        /// Per-row (mean, inverse stddev) cached at forward time.
        cache: Vec<(f64, f64)>,
    },
    Gelu(NodeId),
    GatherRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    MaxAll {
        x: NodeId,
        argmax: usize,
    },
    CrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<f64>,
    },
    /// Mean over rows of per-row cross-entropy.
    CrossEntropyRows {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    /// Linear combination of same-shape nodes.
    WeightedSum(Vec<(NodeId, f64)>),
    /// Elementwise product with a fixed mask (dropout).
    MulMask {
        x: NodeId,
        mask: Vec<f64>,
    },
}

/// Append-only computation graph over f64 tensors.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape { op, lhs: vec![a.0, a.1], rhs: vec![b.0, b.1] }
}

// ── kernels ──────────────────────────────────────────────────────────────

/// out (m x n) += a (m x k) · b (k x n)
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out (m x n) += a (m x k) · b-transpose, b given as (n x k)
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            orow[j] += acc;
        }
    }
}

/// out (k x n) += a-transpose · g, with a (m x k), g (m x n)
fn mm_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += av * grow[j];
            }
        }
    }
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, requires: bool, op: Op) -> NodeId {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, requires, op });
        self.grads.push(None);
        NodeId((self.nodes.len() - 1) as u32)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.idx()]
    }

    /// (rows, cols) of a node.
    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.node(id).value
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        let n = self.node(id);
        if n.value.len() != 1 {
            return Err(Error::contract(alloc::format!(
                "expected scalar node, found {}x{}",
                n.rows, n.cols
            )));
        }
        Ok(n.value[0])
    }

    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        let n = self.node(id);
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("node dims consistent")
    }

    /// Leaf that participates in gradients.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), true, Op::Leaf)
    }

    /// Leaf excluded from gradients.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), false, Op::Leaf)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<NodeId> {
        if rows * cols != data.len() {
            return Err(shape_err("constant", (rows, cols), (1, data.len())));
        }
        Ok(self.push(rows, cols, data, false, Op::Leaf))
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push(1, 1, vec![v], false, Op::Leaf)
    }

    fn req2(&self, a: NodeId, b: NodeId) -> bool {
        self.node(a).requires || self.node(b).requires
    }

    // ── elementwise and affine ───────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if (ar, ac) != (br, bc) {
            return Err(shape_err("add", (ar, ac), (br, bc)));
        }
        let v: Vec<f64> =
            self.node(a).value.iter().zip(&self.node(b).value).map(|(x, y)| x + y).collect();
        Ok(self.push(ar, ac, v, self.req2(a, b), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if (ar, ac) != (br, bc) {
            return Err(shape_err("sub", (ar, ac), (br, bc)));
        }
        let v: Vec<f64> =
            self.node(a).value.iter().zip(&self.node(b).value).map(|(x, y)| x - y).collect();
        Ok(self.push(ar, ac, v, self.req2(a, b), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if (ar, ac) != (br, bc) {
            return Err(shape_err("mul", (ar, ac), (br, bc)));
        }
        let v: Vec<f64> =
            self.node(a).value.iter().zip(&self.node(b).value).map(|(x, y)| x * y).collect();
        Ok(self.push(ar, ac, v, self.req2(a, b), Op::Mul(a, b)))
    }

    /// matrix (r x c) + row (1 x c), broadcast over rows.
    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> Result<NodeId> {
        let (mr, mc) = self.dims(m);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != mc {
            return Err(shape_err("add-row", (mr, mc), (rr, rc)));
        }
        let rv = &self.node(row).value;
        let mut v = self.node(m).value.clone();
        for i in 0..mr {
            for j in 0..mc {
                v[i * mc + j] += rv[j];
            }
        }
        Ok(self.push(mr, mc, v, self.req2(m, row), Op::AddRow(m, row)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        let v: Vec<f64> = self.node(a).value.iter().map(|x| x * k).collect();
        let req = self.node(a).requires;
        Ok(self.push(r, c, v, req, Op::Scale(a, k)))
    }

    /// Linear combination of same-shape nodes; at least one term.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::contract(String::from("weighted_sum needs at least one term")));
        };
        let (r, c) = self.dims(first);
        let mut v = vec![0.0; r * c];
        let mut req = false;
        for &(t, w) in terms {
            let (tr, tc) = self.dims(t);
            if (tr, tc) != (r, c) {
                return Err(shape_err("weighted-sum", (r, c), (tr, tc)));
            }
            req |= self.node(t).requires;
            for (o, x) in v.iter_mut().zip(&self.node(t).value) {
                *o += w * x;
            }
        }
        Ok(self.push(r, c, v, req, Op::WeightedSum(terms.to_vec())))
    }

    /// Elementwise product with a fixed mask of the same element count.
    pub fn mul_mask(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if mask.len() != r * c {
            return Err(shape_err("mul-mask", (r, c), (1, mask.len())));
        }
        let v: Vec<f64> = self.node(x).value.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let req = self.node(x).requires;
        Ok(self.push(r, c, v, req, Op::MulMask { x, mask }))
    }

    /// Inverted dropout: keep with probability 1-rate, scale kept values by
    /// 1/(1-rate). rate 0 is an identity and consumes no randomness.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut ChaCha8Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(alloc::format!("dropout rate {rate} outside [0,1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.dims(x);
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> =
            (0..r * c).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale }).collect();
        self.mul_mask(x, mask)
    }

    // ── matrix ops ───────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let mut v = vec![0.0; m * n];
        mm(&self.node(a).value, &self.node(b).value, m, k, n, &mut v);
        Ok(self.push(m, n, v, self.req2(a, b), Op::MatMul(a, b)))
    }

    /// a (m x k) times the transpose of b (n x k), yielding m x n.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul-nt", (m, k), (n, k2)));
        }
        let mut v = vec![0.0; m * n];
        mm_nt(&self.node(a).value, &self.node(b).value, m, k, n, &mut v);
        Ok(self.push(m, n, v, self.req2(a, b), Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(a);
        let src = &self.node(a).value;
        let mut v = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                v[j * r + i] = src[i * c + j];
            }
        }
        let req = self.node(a).requires;
        Ok(self.push(c, r, v, req, Op::Transpose(a)))
    }

    // ── row-structure ops ────────────────────────────────────────────────

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        for &i in idx {
            if i >= r {
                return Err(Error::Index { op: "gather-rows", index: i, len: r });
            }
        }
        let src = &self.node(x).value;
        let mut v = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            v.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let req = self.node(x).requires;
        Ok(self.push(idx.len(), c, v, req, Op::GatherRows { x, idx: idx.to_vec() }))
    }

    /// Repeat a single-row node k times.
    pub fn tile_rows(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let (r, _) = self.dims(x);
        if r != 1 {
            return Err(Error::contract(alloc::format!("tile_rows expects one row, found {r}")));
        }
        self.gather_rows(x, &vec![0; k])
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::contract(String::from("concat_rows needs at least one part")));
        };
        let (_, c) = self.dims(first);
        let mut rows = 0;
        let mut req = false;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return Err(shape_err("concat-rows", (rows, c), (pr, pc)));
            }
            rows += pr;
            req |= self.node(p).requires;
        }
        let mut v = Vec::with_capacity(rows * c);
        for &p in parts {
            v.extend_from_slice(&self.node(p).value);
        }
        Ok(self.push(rows, c, v, req, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::contract(String::from("concat_cols needs at least one part")));
        };
        let (r, _) = self.dims(first);
        let mut cols = 0;
        let mut req = false;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(shape_err("concat-cols", (r, cols), (pr, pc)));
            }
            cols += pc;
            req |= self.node(p).requires;
        }
        let mut v = vec![0.0; r * cols];
        let mut off = 0;
        for &p in parts {
            let (_, pc) = self.dims(p);
            let src = &self.node(p).value;
            for i in 0..r {
                v[i * cols + off..i * cols + off + pc].copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        Ok(self.push(r, cols, v, req, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if start + len > r {
            return Err(Error::Index { op: "slice-rows", index: start + len, len: r });
        }
        let v = self.node(x).value[start * c..(start + len) * c].to_vec();
        let req = self.node(x).requires;
        Ok(self.push(len, c, v, req, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(Error::Index { op: "slice-cols", index: start + len, len: c });
        }
        let src = &self.node(x).value;
        let mut v = Vec::with_capacity(r * len);
        for i in 0..r {
            v.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let req = self.node(x).requires;
        Ok(self.push(r, len, v, req, Op::SliceCols { x, start }))
    }

    // ── nonlinearities and reductions ────────────────────────────────────

    /// Row-wise softmax with max subtraction. Inputs must be finite.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        if c == 0 {
            return Err(shape_err("softmax", (r, c), (r, 1)));
        }
        let src = &self.node(x).value;
        if !all_finite(src) {
            return Err(Error::numeric(String::from("softmax input contains a non-finite value")));
        }
        let mut v = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut v[i * c..(i + 1) * c];
            let mut s = 0.0;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = libm::exp(x - m);
                s += *o;
            }
            for o in out.iter_mut() {
                *o /= s;
            }
        }
        let req = self.node(x).requires;
        Ok(self.push(r, c, v, req, Op::SoftmaxRows(x)))
    }

    /// Row-wise layer normalization with learned gain and bias (1 x c each).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        let (gr, gc) = self.dims(gain);
        let (br, bc) = self.dims(bias);
        if c == 0 {
            return Err(shape_err("layer-norm", (r, c), (1, 1)));
        }
        if gr != 1 || gc != c {
            return Err(shape_err("layer-norm", (r, c), (gr, gc)));
        }
        if br != 1 || bc != c {
            return Err(shape_err("layer-norm", (r, c), (br, bc)));
        }
        if eps < 0.0 {
            return Err(Error::config(alloc::format!("layer_norm eps {eps} must be >= 0")));
        }
        let src = &self.node(x).value;
        let gv = &self.node(gain).value;
        let bv = &self.node(bias).value;
        let mut v = vec![0.0; r * c];
        let mut cache = Vec::with_capacity(r);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let denom = var + eps;
            if denom <= 0.0 {
                return Err(Error::numeric(alloc::format!(
                    "layer_norm variance+eps = {denom} is not positive (row {i})"
                )));
            }
            let inv = 1.0 / libm::sqrt(denom);
            cache.push((mean, inv));
            let out = &mut v[i * c..(i + 1) * c];
            for j in 0..c {
                out[j] = (row[j] - mean) * inv * gv[j] + bv[j];
            }
        }
        let req = self.node(x).requires || self.node(gain).requires || self.node(bias).requires;
        Ok(self.push(r, c, v, req, Op::LayerNorm { x, gain, bias, cache }))
    }

    /// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims(x);
        let v: Vec<f64> = self
            .node(x)
            .value
            .iter()
            .map(|&x| 0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2)))
            .collect();
        let req = self.node(x).requires;
        Ok(self.push(r, c, v, req, Op::Gelu(x)))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.node(x).value.iter().sum();
        let req = self.node(x).requires;
        Ok(self.push(1, 1, vec![s], req, Op::Sum(x)))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x).value.len();
        if n == 0 {
            return Err(Error::contract(String::from("mean of an empty tensor")));
        }
        let s: f64 = self.node(x).value.iter().sum::<f64>() / n as f64;
        let req = self.node(x).requires;
        Ok(self.push(1, 1, vec![s], req, Op::Mean(x)))
    }

    /// Maximum over all elements; gradient routes to the first argmax.
    pub fn max_all(&mut self, x: NodeId) -> Result<NodeId> {
        let src = &self.node(x).value;
        if src.is_empty() {
            return Err(Error::contract(String::from("max of an empty tensor")));
        }
        if !all_finite(src) {
            return Err(Error::numeric(String::from("max input contains a non-finite value")));
        }
        let mut argmax = 0;
        let mut best = src[0];
        for (i, &v) in src.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                argmax = i;
            }
        }
        let req = self.node(x).requires;
        Ok(self.push(1, 1, vec![best], req, Op::MaxAll { x, argmax }))
    }

    /// Cross-entropy of a flattened logit vector against one target index:
    /// log-sum-exp(logits) - logits[target].
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let src = &self.node(logits).value;
        let n = src.len();
        if target >= n {
            return Err(Error::Index { op: "cross-entropy", index: target, len: n });
        }
        if !all_finite(src) {
            return Err(Error::numeric(String::from(
                "cross_entropy logits contain a non-finite value",
            )));
        }
        let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut probs = vec![0.0; n];
        for (p, &x) in probs.iter_mut().zip(src) {
            *p = libm::exp(x - m);
            sum += *p;
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
        let loss = libm::log(sum) + m - src[target];
        let req = self.node(logits).requires;
        Ok(self.push(1, 1, vec![loss], req, Op::CrossEntropy { logits, target, probs }))
    }

    /// Mean over rows of per-row cross-entropy against per-row targets.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(shape_err("cross-entropy-rows", (r, c), (targets.len(), 1)));
        }
        if r == 0 {
            return Err(Error::contract(String::from("cross_entropy_rows over zero rows")));
        }
        let src = &self.node(logits).value;
        if !all_finite(src) {
            return Err(Error::numeric(String::from(
                "cross_entropy logits contain a non-finite value",
            )));
        }
        let mut probs = vec![0.0; r * c];
        let mut total = 0.0;
        for i in 0..r {
            let t = targets[i];
            if t >= c {
                return Err(Error::Index { op: "cross-entropy-rows", index: t, len: c });
            }
            let row = &src[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let prow = &mut probs[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = libm::exp(x - m);
                sum += *p;
            }
            for p in prow.iter_mut() {
                *p /= sum;
            }
            total += libm::log(sum) + m - row[t];
        }
        let loss = total / r as f64;
        let req = self.node(logits).requires;
        Ok(self.push(
            1,
            1,
            vec![loss],
            req,
            Op::CrossEntropyRows { logits, targets: targets.to_vec(), probs },
        ))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients for nodes the loss does
    /// not reach stay zero (see [`Graph::grad`]).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::contract(alloc::format!(
                "backward requires a scalar loss, found {}x{}",
                ln.rows, ln.cols
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.idx()] = Some(vec![1.0]);

        for id in (0..=loss.idx()).rev() {
            if !self.nodes[id].requires {
                continue;
            }
            let Some(gout) = self.grads[id].take() else { continue };
            self.apply_backward(id, &gout);
            self.grads[id] = Some(gout);
        }
        Ok(())
    }

    /// Gradient of the last backward pass for `id`; zeros if unreached.
    pub fn grad(&self, id: NodeId) -> Vec<f64> {
        match &self.grads[id.idx()] {
            Some(g) => g.clone(),
            None => vec![0.0; self.node(id).value.len()],
        }
    }

    fn acc_into(&mut self, target: NodeId, f: impl FnOnce(&mut [f64], &[Node])) {
        if !self.nodes[target.idx()].requires {
            return;
        }
        let len = self.nodes[target.idx()].value.len();
        let mut g = self.grads[target.idx()].take().unwrap_or_else(|| vec![0.0; len]);
        f(&mut g, &self.nodes);
        self.grads[target.idx()] = Some(g);
    }

    fn apply_backward(&mut self, id: usize, gout: &[f64]) {
        // Ops are matched by moving lightweight copies of operand ids out of
        // the node so `self` stays free for accumulation.
        let op = core::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        let (rows, cols) = (self.nodes[id].rows, self.nodes[id].cols);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.acc_into(a, |g, _| {
                    for (o, &x) in g.iter_mut().zip(gout) {
                        *o += x;
                    }
                });
                self.acc_into(b, |g, _| {
                    for (o, &x) in g.iter_mut().zip(gout) {
                        *o += x;
                    }
                });
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.acc_into(a, |g, _| {
                    for (o, &x) in g.iter_mut().zip(gout) {
                        *o += x;
                    }
                });
                self.acc_into(b, |g, _| {
                    for (o, &x) in g.iter_mut().zip(gout) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc_into(a, |g, nodes| {
                    for ((o, &x), &bv) in g.iter_mut().zip(gout).zip(&nodes[b.idx()].value) {
                        *o += x * bv;
                    }
                });
                self.acc_into(b, |g, nodes| {
                    for ((o, &x), &av) in g.iter_mut().zip(gout).zip(&nodes[a.idx()].value) {
                        *o += x * av;
                    }
                });
            }
            Op::AddRow(m, row) => {
                let (m, row) = (*m, *row);
                self.acc_into(m, |g, _| {
                    for (o, &x) in g.iter_mut().zip(gout) {
                        *o += x;
                    }
                });
                self.acc_into(row, |g, _| {
                    for i in 0..rows {
                        for j in 0..cols {
                            g[j] += gout[i * cols + j];
                        }
                    }
                });
            }
            Op::Scale(a, k) => {
                let (a, k) = (*a, *k);
                self.acc_into(a, |g, _| {
                    for (o, &x) in g.iter_mut().zip(gout) {
                        *o += k * x;
                    }
                });
            }
            Op::WeightedSum(terms) => {
                for &(t, w) in terms {
                    self.acc_into(t, |g, _| {
                        for (o, &x) in g.iter_mut().zip(gout) {
                            *o += w * x;
                        }
                    });
                }
            }
            Op::MulMask { x, mask } => {
                let x = *x;
                self.acc_into(x, |g, _| {
                    for ((o, &gv), &mv) in g.iter_mut().zip(gout).zip(mask) {
                        *o += gv * mv;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.nodes[a.idx()].rows, self.nodes[a.idx()].cols);
                let n = cols;
                self.acc_into(a, |g, nodes| {
                    mm_nt(gout, &nodes[b.idx()].value, m, n, k, g);
                });
                self.acc_into(b, |g, nodes| {
                    mm_tn(&nodes[a.idx()].value, gout, m, k, n, g);
                });
            }
            Op::MatMulNT(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.nodes[a.idx()].rows, self.nodes[a.idx()].cols);
                let n = cols;
                self.acc_into(a, |g, nodes| {
                    mm(gout, &nodes[b.idx()].value, m, n, k, g);
                });
                self.acc_into(b, |g, nodes| {
                    mm_tn(gout, &nodes[a.idx()].value, m, n, k, g);
                });
            }
            Op::Transpose(a) => {
                let a = *a;
                self.acc_into(a, |g, _| {
                    // node is c x r where a is r x c
                    let (tr, tc) = (rows, cols);
                    for i in 0..tr {
                        for j in 0..tc {
                            g[j * tr + i] += gout[i * tc + j];
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let x = *x;
                let y = self.nodes[id].value.clone();
                self.acc_into(x, |g, _| {
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &gout[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let out = &mut g[i * cols..(i + 1) * cols];
                        for j in 0..cols {
                            out[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, cache } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let xv = self.nodes[x.idx()].value.clone();
                let gv = self.nodes[gain.idx()].value.clone();
                self.acc_into(gain, |g, _| {
                    for i in 0..rows {
                        let (mean, inv) = cache[i];
                        for j in 0..cols {
                            let xhat = (xv[i * cols + j] - mean) * inv;
                            g[j] += gout[i * cols + j] * xhat;
                        }
                    }
                });
                self.acc_into(bias, |g, _| {
                    for i in 0..rows {
                        for j in 0..cols {
                            g[j] += gout[i * cols + j];
                        }
                    }
                });
                self.acc_into(x, |g, _| {
                    let cf = cols as f64;
                    for i in 0..rows {
                        let (mean, inv) = cache[i];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..cols {
                            let xhat = (xv[i * cols + j] - mean) * inv;
                            let dxhat = gout[i * cols + j] * gv[j];
                            m1 += dxhat;
                            m2 += dxhat * xhat;
                        }
                        m1 /= cf;
                        m2 /= cf;
                        for j in 0..cols {
                            let xhat = (xv[i * cols + j] - mean) * inv;
                            let dxhat = gout[i * cols + j] * gv[j];
                            g[i * cols + j] += inv * (dxhat - m1 - xhat * m2);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let x = *x;
                self.acc_into(x, |g, nodes| {
                    for ((o, &gv), &xv) in g.iter_mut().zip(gout).zip(&nodes[x.idx()].value) {
                        let phi = 0.5 * (1.0 + libm::erf(xv * INV_SQRT_2));
                        let pdf = INV_SQRT_2PI * libm::exp(-0.5 * xv * xv);
                        *o += gv * (phi + xv * pdf);
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let x = *x;
                self.acc_into(x, |g, _| {
                    for (out_i, &src_i) in idx.iter().enumerate() {
                        for j in 0..cols {
                            g[src_i * cols + j] += gout[out_i * cols + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pr = self.nodes[p.idx()].rows;
                    let slice = gout[off * cols..(off + pr) * cols].to_vec();
                    self.acc_into(p, |g, _| {
                        for (o, &x) in g.iter_mut().zip(&slice) {
                            *o += x;
                        }
                    });
                    off += pr;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.nodes[p.idx()].cols;
                    let start = off;
                    self.acc_into(p, |g, _| {
                        for i in 0..rows {
                            for j in 0..pc {
                                g[i * pc + j] += gout[i * cols + start + j];
                            }
                        }
                    });
                    off += pc;
                }
            }
            Op::SliceRows { x, start } => {
                let (x, start) = (*x, *start);
                self.acc_into(x, |g, _| {
                    for i in 0..rows {
                        for j in 0..cols {
                            g[(start + i) * cols + j] += gout[i * cols + j];
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (x, start) = (*x, *start);
                let xc = self.nodes[x.idx()].cols;
                self.acc_into(x, |g, _| {
                    for i in 0..rows {
                        for j in 0..cols {
                            g[i * xc + start + j] += gout[i * cols + j];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let x = *x;
                self.acc_into(x, |g, _| {
                    for o in g.iter_mut() {
                        *o += gout[0];
                    }
                });
            }
            Op::Mean(x) => {
                let x = *x;
                let n = self.nodes[x.idx()].value.len() as f64;
                self.acc_into(x, |g, _| {
                    for o in g.iter_mut() {
                        *o += gout[0] / n;
                    }
                });
            }
            Op::MaxAll { x, argmax } => {
                let (x, argmax) = (*x, *argmax);
                self.acc_into(x, |g, _| {
                    g[argmax] += gout[0];
                });
            }
            Op::CrossEntropy { logits, target, probs } => {
                let (logits, target) = (*logits, *target);
                self.acc_into(logits, |g, _| {
                    for (i, (o, &p)) in g.iter_mut().zip(probs).enumerate() {
                        let delta = if i == target { 1.0 } else { 0.0 };
                        *o += gout[0] * (p - delta);
                    }
                });
            }
            Op::CrossEntropyRows { logits, targets, probs } => {
                let logits = *logits;
                let r = targets.len() as f64;
                self.acc_into(logits, |g, nodes| {
                    let c = nodes[logits.idx()].cols;
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let delta = if j == t { 1.0 } else { 0.0 };
                            g[i * c + j] += gout[0] * (probs[i * c + j] - delta) / r;
                        }
                    }
                });
            }
        }
        self.nodes[id].op = op;
    }
}
