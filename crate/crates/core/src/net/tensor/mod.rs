//! Minimal reverse-mode automatic differentiation over row-major 2D tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tensor::backward`]
//! on a scalar then produces exact gradients for every recorded node. Values
//! are immutable once created and shared via `Rc`, so cloning handles is
//! cheap. The tape is single-threaded by design: training is a
//! one-step-at-a-time state machine, while inference with frozen parameters
//! reads plain `f64` buffers and can run anywhere.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

struct TapeInner {
    nodes: Vec<Node>,
}

struct Node {
    rows: usize,
    cols: usize,
    values: Rc<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRowBroadcast(usize, usize),
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Gelu(usize),
    Sigmoid(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, mean: Vec<f64>, inv_std: Vec<f64> },
    SoftmaxRows(usize),
    ConcatCols(usize, usize),
    ConcatRows(Vec<usize>),
    SliceCols { x: usize, start: usize, len: usize },
    Reshape(usize),
    GatherRows { x: usize, idx: Rc<Vec<usize>> },
    GatherCsr { x: usize, offsets: Rc<Vec<usize>>, idx: Rc<Vec<usize>>, w: Rc<Vec<f64>> },
    SegmentMax { x: usize, argmax: Vec<usize> },
    Sum(usize),
    Mean(usize),
    BceLogits { x: usize, targets: Rc<Vec<f64>>, weights: Option<Rc<Vec<f64>>> },
    DiceLogits { x: usize, targets: Rc<Vec<f64>> },
    SoftmaxCrossEntropy { x: usize, targets: Rc<Vec<usize>>, weights: Option<Rc<Vec<f64>>> },
    SquaredError { x: usize, targets: Rc<Vec<f64>> },
}

/// Handle to a node on a tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
}

/// Gradients of a scalar with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })) }
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, rows: usize, cols: usize, values: Vec<f64>, op: Op, needs_grad: bool) -> Tensor {
        debug_assert_eq!(values.len(), rows * cols);
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite values entering the tape"
        );
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { rows, cols, values: Rc::new(values), op, needs_grad });
        Tensor { tape: self.clone(), id }
    }

    /// Differentiable input (parameters, anything that needs gradients).
    pub fn leaf(&self, rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        self.push(rows, cols, values, Op::Leaf, true)
    }

    /// Non-differentiable input (positional encodings, labels, features of
    /// frozen stages).
    pub fn constant(&self, rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        self.push(rows, cols, values, Op::Constant, false)
    }

    pub fn scalar_constant(&self, v: f64) -> Tensor {
        self.constant(1, 1, vec![v])
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn matmul_nt_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    // C[i, j] = <A row i, B row j>
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stabilized binary cross-entropy of a logit.
fn bce_term(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].rows
    }

    pub fn cols(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].cols
    }

    pub fn shape(&self) -> (usize, usize) {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.id];
        (n.rows, n.cols)
    }

    /// Snapshot of the forward values.
    pub fn values(&self) -> Rc<Vec<f64>> {
        self.tape.inner.borrow().nodes[self.id].values.clone()
    }

    pub fn scalar(&self) -> f64 {
        let v = self.values();
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    fn unary(&self, rows: usize, cols: usize, values: Vec<f64>, op: Op) -> Tensor {
        let needs = self.tape.inner.borrow().nodes[self.id].needs_grad;
        self.tape.push(rows, cols, values, op, needs)
    }

    fn binary(&self, o: &Tensor, rows: usize, cols: usize, values: Vec<f64>, op: Op) -> Tensor {
        let inner = self.tape.inner.borrow();
        let needs = inner.nodes[self.id].needs_grad || inner.nodes[o.id].needs_grad;
        drop(inner);
        self.tape.push(rows, cols, values, op, needs)
    }

    pub fn add(&self, o: &Tensor) -> Tensor {
        let (r, c) = self.shape();
        assert_eq!((r, c), o.shape(), "add shape mismatch");
        let a = self.values();
        let b = o.values();
        let v = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
        self.binary(o, r, c, v, Op::Add(self.id, o.id))
    }

    pub fn sub(&self, o: &Tensor) -> Tensor {
        let (r, c) = self.shape();
        assert_eq!((r, c), o.shape(), "sub shape mismatch");
        let a = self.values();
        let b = o.values();
        let v = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        self.binary(o, r, c, v, Op::Sub(self.id, o.id))
    }

    pub fn mul(&self, o: &Tensor) -> Tensor {
        let (r, c) = self.shape();
        assert_eq!((r, c), o.shape(), "mul shape mismatch");
        let a = self.values();
        let b = o.values();
        let v = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        self.binary(o, r, c, v, Op::Mul(self.id, o.id))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let (r, c) = self.shape();
        let v = self.values().iter().map(|x| x * s).collect();
        self.unary(r, c, v, Op::Scale(self.id, s))
    }

    /// x [n×d] + bias [1×d], broadcast over rows.
    pub fn add_row_broadcast(&self, bias: &Tensor) -> Tensor {
        let (r, c) = self.shape();
        let (br, bc) = bias.shape();
        assert_eq!((br, bc), (1, c), "bias shape mismatch");
        let a = self.values();
        let b = bias.values();
        let mut v = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                v.push(a[i * c + j] + b[j]);
            }
        }
        self.binary(bias, r, c, v, Op::AddRowBroadcast(self.id, bias.id))
    }

    pub fn matmul(&self, o: &Tensor) -> Tensor {
        let (m, k) = self.shape();
        let (k2, n) = o.shape();
        assert_eq!(k, k2, "matmul inner dim mismatch");
        let v = matmul_kernel(&self.values(), &o.values(), m, k, n);
        self.binary(o, m, n, v, Op::MatMul(self.id, o.id))
    }

    /// self [m×k] · otherᵀ where other is [n×k].
    pub fn matmul_nt(&self, o: &Tensor) -> Tensor {
        let (m, k) = self.shape();
        let (n, k2) = o.shape();
        assert_eq!(k, k2, "matmul_nt inner dim mismatch");
        let v = matmul_nt_kernel(&self.values(), &o.values(), m, k, n);
        self.binary(o, m, n, v, Op::MatMulNT(self.id, o.id))
    }

    pub fn gelu(&self) -> Tensor {
        let (r, c) = self.shape();
        let v = self.values().iter().map(|&x| gelu(x)).collect();
        self.unary(r, c, v, Op::Gelu(self.id))
    }

    pub fn sigmoid(&self) -> Tensor {
        let (r, c) = self.shape();
        let v = self.values().iter().map(|&x| sigmoid(x)).collect();
        self.unary(r, c, v, Op::Sigmoid(self.id))
    }

    /// Row-wise layer normalization with learned gain and bias ([1×d] each).
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
        let (r, c) = self.shape();
        assert_eq!(gamma.shape(), (1, c));
        assert_eq!(beta.shape(), (1, c));
        let x = self.values();
        let g = gamma.values();
        let b = beta.values();
        let mut v = Vec::with_capacity(r * c);
        let mut means = Vec::with_capacity(r);
        let mut inv_stds = Vec::with_capacity(r);
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&y| (y - mean) * (y - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            means.push(mean);
            inv_stds.push(inv_std);
            for j in 0..c {
                v.push((row[j] - mean) * inv_std * g[j] + b[j]);
            }
        }
        let inner = self.tape.inner.borrow();
        let needs = inner.nodes[self.id].needs_grad
            || inner.nodes[gamma.id].needs_grad
            || inner.nodes[beta.id].needs_grad;
        drop(inner);
        self.tape.push(
            r,
            c,
            v,
            Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, mean: means, inv_std: inv_stds },
            needs,
        )
    }

    /// Row-wise softmax with an optional constant additive bias (masking).
    pub fn softmax_rows(&self, bias: Option<&[f64]>) -> Tensor {
        let (r, c) = self.shape();
        if let Some(b) = bias {
            assert_eq!(b.len(), r * c, "softmax bias shape mismatch");
        }
        let x = self.values();
        let mut v = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let biased: Vec<f64> = match bias {
                Some(b) => row.iter().zip(&b[i * c..(i + 1) * c]).map(|(a, m)| a + m).collect(),
                None => row.to_vec(),
            };
            let max = biased.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = biased.iter().map(|&y| (y - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for e in exps {
                v.push(e / sum);
            }
        }
        self.unary(r, c, v, Op::SoftmaxRows(self.id))
    }

    pub fn concat_cols(&self, o: &Tensor) -> Tensor {
        let (r, c1) = self.shape();
        let (r2, c2) = o.shape();
        assert_eq!(r, r2, "concat_cols row mismatch");
        let a = self.values();
        let b = o.values();
        let mut v = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            v.extend_from_slice(&a[i * c1..(i + 1) * c1]);
            v.extend_from_slice(&b[i * c2..(i + 1) * c2]);
        }
        self.binary(o, r, c1 + c2, v, Op::ConcatCols(self.id, o.id))
    }

    pub fn concat_rows(tensors: &[Tensor]) -> Tensor {
        assert!(!tensors.is_empty());
        let tape = tensors[0].tape.clone();
        let cols = tensors[0].cols();
        let mut rows = 0;
        let mut v = Vec::new();
        let mut needs = false;
        for t in tensors {
            assert_eq!(t.cols(), cols, "concat_rows col mismatch");
            rows += t.rows();
            v.extend_from_slice(&t.values());
            needs |= tape.inner.borrow().nodes[t.id].needs_grad;
        }
        tape.push(rows, cols, v, Op::ConcatRows(tensors.iter().map(|t| t.id).collect()), needs)
    }

    /// Same values under a new (rows, cols) factorization.
    pub fn reshape(&self, rows: usize, cols: usize) -> Tensor {
        let (r, c) = self.shape();
        assert_eq!(r * c, rows * cols, "reshape must preserve the element count");
        let v = self.values().to_vec();
        self.unary(rows, cols, v, Op::Reshape(self.id))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Tensor {
        let (r, c) = self.shape();
        assert!(start + len <= c, "slice_cols out of range");
        let x = self.values();
        let mut v = Vec::with_capacity(r * len);
        for i in 0..r {
            v.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        self.unary(r, len, v, Op::SliceCols { x: self.id, start, len })
    }

    /// Rows re-indexed by `idx` (repeats allowed).
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let (r, c) = self.shape();
        let x = self.values();
        let mut v = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "gather_rows index out of range");
            v.extend_from_slice(&x[i * c..(i + 1) * c]);
        }
        self.unary(
            idx.len(),
            c,
            v,
            Op::GatherRows { x: self.id, idx: Rc::new(idx.to_vec()) },
        )
    }

    /// CSR-style weighted gather: output row r is Σ_j w[j]·x[idx[j]] for
    /// j in offsets[r]..offsets[r+1]. Covers trilinear interpolation,
    /// neighborhood means, and any fixed sparse linear map.
    pub fn gather_csr(&self, offsets: Rc<Vec<usize>>, idx: Rc<Vec<usize>>, w: Rc<Vec<f64>>) -> Tensor {
        let (r, c) = self.shape();
        assert_eq!(idx.len(), w.len());
        assert_eq!(*offsets.last().unwrap(), idx.len());
        let x = self.values();
        let out_rows = offsets.len() - 1;
        let mut v = vec![0.0; out_rows * c];
        for row in 0..out_rows {
            let dst = &mut v[row * c..(row + 1) * c];
            for j in offsets[row]..offsets[row + 1] {
                let src = idx[j];
                assert!(src < r, "gather_csr index out of range");
                let weight = w[j];
                for (d, s) in dst.iter_mut().zip(&x[src * c..(src + 1) * c]) {
                    *d += weight * s;
                }
            }
        }
        self.unary(out_rows, c, v, Op::GatherCsr { x: self.id, offsets, idx, w })
    }

    /// Per-segment column-wise max pooling; segment s covers rows
    /// offsets[s]..offsets[s+1] (each segment nonempty).
    pub fn segment_max(&self, offsets: Rc<Vec<usize>>) -> Tensor {
        let (r, c) = self.shape();
        assert_eq!(*offsets.last().unwrap(), r);
        let x = self.values();
        let segs = offsets.len() - 1;
        let mut v = Vec::with_capacity(segs * c);
        let mut argmax = Vec::with_capacity(segs * c);
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            assert!(lo < hi, "empty segment in segment_max");
            for j in 0..c {
                let mut best = x[lo * c + j];
                let mut best_row = lo;
                for row in lo + 1..hi {
                    let val = x[row * c + j];
                    if val > best {
                        best = val;
                        best_row = row;
                    }
                }
                v.push(best);
                argmax.push(best_row);
            }
        }
        self.unary(segs, c, v, Op::SegmentMax { x: self.id, argmax })
    }

    pub fn sum(&self) -> Tensor {
        let v = self.values().iter().sum();
        self.unary(1, 1, vec![v], Op::Sum(self.id))
    }

    pub fn mean(&self) -> Tensor {
        let vals = self.values();
        let v = vals.iter().sum::<f64>() / vals.len() as f64;
        self.unary(1, 1, vec![v], Op::Mean(self.id))
    }

    /// Weighted-mean binary cross-entropy over logits (scalar).
    pub fn bce_with_logits(&self, targets: &[f64], weights: Option<&[f64]>) -> Tensor {
        let vals = self.values();
        assert_eq!(vals.len(), targets.len(), "bce target length mismatch");
        if let Some(w) = weights {
            assert_eq!(w.len(), targets.len());
        }
        let wsum: f64 = match weights {
            Some(w) => w.iter().sum(),
            None => vals.len() as f64,
        };
        let mut acc = 0.0;
        for (i, (&l, &t)) in vals.iter().zip(targets).enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            acc += w * bce_term(l, t);
        }
        let v = if wsum > 0.0 { acc / wsum } else { 0.0 };
        self.unary(
            1,
            1,
            vec![v],
            Op::BceLogits {
                x: self.id,
                targets: Rc::new(targets.to_vec()),
                weights: weights.map(|w| Rc::new(w.to_vec())),
            },
        )
    }

    /// Smoothed DICE loss over logits (scalar): 1 − (2·Σσg + ε)/(Σσ + Σg + ε).
    pub fn dice_with_logits(&self, targets: &[f64]) -> Tensor {
        let vals = self.values();
        assert_eq!(vals.len(), targets.len(), "dice target length mismatch");
        let eps = 1.0;
        let mut inter = 0.0;
        let mut denom = 0.0;
        for (&l, &t) in vals.iter().zip(targets) {
            let s = sigmoid(l);
            inter += s * t;
            denom += s + t;
        }
        let v = 1.0 - (2.0 * inter + eps) / (denom + eps);
        self.unary(1, 1, vec![v], Op::DiceLogits { x: self.id, targets: Rc::new(targets.to_vec()) })
    }

    /// Mean softmax cross-entropy over rows against integer class targets.
    pub fn softmax_cross_entropy(&self, targets: &[usize]) -> Tensor {
        self.softmax_cross_entropy_weighted(targets, None)
    }

    /// Weighted-mean softmax cross-entropy: row i contributes with weight
    /// w[i], normalized by the weight sum.
    pub fn softmax_cross_entropy_weighted(
        &self,
        targets: &[usize],
        weights: Option<&[f64]>,
    ) -> Tensor {
        let (r, c) = self.shape();
        assert_eq!(r, targets.len(), "ce target length mismatch");
        if let Some(w) = weights {
            assert_eq!(w.len(), r, "ce weight length mismatch");
        }
        let x = self.values();
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < c, "ce class out of range");
            let w = weights.map_or(1.0, |w| w[i]);
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            acc += w * (lse - row[t]);
            wsum += w;
        }
        let v = if wsum > 0.0 { acc / wsum } else { 0.0 };
        self.unary(
            1,
            1,
            vec![v],
            Op::SoftmaxCrossEntropy {
                x: self.id,
                targets: Rc::new(targets.to_vec()),
                weights: weights.map(|w| Rc::new(w.to_vec())),
            },
        )
    }

    /// Mean squared error against constant targets (scalar).
    pub fn squared_error(&self, targets: &[f64]) -> Tensor {
        let vals = self.values();
        assert_eq!(vals.len(), targets.len(), "squared_error length mismatch");
        let v = vals
            .iter()
            .zip(targets)
            .map(|(&x, &t)| (x - t) * (x - t))
            .sum::<f64>()
            / vals.len() as f64;
        self.unary(
            1,
            1,
            vec![v],
            Op::SquaredError { x: self.id, targets: Rc::new(targets.to_vec()) },
        )
    }

    /// Reverse-mode gradients of this scalar with respect to every node.
    pub fn backward(&self) -> Result<Gradients> {
        let inner = self.tape.inner.borrow();
        let nodes = &inner.nodes;
        let out = &nodes[self.id];
        if out.rows * out.cols != 1 {
            return Err(Error::InvalidState(
                "backward requires a scalar output".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.id + 1];
        grads[self.id] = Some(vec![1.0]);

        for id in (0..=self.id).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                grads[id] = Some(gy);
                continue;
            }

            macro_rules! acc {
                ($pid:expr, $len:expr) => {{
                    let pid = $pid;
                    if grads[pid].is_none() {
                        grads[pid] = Some(vec![0.0; $len]);
                    }
                    grads[pid].as_mut().unwrap()
                }};
            }
            let plen = |pid: usize| nodes[pid].rows * nodes[pid].cols;

            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    for (g, q) in acc!(*a, plen(*a)).iter_mut().zip(&gy) {
                        *g += q;
                    }
                    for (g, q) in acc!(*b, plen(*b)).iter_mut().zip(&gy) {
                        *g += q;
                    }
                }
                Op::Sub(a, b) => {
                    for (g, q) in acc!(*a, plen(*a)).iter_mut().zip(&gy) {
                        *g += q;
                    }
                    for (g, q) in acc!(*b, plen(*b)).iter_mut().zip(&gy) {
                        *g -= q;
                    }
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].values.clone();
                    let bv = nodes[*b].values.clone();
                    {
                        let ga = acc!(*a, plen(*a));
                        for i in 0..gy.len() {
                            ga[i] += gy[i] * bv[i];
                        }
                    }
                    let gb = acc!(*b, plen(*b));
                    for i in 0..gy.len() {
                        gb[i] += gy[i] * av[i];
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc!(*a, plen(*a));
                    for i in 0..gy.len() {
                        ga[i] += gy[i] * s;
                    }
                }
                Op::AddRowBroadcast(a, b) => {
                    let cols = nodes[*b].cols;
                    {
                        let ga = acc!(*a, plen(*a));
                        for i in 0..gy.len() {
                            ga[i] += gy[i];
                        }
                    }
                    let gb = acc!(*b, plen(*b));
                    for (i, q) in gy.iter().enumerate() {
                        gb[i % cols] += q;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[*a].rows, nodes[*a].cols);
                    let n = nodes[*b].cols;
                    let av = nodes[*a].values.clone();
                    let bv = nodes[*b].values.clone();
                    {
                        // dA = dC · Bᵀ
                        let ga = acc!(*a, plen(*a));
                        for i in 0..m {
                            for kk in 0..k {
                                let brow = &bv[kk * n..(kk + 1) * n];
                                let grow = &gy[i * n..(i + 1) * n];
                                let mut s = 0.0;
                                for (q, bvv) in grow.iter().zip(brow) {
                                    s += q * bvv;
                                }
                                ga[i * k + kk] += s;
                            }
                        }
                    }
                    // dB = Aᵀ · dC
                    let gb = acc!(*b, plen(*b));
                    for i in 0..m {
                        let arow = &av[i * k..(i + 1) * k];
                        let grow = &gy[i * n..(i + 1) * n];
                        for (kk, &avv) in arow.iter().enumerate() {
                            if avv == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[kk * n..(kk + 1) * n];
                            for (d, q) in dst.iter_mut().zip(grow) {
                                *d += avv * q;
                            }
                        }
                    }
                }
                Op::MatMulNT(a, b) => {
                    // C = A·Bᵀ; A [m×k], B [n×k], C [m×n].
                    let (m, k) = (nodes[*a].rows, nodes[*a].cols);
                    let n = nodes[*b].rows;
                    let av = nodes[*a].values.clone();
                    let bv = nodes[*b].values.clone();
                    {
                        // dA = dC · B
                        let ga = acc!(*a, plen(*a));
                        for i in 0..m {
                            let grow = &gy[i * n..(i + 1) * n];
                            let dst = &mut ga[i * k..(i + 1) * k];
                            for (j, &q) in grow.iter().enumerate() {
                                if q == 0.0 {
                                    continue;
                                }
                                let brow = &bv[j * k..(j + 1) * k];
                                for (d, bvv) in dst.iter_mut().zip(brow) {
                                    *d += q * bvv;
                                }
                            }
                        }
                    }
                    // dB = dCᵀ · A
                    let gb = acc!(*b, plen(*b));
                    for i in 0..m {
                        let grow = &gy[i * n..(i + 1) * n];
                        let arow = &av[i * k..(i + 1) * k];
                        for (j, &q) in grow.iter().enumerate() {
                            if q == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[j * k..(j + 1) * k];
                            for (d, avv) in dst.iter_mut().zip(arow) {
                                *d += q * avv;
                            }
                        }
                    }
                }
                Op::Gelu(a) => {
                    let av = nodes[*a].values.clone();
                    let ga = acc!(*a, plen(*a));
                    for i in 0..gy.len() {
                        ga[i] += gy[i] * gelu_grad(av[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let yv = node.values.clone();
                    let ga = acc!(*a, plen(*a));
                    for i in 0..gy.len() {
                        ga[i] += gy[i] * yv[i] * (1.0 - yv[i]);
                    }
                }
                Op::LayerNorm { x, gamma, beta, mean, inv_std } => {
                    let (r, c) = (node.rows, node.cols);
                    let xv = nodes[*x].values.clone();
                    let gv = nodes[*gamma].values.clone();
                    {
                        let gx = acc!(*x, plen(*x));
                        for i in 0..r {
                            let xrow = &xv[i * c..(i + 1) * c];
                            let grow = &gy[i * c..(i + 1) * c];
                            let istd = inv_std[i];
                            let mu = mean[i];
                            // dxhat = dy ⊙ γ ; then the two projection terms.
                            let mut sum_dxh = 0.0;
                            let mut sum_dxh_xh = 0.0;
                            for j in 0..c {
                                let xh = (xrow[j] - mu) * istd;
                                let dxh = grow[j] * gv[j];
                                sum_dxh += dxh;
                                sum_dxh_xh += dxh * xh;
                            }
                            let inv_c = 1.0 / c as f64;
                            for j in 0..c {
                                let xh = (xrow[j] - mu) * istd;
                                let dxh = grow[j] * gv[j];
                                gx[i * c + j] +=
                                    istd * (dxh - inv_c * sum_dxh - xh * inv_c * sum_dxh_xh);
                            }
                        }
                    }
                    {
                        let gg = acc!(*gamma, plen(*gamma));
                        for i in 0..r {
                            for j in 0..c {
                                let xh = (xv[i * c + j] - mean[i]) * inv_std[i];
                                gg[j] += gy[i * c + j] * xh;
                            }
                        }
                    }
                    let gb = acc!(*beta, plen(*beta));
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += gy[i * c + j];
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (r, c) = (node.rows, node.cols);
                    let yv = node.values.clone();
                    let ga = acc!(*a, plen(*a));
                    for i in 0..r {
                        let yrow = &yv[i * c..(i + 1) * c];
                        let grow = &gy[i * c..(i + 1) * c];
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, q)| y * q).sum();
                        for j in 0..c {
                            ga[i * c + j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let c1 = nodes[*a].cols;
                    let c2 = nodes[*b].cols;
                    let r = node.rows;
                    {
                        let ga = acc!(*a, plen(*a));
                        for i in 0..r {
                            for j in 0..c1 {
                                ga[i * c1 + j] += gy[i * (c1 + c2) + j];
                            }
                        }
                    }
                    let gb = acc!(*b, plen(*b));
                    for i in 0..r {
                        for j in 0..c2 {
                            gb[i * c2 + j] += gy[i * (c1 + c2) + c1 + j];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let c = node.cols;
                    let mut row0 = 0;
                    for &pid in parts {
                        let pr = nodes[pid].rows;
                        {
                            let gp = acc!(pid, plen(pid));
                            for i in 0..pr * c {
                                gp[i] += gy[row0 * c + i];
                            }
                        }
                        row0 += pr;
                    }
                }
                Op::Reshape(a) => {
                    let ga = acc!(*a, plen(*a));
                    for i in 0..gy.len() {
                        ga[i] += gy[i];
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let c = nodes[*x].cols;
                    let r = node.rows;
                    let gx = acc!(*x, plen(*x));
                    for i in 0..r {
                        for j in 0..*len {
                            gx[i * c + start + j] += gy[i * len + j];
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let c = node.cols;
                    let gx = acc!(*x, plen(*x));
                    for (out_row, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx[src * c + j] += gy[out_row * c + j];
                        }
                    }
                }
                Op::GatherCsr { x, offsets, idx, w } => {
                    let c = node.cols;
                    let gx = acc!(*x, plen(*x));
                    for row in 0..offsets.len() - 1 {
                        let grow = &gy[row * c..(row + 1) * c];
                        for j in offsets[row]..offsets[row + 1] {
                            let src = idx[j];
                            let weight = w[j];
                            let dst = &mut gx[src * c..(src + 1) * c];
                            for (d, q) in dst.iter_mut().zip(grow) {
                                *d += weight * q;
                            }
                        }
                    }
                }
                Op::SegmentMax { x, argmax } => {
                    let c = node.cols;
                    let gx = acc!(*x, plen(*x));
                    for (flat, &src_row) in argmax.iter().enumerate() {
                        let j = flat % c;
                        gx[src_row * c + j] += gy[flat];
                    }
                }
                Op::Sum(a) => {
                    let ga = acc!(*a, plen(*a));
                    for g in ga.iter_mut() {
                        *g += gy[0];
                    }
                }
                Op::Mean(a) => {
                    let n = plen(*a) as f64;
                    let ga = acc!(*a, plen(*a));
                    for g in ga.iter_mut() {
                        *g += gy[0] / n;
                    }
                }
                Op::BceLogits { x, targets, weights } => {
                    let xv = nodes[*x].values.clone();
                    let wsum: f64 = match weights {
                        Some(w) => w.iter().sum(),
                        None => xv.len() as f64,
                    };
                    let gx = acc!(*x, plen(*x));
                    if wsum > 0.0 {
                        for i in 0..xv.len() {
                            let w = weights.as_ref().map_or(1.0, |w| w[i]);
                            gx[i] += gy[0] * w * (sigmoid(xv[i]) - targets[i]) / wsum;
                        }
                    }
                }
                Op::DiceLogits { x, targets } => {
                    let xv = nodes[*x].values.clone();
                    let eps = 1.0;
                    let mut inter = 0.0;
                    let mut denom = 0.0;
                    let sigs: Vec<f64> = xv.iter().map(|&l| sigmoid(l)).collect();
                    for (s, &t) in sigs.iter().zip(targets.iter()) {
                        inter += s * t;
                        denom += s + t;
                    }
                    let b = denom + eps;
                    let a2 = 2.0 * inter + eps;
                    let gx = acc!(*x, plen(*x));
                    for i in 0..xv.len() {
                        // d/dσ of 1 − (2A+ε)/B with A = Σσg, B = Σσ + Σg + ε.
                        let dv = -(2.0 * targets[i] * b - a2) / (b * b);
                        gx[i] += gy[0] * dv * sigs[i] * (1.0 - sigs[i]);
                    }
                }
                Op::SoftmaxCrossEntropy { x, targets, weights } => {
                    let (r, c) = (nodes[*x].rows, nodes[*x].cols);
                    let xv = nodes[*x].values.clone();
                    let wsum: f64 = match weights {
                        Some(w) => w.iter().sum(),
                        None => r as f64,
                    };
                    let gx = acc!(*x, plen(*x));
                    if wsum > 0.0 {
                        for i in 0..r {
                            let w = weights.as_ref().map_or(1.0, |w| w[i]);
                            let row = &xv[i * c..(i + 1) * c];
                            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                            let sum: f64 = exps.iter().sum();
                            for j in 0..c {
                                let soft = exps[j] / sum;
                                let ind = if j == targets[i] { 1.0 } else { 0.0 };
                                gx[i * c + j] += gy[0] * w * (soft - ind) / wsum;
                            }
                        }
                    }
                }
                Op::SquaredError { x, targets } => {
                    let xv = nodes[*x].values.clone();
                    let n = xv.len() as f64;
                    let gx = acc!(*x, plen(*x));
                    for i in 0..xv.len() {
                        gx[i] += gy[0] * 2.0 * (xv[i] - targets[i]) / n;
                    }
                }
            }
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }
}
