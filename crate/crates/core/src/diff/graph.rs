//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and backward is a single reverse sweep.

use crate::error::{shape_err, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf { param: Option<usize> },
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<T>),
    Scale(Var, T),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Sum(Var),
    BceProb { p: Var, target: Vec<T>, eps: T },
    BceLogits { z: Var, target: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "Leaf",
            Op::MatMul { .. } => "MatMul",
            Op::MatMulNt { .. } => "MatMulNt",
            Op::Transpose { .. } => "Transpose",
            Op::Add { .. } => "Add",
            Op::Sub { .. } => "Sub",
            Op::AddRow { .. } => "AddRow",
            Op::Mul { .. } => "Mul",
            Op::MulConst { .. } => "MulConst",
            Op::Scale { .. } => "Scale",
            Op::ConcatRows { .. } => "ConcatRows",
            Op::ConcatCols { .. } => "ConcatCols",
            Op::SliceRows { .. } => "SliceRows",
            Op::SliceCols { .. } => "SliceCols",
            Op::GatherRows { .. } => "GatherRows",
            Op::Sigmoid { .. } => "Sigmoid",
            Op::Tanh { .. } => "Tanh",
            Op::Relu { .. } => "Relu",
            Op::SoftmaxRows { .. } => "SoftmaxRows",
            Op::LayerNorm { .. } => "LayerNorm",
            Op::Sum { .. } => "Sum",
            Op::BceProb { .. } => "BceProb",
            Op::BceLogits { .. } => "BceLogits",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-use computation tape.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    first_non_finite: Option<String>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    dims: Vec<Vec<usize>>,
    params: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss.
    pub fn of(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.dims[v.0].clone(), g.clone()).expect("grad shape"))
    }

    /// Adds the gradient of every parameter leaf into `acc[param_id]`,
    /// scaled by `scale`. Parameters that appear several times accumulate.
    pub fn accumulate_params(&self, acc: &mut [Tensor<T>], scale: T) {
        for &(node, pid) in &self.params {
            if let Some(g) = &self.grads[node] {
                for (a, &v) in acc[pid].data_mut().iter_mut().zip(g) {
                    *a += scale * v;
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), first_non_finite: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        if cfg!(debug_assertions) && self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(format!("node {} ({})", self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// In debug builds, the first node whose value was not finite.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.first_non_finite.as_deref()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// A leaf that receives a gradient but is not a stored parameter.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf { param: None }, true)
    }

    /// A leaf bound to parameter `id` of some parameter store.
    pub fn param(&mut self, id: usize, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf { param: Some(id) }, true)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims2(a), self.dims2(b));
        if k != k2 {
            return shape_err(format!("matmul {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_rows(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.dims2(a), self.dims2(b));
        if k != k2 {
            return shape_err(format!("matmul_nt {m}x{k} by ({n}x{k2})ᵀ"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_rows(m, n, out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(t, Op::Transpose(a), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.dims2(a) != self.dims2(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.dims2(a), self.dims2(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.dims().to_vec(), data).expect("zip shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds the `1×n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let ((m, n), (br, bc)) = (self.dims2(a), self.dims2(bias));
        if br != 1 || bc != n {
            return shape_err(format!("add_row {m}x{n} with {br}x{bc}"));
        }
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(a).clone();
        for row in t.data_mut().chunks_exact_mut(n) {
            for (x, &y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(t, Op::AddRow(a, bias), rg))
    }

    /// Elementwise product with a constant mask (dropout with a given mask).
    pub fn mul_const(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return shape_err("mul_const mask length");
        }
        let va = self.value(a);
        let data = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(va.dims().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::MulConst(a, mask), rg))
    }

    pub fn dropout(&mut self, a: Var, keep_mask: &[bool], rate: T) -> Result<Var> {
        let keep = T::one() - rate;
        let mask = keep_mask.iter().map(|&k| if k { T::one() / keep } else { T::zero() }).collect();
        self.mul_const(a, mask)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_rows of nothing");
        };
        let n = self.dims2(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, cc) = self.dims2(p);
            if cc != n {
                return shape_err(format!("concat_rows width {cc} vs {n}"));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_rows(rows, n, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_cols of nothing");
        };
        let m = self.dims2(first).0;
        let mut total = 0;
        for &p in parts {
            let (r, cc) = self.dims2(p);
            if r != m {
                return shape_err(format!("concat_cols height {r} vs {m}"));
            }
            total += cc;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_rows(m, total, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Rows `start..start+len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(a);
        if start + len > m || len == 0 {
            return shape_err(format!("slice_rows {start}+{len} of {m}"));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_rows(len, n, data)?, Op::SliceRows(a, start), rg))
    }

    /// Columns `start..start+len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(a);
        if start + len > n || len == 0 {
            return shape_err(format!("slice_cols {start}+{len} of {n}"));
        }
        let va = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&va.row(i)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_rows(m, len, data)?, Op::SliceCols(a, start), rg))
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(a);
        if idx.is_empty() || idx.iter().any(|&i| i >= m) {
            return shape_err(format!("gather_rows index out of range for {m} rows"));
        }
        let va = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(va.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_rows(idx.len(), n, data)?, Op::GatherRows(a, idx.to_vec()), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let n = self.dims2(a).1;
        let mut t = self.value(a).clone();
        for row in t.data_mut().chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(t, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise layer normalization followed by the affine `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims2(x);
        if self.dims2(gamma) != (1, n) || self.dims2(beta) != (1, n) {
            return shape_err(format!("layer_norm affine must be 1x{n}"));
        }
        let eps = c::<T>(LAYER_NORM_EPS);
        let nt = T::from_usize(n).unwrap();
        let vx = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &vx[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::from_rows(m, n, out)?,
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Summed binary cross entropy of probabilities `p` against `target`,
    /// with `p` clamped to `[eps, 1 - eps]`.
    pub fn bce_prob(&mut self, p: Var, target: &[T], eps: T) -> Result<Var> {
        let vp = self.value(p).data();
        if vp.len() != target.len() {
            return shape_err(format!("bce length {} vs {}", vp.len(), target.len()));
        }
        let s = vp.iter().zip(target).map(|(&p, &y)| bce_term(y, p, eps)).sum::<T>();
        let rg = self.rg(p);
        Ok(self.push(Tensor::scalar(s), Op::BceProb { p, target: target.to_vec(), eps }, rg))
    }

    /// Summed binary cross entropy of `sigmoid(z)` against `target`, computed
    /// from logits.
    pub fn bce_logits(&mut self, z: Var, target: &[T]) -> Result<Var> {
        let vz = self.value(z).data();
        if vz.len() != target.len() {
            return shape_err(format!("bce length {} vs {}", vz.len(), target.len()));
        }
        let s = vz
            .iter()
            .zip(target)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<T>();
        let rg = self.rg(z);
        Ok(self.push(Tensor::scalar(s), Op::BceLogits { z, target: target.to_vec() }, rg))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return shape_err("backward needs a scalar loss");
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if let Op::Leaf { .. } = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((i, p)),
                _ => None,
            })
            .collect();
        let dims = self.nodes.iter().map(|n| n.value.dims().to_vec()).collect();
        Ok(Gradients { grads, dims, params })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.rg(v) {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.dims2(*a), self.dims2(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nt(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(self.value(*a).data(), g, gb, k, m, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let ((m, k), (n, _)) = (self.dims2(*a), self.dims2(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nn(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(g, self.value(*a).data(), gb, n, m, k);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims2(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..m {
                        for cc in 0..n {
                            ga[r * n + cc] += g[cc * m + r];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.slot(grads, v) {
                        axpy(gv, g, T::one());
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(ga, g, T::one());
                }
                if let Some(gb) = self.slot(grads, *b) {
                    axpy(gb, g, -T::one());
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(ga, g, T::one());
                }
                let n = self.dims2(*bias).1;
                if let Some(gb) = self.slot(grads, *bias) {
                    for row in g.chunks_exact(n) {
                        axpy(gb, row, T::one());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gg), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *d += gg * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, &gg), &x) in gb.iter_mut().zip(g).zip(va) {
                        *d += gg * x;
                    }
                }
            }
            Op::MulConst(a, mask) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gg), &mk) in ga.iter_mut().zip(g).zip(mask) {
                        *d += gg * mk;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(ga, g, *s);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        axpy(gp, &g[off..off + len], T::one());
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut off = 0;
                for &p in parts {
                    let (m, w) = self.dims2(p);
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..m {
                            axpy(&mut gp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w], T::one());
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                let n = self.dims2(*a).1;
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(&mut ga[start * n..start * n + g.len()], g, T::one());
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.dims2(*a);
                let w = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..m {
                        axpy(&mut ga[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w], T::one());
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let n = self.dims2(*a).1;
                if let Some(ga) = self.slot(grads, *a) {
                    for (r, &src) in idx.iter().enumerate() {
                        axpy(&mut ga[src * n..(src + 1) * n], &g[r * n..(r + 1) * n], T::one());
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gg), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *d += gg * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gg), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *d += gg * (T::one() - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gg), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        if y > T::zero() {
                            *d += gg;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((drow, grow), yrow) in
                        ga.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(out.data().chunks_exact(n))
                    {
                        let s: T = grow.iter().zip(yrow).map(|(&gg, &y)| gg * y).sum();
                        for ((d, &gg), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gg - s);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let n = out.cols();
                let nt = T::from_usize(n).unwrap();
                let gm = self.value(*gamma).data();
                if let Some(gx) = self.slot(grads, *x) {
                    let mut dxh = vec![T::zero(); n];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let grow = &g[r * n..(r + 1) * n];
                        let xh = &xhat[r * n..(r + 1) * n];
                        for j in 0..n {
                            dxh[j] = grow[j] * gm[j];
                        }
                        let s1: T = dxh.iter().copied().sum();
                        let s2: T = dxh.iter().zip(xh).map(|(&d, &h)| d * h).sum();
                        let k = is / nt;
                        for j in 0..n {
                            gx[r * n + j] += k * (nt * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    for (grow, xh) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            gg[j] += grow[j] * xh[j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for grow in g.chunks_exact(n) {
                        axpy(gb, grow, T::one());
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::BceProb { p, target, eps } => {
                let vp = self.value(*p).data();
                if let Some(gp) = self.slot(grads, *p) {
                    for ((d, &pv), &y) in gp.iter_mut().zip(vp).zip(target) {
                        if pv > *eps && pv < T::one() - *eps {
                            *d += g[0] * (-y / pv + (T::one() - y) / (T::one() - pv));
                        }
                    }
                }
            }
            Op::BceLogits { z, target } => {
                let vz = self.value(*z).data();
                if let Some(gz) = self.slot(grads, *z) {
                    for ((d, &zv), &y) in gz.iter_mut().zip(vz).zip(target) {
                        *d += g[0] * (sigmoid(zv) - y);
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], x: &[T], a: T) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// One binary cross-entropy term with the probability clamped to `[eps, 1-eps]`.
#[inline]
pub fn bce_term<T: Scalar>(y: T, p: T, eps: T) -> T {
    let p = p.max(eps).min(T::one() - eps);
    -y * p.ln() - (T::one() - y) * (T::one() - p).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_and_its_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).data()[0], 0.5);
        let gr = g.backward(y).unwrap();
        assert_eq!(gr.of(x).unwrap().data()[0], 0.25);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero_before_affine() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[2, 5], 3.7));
        let gamma = g.constant(Tensor::full(&[1, 5], 1.0));
        let beta = g.constant(Tensor::zeros(&[1, 5]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full(&[2, 2], 1.0));
        let b = g.input(Tensor::full(&[2, 2], 2.0));
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p);
        let gr = g.backward(s).unwrap();
        assert!(gr.of(a).is_none());
        assert_eq!(gr.of(b).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        assert!(g.matmul(a, b).is_err());
        let c = g.input(Tensor::zeros(&[3, 2]));
        assert!(g.add(a, c).is_err());
        assert!(g.slice_cols(a, 2, 2).is_err());
    }

    #[test]
    fn bce_logits_matches_prob_form() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::from_rows(1, 3, vec![-2.0, 0.3, 4.0]).unwrap());
        let y = [1.0, 0.0, 1.0];
        let l1 = g.bce_logits(z, &y).unwrap();
        let p = g.sigmoid(z);
        let l2 = g.bce_prob(p, &y, 1e-12).unwrap();
        assert!((g.value(l1).data()[0] - g.value(l2).data()[0]).abs() < 1e-12);
    }
}
