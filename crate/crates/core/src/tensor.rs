//! Dense `f32` tensors and a tape-based reverse-mode autodiff engine.
//!
//! A [`Tape`] records every operation applied during a forward pass. Values
//! are computed eagerly; [`Tape::backward`] walks the tape in reverse and
//! returns gradients for the leaves that asked for them. A tape is built,
//! differentiated once, and dropped; training rebuilds it every step.
//!
//! Broadcasting is limited to leading batch dimensions: an operand whose shape
//! is a suffix of the other's is repeated over the extra leading axes.
//! Everything else needs an explicit reshape.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("data length {got} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, got: usize },
    #[error("index {index} out of range (< {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid axis {axis} for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::DataLength { shape: shape.to_vec(), got: data.len() });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() != 1 {
            return Err(TensorError::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    /// Size of the last dimension (1 for scalars).
    fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, a_batched: bool, b_batched: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: f32 },
    Gelu { a: Var, tanh: Vec<f32> },
    Relu { a: Var },
    Softmax { a: Var },
    CausalMask { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f32>, rstd: Vec<f32> },
    Gather { table: Var, ids: Vec<u32> },
    Permute { a: Var, axes: Vec<usize> },
    Reshape { a: Var },
    Narrow { a: Var, axis: usize, start: usize },
    CrossEntropy { logits: Var, targets: Vec<u32>, probs: Vec<f32> },
    Sum { a: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of the leaves that requested them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

/// `c = beta·c + op(a)·op(b)` for row-major operands; `a` is `m×k` (or `k×m`
/// when `ta`), `b` is `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], ta: bool, b: &[f32], tb: bool, c: &mut [f32], beta: f32) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    if m * k * n <= 4096 {
        if beta == 0.0 {
            c.fill(0.0);
        } else if beta != 1.0 {
            c.iter_mut().for_each(|v| *v *= beta);
        }
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[(i as isize * rsa + p as isize * csa) as usize];
                if av == 0.0 {
                    continue;
                }
                for (j, cv) in crow.iter_mut().enumerate() {
                    *cv += av * b[(p as isize * rsb + j as isize * csb) as usize];
                }
            }
        }
        return;
    }
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements (checked above
    // in debug builds and guaranteed by every caller's shape validation), and
    // the strides describe row-major layouts inside those bounds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, g: Vec<f32>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, v)| *e += v),
        None => *slot = Some(g),
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/π)
const GELU_A: f32 = 0.044_715;

fn gelu_tanh(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    // tanh(u) = 1 − 2/(e^{2u} + 1); saturates cleanly for large |u|
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

fn gelu_grad(x: f32, t: f32) -> f32 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `src` (with shape `shape`) into a new buffer laid out as `src`
/// permuted by `axes`.
fn permute_data(src: &[f32], shape: &[usize], axes: &[usize]) -> Vec<f32> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return out;
    }
    if rank == 0 {
        out.extend_from_slice(src);
        return out;
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&src[offset..offset + inner]);
        } else {
            out.extend((0..inner).map(|j| src[offset + j * inner_stride]));
        }
        // advance the odometer over all but the innermost axis
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            offset += src_strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= src_strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Batched matrix product `[.., m, k] · [.., k, n]`. Either side may be a
    /// plain matrix shared across the other side's batch dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let (batch_dims, a_batched, b_batched) = if ba == bb {
            (ba.to_vec(), !ba.is_empty(), !bb.is_empty())
        } else if bb.is_empty() {
            (ba.to_vec(), true, false)
        } else if ba.is_empty() {
            (bb.to_vec(), false, true)
        } else {
            return Err(mismatch("matmul", &sa, &sb));
        };
        let batch: usize = batch_dims.iter().product();
        let mut out = vec![0.0f32; batch * m * n];
        {
            let (va, vb) = (&self.value(a).data, &self.value(b).data);
            if a_batched && !b_batched {
                gemm(batch * m, k, n, va, false, vb, false, &mut out, 0.0);
            } else {
                for i in 0..batch {
                    let ao = if a_batched { i * m * k } else { 0 };
                    let bo = if b_batched { i * k * n } else { 0 };
                    gemm(
                        m,
                        k,
                        n,
                        &va[ao..ao + m * k],
                        false,
                        &vb[bo..bo + k * n],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        0.0,
                    );
                }
            }
        }
        let mut shape = batch_dims;
        shape.extend([m, n]);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::MatMul { a, b, batch, m, k, n, a_batched, b_batched },
            needs,
        ))
    }

    /// Elementwise sum; `b` may broadcast over leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch("add", sa, sb));
        }
        let va = &self.value(a).data;
        let vb = &self.value(b).data;
        let mut out = va.clone();
        if !vb.is_empty() {
            for chunk in out.chunks_exact_mut(vb.len()) {
                chunk.iter_mut().zip(vb).for_each(|(o, x)| *o += x);
            }
        }
        let shape = sa.to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { shape, data: out }, Op::Add { a, b }, needs))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }, needs))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let v = self.value(a);
        let t = Tensor { shape: v.shape.clone(), data: v.data.iter().map(|x| x * s).collect() };
        let needs = self.needs(a);
        self.push(t, Op::Scale { a, s }, needs)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let tanh: Vec<f32> = v.data.iter().map(|&x| gelu_tanh(x)).collect();
        let data = v.data.iter().zip(&tanh).map(|(&x, &t)| 0.5 * x * (1.0 + t)).collect();
        let t = Tensor { shape: v.shape.clone(), data };
        let needs = self.needs(a);
        let tanh = if needs { tanh } else { Vec::new() };
        self.push(t, Op::Gelu { a, tanh }, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor { shape: v.shape.clone(), data: v.data.iter().map(|&x| x.max(0.0)).collect() };
        let needs = self.needs(a);
        self.push(t, Op::Relu { a }, needs)
    }

    /// Softmax over the last dimension, stabilised by subtracting the row max.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let d = v.last_dim();
        let mut out = v.data.clone();
        for row in out.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        let t = Tensor { shape: v.shape.clone(), data: out };
        let needs = self.needs(a);
        self.push(t, Op::Softmax { a }, needs)
    }

    /// Sets entries above the diagonal of the trailing `[T, T]` block to −∞.
    pub fn causal_mask(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            return Err(mismatch("causal_mask", s, s));
        }
        let t = s[s.len() - 1];
        let mut out = self.value(a).data.clone();
        for block in out.chunks_exact_mut(t * t) {
            for i in 0..t {
                for j in i + 1..t {
                    block[i * t + j] = f32::NEG_INFINITY;
                }
            }
        }
        let shape = s.to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor { shape, data: out }, Op::CausalMask { a }, needs))
    }

    /// Normalises the last dimension to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f32) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let vx = &self.value(x).data;
        let (g, b) = (&self.value(gain).data, &self.value(bias).data);
        let rows = vx.len() / d;
        let mut xhat = vec![0.0f32; vx.len()];
        let mut rstd = vec![0.0f32; rows];
        let mut out = vec![0.0f32; vx.len()];
        for r in 0..rows {
            let row = &vx[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(Tensor { shape, data: out }, Op::LayerNorm { x, gain, bias, xhat, rstd }, needs))
    }

    /// Rows of a `[V, d]` table selected by `ids`, giving `[ids.len(), d]`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(mismatch("embedding_gather", s, &[]));
        }
        let (rows, d) = (s[0], s[1]);
        let vt = &self.value(table).data;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= rows {
                return Err(TensorError::IndexOutOfRange { index: id, bound: rows });
            }
            out.extend_from_slice(&vt[id * d..(id + 1) * d]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor { shape: vec![ids.len(), d], data: out },
            Op::Gather { table, ids: ids.to_vec() },
            needs,
        ))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        let rank = s.len();
        let mut seen = vec![false; rank];
        for &ax in axes {
            if ax >= rank || seen[ax] {
                return Err(TensorError::InvalidAxis { axis: ax, rank });
            }
            seen[ax] = true;
        }
        if axes.len() != rank {
            return Err(TensorError::InvalidAxis { axis: axes.len(), rank });
        }
        let shape: Vec<usize> = axes.iter().map(|&ax| s[ax]).collect();
        let data = permute_data(&self.value(a).data, s, axes);
        let needs = self.needs(a);
        Ok(self.push(Tensor { shape, data }, Op::Permute { a, axes: axes.to_vec() }, needs))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(TensorError::InvalidAxis { axis: 1, rank });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 1, rank - 2);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(mismatch("reshape", self.shape(a), shape));
        }
        let data = self.value(a).data.clone();
        let needs = self.needs(a);
        Ok(self.push(Tensor { shape: shape.to_vec(), data }, Op::Reshape { a }, needs))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(TensorError::InvalidAxis { axis, rank: s.len() });
        }
        if start + len > s[axis] {
            return Err(TensorError::IndexOutOfRange { index: start + len, bound: s[axis] + 1 });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let v = &self.value(a).data;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let needs = self.needs(a);
        Ok(self.push(Tensor { shape, data: out }, Op::Narrow { a, axis, start }, needs))
    }

    /// Mean cross-entropy of `[B, V]` logits against target class ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(mismatch("cross_entropy", s, &[targets.len()]));
        }
        let v = s[1];
        let mut probs = self.value(logits).data.clone();
        let mut loss = 0.0f64;
        for (row, &t) in probs.chunks_exact_mut(v).zip(targets) {
            let t = t as usize;
            if t >= v {
                return Err(TensorError::IndexOutOfRange { index: t, bound: v });
            }
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            // log-sum-exp − logit[t] = ln(sum) − (logit[t] − max)
            loss += (sum.ln() - row[t].ln()) as f64;
            row.iter_mut().for_each(|x| *x /= sum);
        }
        let mean = (loss / targets.len().max(1) as f64) as f32;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(mean),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data.iter().map(|&x| x as f64).sum::<f64>() as f32;
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum { a }, needs)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, batch, m, k, n, a_batched, b_batched } => {
                let (va, vb) = (&self.value(a).data, &self.value(b).data);
                if self.needs(a) {
                    let mut ga = vec![0.0f32; va.len()];
                    if a_batched && !b_batched {
                        gemm(batch * m, n, k, g, false, vb, true, &mut ga, 0.0);
                    } else {
                        for i in 0..batch {
                            let ao = if a_batched { i * m * k } else { 0 };
                            let bo = if b_batched { i * k * n } else { 0 };
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..(i + 1) * m * n],
                                false,
                                &vb[bo..bo + k * n],
                                true,
                                &mut ga[ao..ao + m * k],
                                1.0,
                            );
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                if self.needs(b) {
                    let mut gb = vec![0.0f32; vb.len()];
                    if a_batched && !b_batched {
                        gemm(k, batch * m, n, va, true, g, false, &mut gb, 0.0);
                    } else {
                        for i in 0..batch {
                            let ao = if a_batched { i * m * k } else { 0 };
                            let bo = if b_batched { i * k * n } else { 0 };
                            gemm(
                                k,
                                m,
                                n,
                                &va[ao..ao + m * k],
                                true,
                                &g[i * m * n..(i + 1) * m * n],
                                false,
                                &mut gb[bo..bo + k * n],
                                1.0,
                            );
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            &Op::Add { a, b } => {
                if self.needs(a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if self.needs(b) {
                    let nb = self.value(b).numel();
                    let mut gb = vec![0.0f32; nb];
                    if nb > 0 {
                        for chunk in g.chunks_exact(nb) {
                            gb.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            &Op::Mul { a, b } => {
                let (va, vb) = (&self.value(a).data, &self.value(b).data);
                if self.needs(a) {
                    accumulate(&mut grads[a.0], g.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if self.needs(b) {
                    accumulate(&mut grads[b.0], g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            &Op::Scale { a, s } => {
                accumulate(&mut grads[a.0], g.iter().map(|x| x * s).collect());
            }
            Op::Gelu { a, tanh } => {
                let va = &self.value(*a).data;
                let ga = g.iter().zip(va).zip(tanh).map(|((g, &x), &t)| g * gelu_grad(x, t)).collect();
                accumulate(&mut grads[a.0], ga);
            }
            &Op::Relu { a } => {
                let va = &self.value(a).data;
                accumulate(
                    &mut grads[a.0],
                    g.iter().zip(va).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
                );
            }
            &Op::Softmax { a } => {
                let y = &node.value.data;
                let d = node.value.last_dim();
                let mut ga = vec![0.0f32; y.len()];
                for ((gr, yr), out) in g.chunks_exact(d).zip(y.chunks_exact(d)).zip(ga.chunks_exact_mut(d)) {
                    let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            &Op::CausalMask { a } => {
                let t = node.value.last_dim();
                let mut ga = g.to_vec();
                for block in ga.chunks_exact_mut(t * t) {
                    for i in 0..t {
                        for j in i + 1..t {
                            block[i * t + j] = 0.0;
                        }
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let d = node.value.last_dim();
                let gv = &self.value(gain).data;
                if self.needs(gain) {
                    let mut gg = vec![0.0f32; d];
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                    accumulate(&mut grads[gain.0], gg);
                }
                if self.needs(bias) {
                    let mut gb = vec![0.0f32; d];
                    for gr in g.chunks_exact(d) {
                        gb.iter_mut().zip(gr).for_each(|(o, v)| *o += v);
                    }
                    accumulate(&mut grads[bias.0], gb);
                }
                if self.needs(x) {
                    let mut gx = vec![0.0f32; g.len()];
                    let mut dh = vec![0.0f32; d];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            dh[j] = gr[j] * gv[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * hr[j];
                        }
                        mean_dh /= d as f32;
                        mean_dh_h /= d as f32;
                        for j in 0..d {
                            gx[r * d + j] = rs * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let d = tv.shape[1];
                let mut gt = vec![0.0f32; tv.numel()];
                for (row, &id) in g.chunks_exact(d).zip(ids) {
                    let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                    dst.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                }
                accumulate(&mut grads[table.0], gt);
            }
            Op::Permute { a, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let ga = permute_data(g, &node.value.shape, &inverse);
                accumulate(&mut grads[a.0], ga);
            }
            &Op::Reshape { a } => accumulate(&mut grads[a.0], g.to_vec()),
            &Op::Narrow { a, axis, start } => {
                let s = &self.value(a).shape;
                let len = node.value.shape[axis];
                let outer: usize = s[..axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut ga = vec![0.0f32; self.value(a).numel()];
                for o in 0..outer {
                    let dst = (o * s[axis] + start) * inner;
                    let src = o * len * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = self.value(*logits).last_dim();
                let scale = g[0] / targets.len().max(1) as f32;
                let mut gl = probs.clone();
                for (row, &t) in gl.chunks_exact_mut(v).zip(targets) {
                    row[t as usize] -= 1.0;
                    row.iter_mut().for_each(|x| *x *= scale);
                }
                accumulate(&mut grads[logits.0], gl);
            }
            &Op::Sum { a } => {
                accumulate(&mut grads[a.0], vec![g[0]; self.value(a).numel()]);
            }
        }
    }
}
