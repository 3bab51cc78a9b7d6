//! Tape-based computation graph.
//!
//! Ops execute eagerly and record themselves on the tape; the tape is its own
//! topological order, so [`Graph::backward`] is a single reverse sweep. Inputs
//! of a node always have smaller indices than the node itself.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{fmt_shape, Error, Result};

/// Handle to a node in one specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Leaf { requires_grad: bool },
    Linear { x: Var, w: Var, b: Var },
    Matmul { a: Var, b: Var },
    /// `a * b^T` without materializing the transpose.
    MatmulNT { a: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Mul { a: Var, b: Var },
    /// Row-broadcast `y[i, j] = x[i, j] * s[i]`.
    MulRowScalar { x: Var, s: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, c: f32 },
    MaxReduce { x: Var, axis: usize, arg: Arc<Vec<u32>> },
    GatherRows { x: Var, idx: Arc<Vec<u32>> },
    Dropout { x: Var, keep: Arc<Vec<bool>>, scale: f32 },
    SumAxis { x: Var, axis: usize },
    SumAll { x: Var },
    Reshape { x: Var },
    RepeatRows { x: Var, n: usize },
    /// `y[i, j, :] = [f_i | f_idx(i,j) - f_i]` for k neighbors per row.
    EdgeFeatures { f: Var, idx: Arc<Vec<u32>>, k: usize },
    /// Shared linear map over edge features, computed without materializing
    /// them: `y[i, j] = f_i (Wa - Wb) + f_idx(i,j) Wb + b` where `w = [Wa; Wb]`.
    EdgeLinear { f: Var, w: Var, b: Var, idx: Arc<Vec<u32>>, k: usize },
    /// Mean of row-wise `logsumexp(row) - row[target]`, in log domain.
    CrossEntropy { logits: Var, targets: Arc<Vec<u32>> },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub grad: Option<Vec<f32>>,
    pub op: Op,
    pub needs_grad: bool,
}

/// Records operations for one forward pass; confined to a single thread of
/// control while building, but shareable (`&Graph`) afterwards.
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::with_seed(0)
    }
}

/// `(outer, len, inner)` strides for iterating slices along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Seed drives the graph-local RNG used by dropout masks.
    pub fn with_seed(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward target w.r.t. `v`, if one was produced.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Draws a seed from the graph-local RNG (shared with dropout masks), so
    /// stochastic layers stay reproducible under the graph's own seed.
    pub fn draw_seed(&mut self) -> u64 {
        self.rng.gen()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf { requires_grad } => *requires_grad,
            other => self.op_inputs(other).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf { .. } => vec![],
            Op::Linear { x, w, b } | Op::EdgeLinear { f: x, w, b, .. } => vec![*x, *w, *b],
            Op::Matmul { a, b } | Op::MatmulNT { a, b } | Op::Mul { a, b } | Op::Add { a, b } => {
                vec![*a, *b]
            }
            Op::Concat { xs, .. } => xs.clone(),
            Op::MulRowScalar { x, s } => vec![*x, *s],
            Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::Softmax { x, .. }
            | Op::Scale { x, .. }
            | Op::MaxReduce { x, .. }
            | Op::GatherRows { x, .. }
            | Op::Dropout { x, .. }
            | Op::SumAxis { x, .. }
            | Op::SumAll { x }
            | Op::Reshape { x }
            | Op::RepeatRows { x, .. } => vec![*x],
            Op::EdgeFeatures { f, .. } => vec![*f],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    // ── leaves ──────────────────────────────────────────────────────────

    /// Constant input; gradients do not flow into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { requires_grad: false })
    }

    /// Trainable leaf; receives a (possibly zero) gradient on every backward.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf { requires_grad: true })
    }

    // ── ops ─────────────────────────────────────────────────────────────

    /// `y = x w + b` with `x: [n, din]`, `w: [din, dout]`, `b: [dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::dim(
                "linear",
                format!(
                    "x {} w {} b {}",
                    fmt_shape(&xs),
                    fmt_shape(&ws),
                    fmt_shape(&bs)
                ),
            ));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; n * dout];
        gemm_nn(n, din, dout, 1.0, self.value(x).data(), self.value(w).data(), 0.0, &mut out);
        let bd = self.value(b).data().to_vec();
        for row in out.chunks_exact_mut(dout) {
            for (o, bv) in row.iter_mut().zip(&bd) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::new(vec![n, dout], out)?, Op::Linear { x, w, b }))
    }

    /// `y = a b` with `a: [n, k]`, `b: [k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(
                "matmul",
                format!("a {} b {}", fmt_shape(&sa), fmt_shape(&sb)),
            ));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        gemm_nn(n, k, m, 1.0, self.value(a).data(), self.value(b).data(), 0.0, &mut out);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Matmul { a, b }))
    }

    /// `y = a b^T` with `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim(
                "matmul_nt",
                format!("a {} b {}", fmt_shape(&sa), fmt_shape(&sb)),
            ));
        }
        let (n, k, m) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; n * m];
        gemm_nt(n, k, m, 1.0, self.value(a).data(), self.value(b).data(), 0.0, &mut out);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatmulNT { a, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out: Vec<f32> = t.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push(
            Tensor::new(shape, out).expect("relu preserves shape"),
            Op::Relu { x },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out: Vec<f32> = t.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let shape = t.shape().to_vec();
        self.push(
            Tensor::new(shape, out).expect("sigmoid preserves shape"),
            Op::Sigmoid { x },
        )
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "softmax",
                format!("axis {axis} out of range for {}", fmt_shape(&shape)),
            ));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = t.data();
        let mut out = vec![0.0f32; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = f32::NEG_INFINITY;
                for l in 0..len {
                    m = m.max(src[base + l * inner]);
                }
                let mut sum = 0.0f32;
                for l in 0..len {
                    let e = (src[base + l * inner] - m).exp();
                    out[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..len {
                    out[base + l * inner] /= sum;
                }
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::param("concat", "no inputs"));
        }
        let first = self.value(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} out of range for {}", fmt_shape(&first)),
            ));
        }
        let mut axis_total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(first.iter())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim(
                    "concat",
                    format!("{} vs {}", fmt_shape(s), fmt_shape(&first)),
                ));
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let total_block = axis_total * inner;
        let mut out = vec![0.0f32; outer * total_block];
        let mut offset = 0;
        for &v in xs {
            let t = self.value(v);
            let block = t.shape()[axis] * inner;
            for o in 0..outer {
                let dst = o * total_block + offset;
                out[dst..dst + block].copy_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
            offset += block;
        }
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat { xs: xs.to_vec(), axis },
        ))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(
                "mul",
                format!(
                    "{} vs {}",
                    fmt_shape(self.value(a).shape()),
                    fmt_shape(self.value(b).shape())
                ),
            ));
        }
        let out: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }))
    }

    /// `y[i, j] = x[i, j] * s[i]`; `s` has shape `[n]` or `[n, 1]`.
    pub fn mul_row_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ss = self.value(s).shape().to_vec();
        let s_rows = ss[0];
        let s_ok = ss.len() == 1 || (ss.len() == 2 && ss[1] == 1);
        if xs.len() != 2 || !s_ok || s_rows != xs[0] {
            return Err(Error::dim(
                "mul_row_scalar",
                format!("x {} s {}", fmt_shape(&xs), fmt_shape(&ss)),
            ));
        }
        let (n, c) = (xs[0], xs[1]);
        let sd = self.value(s).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for i in 0..n {
            for j in 0..c {
                out[i * c + j] *= sd[i];
            }
        }
        Ok(self.push(Tensor::new(xs, out)?, Op::MulRowScalar { x, s }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(
                "add",
                format!(
                    "{} vs {}",
                    fmt_shape(self.value(a).shape()),
                    fmt_shape(self.value(b).shape())
                ),
            ));
        }
        let out: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let t = self.value(x);
        let out: Vec<f32> = t.data().iter().map(|v| v * c).collect();
        let shape = t.shape().to_vec();
        self.push(
            Tensor::new(shape, out).expect("scale preserves shape"),
            Op::Scale { x, c },
        )
    }

    /// Max along `axis`; also returns the winning indices (first max on ties).
    /// The output drops `axis` from the shape.
    pub fn max_reduce(&mut self, x: Var, axis: usize) -> Result<(Var, Arc<Vec<u32>>)> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "max_reduce",
                format!("axis {axis} out of range for {}", fmt_shape(&shape)),
            ));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = t.data();
        let mut vals = vec![0.0f32; outer * inner];
        let mut arg = vec![0u32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = src[base];
                let mut best_l = 0u32;
                for l in 1..len {
                    let v = src[base + l * inner];
                    if v > best {
                        best = v;
                        best_l = l as u32;
                    }
                }
                vals[o * inner + i] = best;
                arg[o * inner + i] = best_l;
            }
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(d, _)| *d != axis)
            .map(|(_, &e)| e)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let arg = Arc::new(arg);
        let v = self.push(
            Tensor::new(out_shape, vals)?,
            Op::MaxReduce { x, axis, arg: Arc::clone(&arg) },
        );
        Ok((v, arg))
    }

    /// `y[m] = x[idx[m]]` row-wise; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[u32]) -> Result<Var> {
        let t = self.value(x);
        let n = t.shape()[0];
        let width = t.len() / n;
        for &i in idx {
            if i as usize >= n {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: i as usize,
                    extent: n,
                });
            }
        }
        if idx.is_empty() {
            return Err(Error::param("gather_rows", "empty index list"));
        }
        let mut out = vec![0.0f32; idx.len() * width];
        for (m, &i) in idx.iter().enumerate() {
            out[m * width..(m + 1) * width]
                .copy_from_slice(&t.data()[i as usize * width..(i as usize + 1) * width]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::GatherRows { x, idx: Arc::new(idx.to_vec()) },
        ))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)` so the
    /// expectation is unchanged; identity when not training or `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f32, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(
                "dropout",
                format!("rate must be in [0, 1), got {rate}"),
            ));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let keep: Vec<bool> = (0..n).map(|_| self.rng.gen::<f32>() >= rate).collect();
        let scale = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let out: Vec<f32> = t
            .data()
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v * scale } else { 0.0 })
            .collect();
        let shape = t.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Dropout { x, keep: Arc::new(keep), scale },
        ))
    }

    /// Sum along `axis`, dropping it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "sum_axis",
                format!("axis {axis} out of range for {}", fmt_shape(&shape)),
            ));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = t.data();
        let mut out = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = o * len * inner + l * inner;
                let dst = o * inner;
                for i in 0..inner {
                    out[dst + i] += src[base + i];
                }
            }
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(d, _)| *d != axis)
            .map(|(_, &e)| e)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push(Tensor::new(out_shape, out)?, Op::SumAxis { x, axis }))
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f32 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape { x }))
    }

    /// Tiles a `[1, c]` (or `[c]`) row `n` times into `[n, c]`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let t = self.value(x);
        let ok = t.rank() == 1 || (t.rank() == 2 && t.shape()[0] == 1);
        if !ok || n == 0 {
            return Err(Error::dim(
                "repeat_rows",
                format!("need a single row and n > 0, got {} n={n}", fmt_shape(t.shape())),
            ));
        }
        let c = t.len();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::RepeatRows { x, n }))
    }

    /// Per-edge feature `[f_i | f_j - f_i]` for each of the k neighbors `j` of
    /// every row `i`; `idx` is a flattened `n x k` neighbor table.
    pub fn edge_features(&mut self, f: Var, idx: &[u32], k: usize) -> Result<Var> {
        let t = self.value(f);
        if t.rank() != 2 {
            return Err(Error::dim(
                "edge_features",
                format!("features must be rank 2, got {}", fmt_shape(t.shape())),
            ));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        if idx.len() != n * k || k == 0 {
            return Err(Error::dim(
                "edge_features",
                format!("neighbor table {} entries, expected {n} x {k}", idx.len()),
            ));
        }
        for &j in idx {
            if j as usize >= n {
                return Err(Error::Index {
                    op: "edge_features",
                    index: j as usize,
                    extent: n,
                });
            }
        }
        let src = t.data();
        let mut out = vec![0.0f32; n * k * 2 * c];
        for i in 0..n {
            let fi = &src[i * c..(i + 1) * c];
            for j in 0..k {
                let nb = idx[i * k + j] as usize;
                let fj = &src[nb * c..(nb + 1) * c];
                let base = (i * k + j) * 2 * c;
                out[base..base + c].copy_from_slice(fi);
                for l in 0..c {
                    out[base + c + l] = fj[l] - fi[l];
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![n, k, 2 * c], out)?,
            Op::EdgeFeatures { f, idx: Arc::new(idx.to_vec()), k },
        ))
    }

    /// Shared linear layer applied to every edge feature, fused so the cost is
    /// two `n x c x cout` GEMMs instead of `n·k` evaluations of width `2c`.
    /// `w: [2c, cout]` stacks the center weights over the difference weights.
    pub fn edge_linear(&mut self, f: Var, w: Var, b: Var, idx: &[u32], k: usize) -> Result<Var> {
        let (fs, ws, bs) = (
            self.value(f).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if fs.len() != 2 || ws.len() != 2 || bs.len() != 1 || ws[0] != 2 * fs[1] || ws[1] != bs[0] {
            return Err(Error::dim(
                "edge_linear",
                format!(
                    "f {} w {} b {}",
                    fmt_shape(&fs),
                    fmt_shape(&ws),
                    fmt_shape(&bs)
                ),
            ));
        }
        let (n, c, cout) = (fs[0], fs[1], ws[1]);
        if idx.len() != n * k || k == 0 {
            return Err(Error::dim(
                "edge_linear",
                format!("neighbor table {} entries, expected {n} x {k}", idx.len()),
            ));
        }
        for &j in idx {
            if j as usize >= n {
                return Err(Error::Index {
                    op: "edge_linear",
                    index: j as usize,
                    extent: n,
                });
            }
        }
        let fd = self.value(f).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        // wdiff = Wa - Wb (rows 0..c minus rows c..2c)
        let mut wdiff = vec![0.0f32; c * cout];
        for r in 0..c {
            for o in 0..cout {
                wdiff[r * cout + o] = wd[r * cout + o] - wd[(c + r) * cout + o];
            }
        }
        let mut p = vec![0.0f32; n * cout]; // f (Wa - Wb)
        let mut q = vec![0.0f32; n * cout]; // f Wb
        gemm_nn(n, c, cout, 1.0, fd, &wdiff, 0.0, &mut p);
        gemm_nn(n, c, cout, 1.0, fd, &wd[c * cout..], 0.0, &mut q);
        let mut out = vec![0.0f32; n * k * cout];
        for i in 0..n {
            let pi = &p[i * cout..(i + 1) * cout];
            for j in 0..k {
                let qj = &q[idx[i * k + j] as usize * cout..][..cout];
                let dst = &mut out[(i * k + j) * cout..][..cout];
                for o in 0..cout {
                    dst[o] = pi[o] + qj[o] + bd[o];
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![n, k, cout], out)?,
            Op::EdgeLinear { f, w, b, idx: Arc::new(idx.to_vec()), k },
        ))
    }

    /// Mean cross-entropy of row-wise logits against integer targets,
    /// computed in log domain.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 {
            return Err(Error::dim(
                "cross_entropy",
                format!("logits must be rank 2, got {}", fmt_shape(t.shape())),
            ));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        if targets.len() != n {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        for &cls in targets {
            if cls as usize >= c {
                return Err(Error::Index {
                    op: "cross_entropy",
                    index: cls as usize,
                    extent: c,
                });
            }
        }
        let src = t.data();
        let mut total = 0.0f64;
        for (i, &cls) in targets.iter().enumerate() {
            let row = &src[i * c..(i + 1) * c];
            let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f32>().ln();
            total += (lse - row[cls as usize]) as f64;
        }
        let loss = (total / n as f64) as f32;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: Arc::new(targets.to_vec()) },
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Every trainable leaf ends up with a
    /// populated gradient (zeros if the loss does not depend on it);
    /// re-running on the same graph is bit-identical.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(
                "backward",
                format!(
                    "loss must be scalar, got {}",
                    fmt_shape(self.value(loss).shape())
                ),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf { requires_grad: true }) {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        *self.nodes[loss.0]
            .grad
            .get_or_insert_with(|| vec![0.0; 1]) = vec![1.0];

        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf { .. }) {
                continue;
            }
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = self.nodes[i].grad.take() else {
                continue;
            };
            // Inputs always precede node i on the tape.
            let (lo, hi) = self.nodes.split_at_mut(i);
            let node = &hi[0];
            backprop(node, &gy, lo);
        }
        Ok(())
    }
}

/// Returns the gradient buffer of `v` (allocating zeros on first touch) or
/// `None` when gradients are not required there.
fn buf(nodes: &mut [Node], v: Var) -> Option<&mut Vec<f32>> {
    let node = &mut nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    let len = node.value.len();
    Some(node.grad.get_or_insert_with(|| vec![0.0; len]))
}

fn backprop(node: &Node, gy: &[f32], lo: &mut [Node]) {
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Linear { x, w, b } => {
            let xv = lo[x.0].value.clone();
            let wv = lo[w.0].value.clone();
            let (n, din) = (xv.shape()[0], xv.shape()[1]);
            let dout = wv.shape()[1];
            if let Some(gx) = buf(lo, *x) {
                gemm_nt(n, dout, din, 1.0, gy, wv.data(), 1.0, gx);
            }
            if let Some(gw) = buf(lo, *w) {
                gemm_tn(din, n, dout, 1.0, xv.data(), gy, 1.0, gw);
            }
            if let Some(gb) = buf(lo, *b) {
                for row in gy.chunks_exact(dout) {
                    for (g, &v) in gb.iter_mut().zip(row) {
                        *g += v;
                    }
                }
            }
        }
        Op::Matmul { a, b } => {
            let av = lo[a.0].value.clone();
            let bv = lo[b.0].value.clone();
            let (n, k) = (av.shape()[0], av.shape()[1]);
            let m = bv.shape()[1];
            if let Some(ga) = buf(lo, *a) {
                gemm_nt(n, m, k, 1.0, gy, bv.data(), 1.0, ga);
            }
            if let Some(gb) = buf(lo, *b) {
                gemm_tn(k, n, m, 1.0, av.data(), gy, 1.0, gb);
            }
        }
        Op::MatmulNT { a, b } => {
            let av = lo[a.0].value.clone();
            let bv = lo[b.0].value.clone();
            let (n, k) = (av.shape()[0], av.shape()[1]);
            let m = bv.shape()[0];
            if let Some(ga) = buf(lo, *a) {
                gemm_nn(n, m, k, 1.0, gy, bv.data(), 1.0, ga);
            }
            if let Some(gb) = buf(lo, *b) {
                gemm_tn(m, n, k, 1.0, gy, av.data(), 1.0, gb);
            }
        }
        Op::Relu { x } => {
            let yv = node.value.clone();
            if let Some(gx) = buf(lo, *x) {
                for ((g, &v), &y) in gx.iter_mut().zip(gy).zip(yv.data()) {
                    if y > 0.0 {
                        *g += v;
                    }
                }
            }
        }
        Op::Sigmoid { x } => {
            let yv = node.value.clone();
            if let Some(gx) = buf(lo, *x) {
                for ((g, &v), &y) in gx.iter_mut().zip(gy).zip(yv.data()) {
                    *g += v * y * (1.0 - y);
                }
            }
        }
        Op::Softmax { x, axis } => {
            let yv = node.value.clone();
            let shape = yv.shape();
            let (outer, len, inner) = axis_split(shape, *axis);
            if let Some(gx) = buf(lo, *x) {
                let y = yv.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0f32;
                        for l in 0..len {
                            let p = base + l * inner;
                            dot += y[p] * gy[p];
                        }
                        for l in 0..len {
                            let p = base + l * inner;
                            gx[p] += y[p] * (gy[p] - dot);
                        }
                    }
                }
            }
        }
        Op::Concat { xs, axis } => {
            let shape = node.value.shape().to_vec();
            let (outer, _, inner) = axis_split(&shape, *axis);
            let total_block = shape[*axis] * inner;
            let mut offset = 0;
            for &v in xs {
                let block = lo[v.0].value.shape()[*axis] * inner;
                if let Some(gx) = buf(lo, v) {
                    for o in 0..outer {
                        let src = o * total_block + offset;
                        for (g, &gv) in gx[o * block..(o + 1) * block]
                            .iter_mut()
                            .zip(&gy[src..src + block])
                        {
                            *g += gv;
                        }
                    }
                }
                offset += block;
            }
        }
        Op::Mul { a, b } => {
            let av = lo[a.0].value.clone();
            let bv = lo[b.0].value.clone();
            if let Some(ga) = buf(lo, *a) {
                for ((g, &v), &bv) in ga.iter_mut().zip(gy).zip(bv.data()) {
                    *g += v * bv;
                }
            }
            if let Some(gb) = buf(lo, *b) {
                for ((g, &v), &av) in gb.iter_mut().zip(gy).zip(av.data()) {
                    *g += v * av;
                }
            }
        }
        Op::MulRowScalar { x, s } => {
            let xv = lo[x.0].value.clone();
            let sv = lo[s.0].value.clone();
            let (n, c) = (xv.shape()[0], xv.shape()[1]);
            if let Some(gx) = buf(lo, *x) {
                for i in 0..n {
                    let si = sv.data()[i];
                    for j in 0..c {
                        gx[i * c + j] += gy[i * c + j] * si;
                    }
                }
            }
            if let Some(gs) = buf(lo, *s) {
                for i in 0..n {
                    let mut acc = 0.0f32;
                    for j in 0..c {
                        acc += gy[i * c + j] * xv.data()[i * c + j];
                    }
                    gs[i] += acc;
                }
            }
        }
        Op::Add { a, b } => {
            if let Some(ga) = buf(lo, *a) {
                for (g, &v) in ga.iter_mut().zip(gy) {
                    *g += v;
                }
            }
            if let Some(gb) = buf(lo, *b) {
                for (g, &v) in gb.iter_mut().zip(gy) {
                    *g += v;
                }
            }
        }
        Op::Scale { x, c } => {
            if let Some(gx) = buf(lo, *x) {
                for (g, &v) in gx.iter_mut().zip(gy) {
                    *g += v * c;
                }
            }
        }
        Op::MaxReduce { x, axis, arg } => {
            let shape = lo[x.0].value.shape().to_vec();
            let (outer, len, inner) = axis_split(&shape, *axis);
            if let Some(gx) = buf(lo, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let l = arg[o * inner + i] as usize;
                        gx[o * len * inner + l * inner + i] += gy[o * inner + i];
                    }
                }
            }
        }
        Op::GatherRows { x, idx } => {
            let width = node.value.len() / idx.len();
            if let Some(gx) = buf(lo, *x) {
                for (m, &i) in idx.iter().enumerate() {
                    let dst = i as usize * width;
                    for l in 0..width {
                        gx[dst + l] += gy[m * width + l];
                    }
                }
            }
        }
        Op::Dropout { x, keep, scale } => {
            if let Some(gx) = buf(lo, *x) {
                for ((g, &v), &k) in gx.iter_mut().zip(gy).zip(keep.iter()) {
                    if k {
                        *g += v * scale;
                    }
                }
            }
        }
        Op::SumAxis { x, axis } => {
            let shape = lo[x.0].value.shape().to_vec();
            let (outer, len, inner) = axis_split(&shape, *axis);
            if let Some(gx) = buf(lo, *x) {
                for o in 0..outer {
                    for l in 0..len {
                        let base = o * len * inner + l * inner;
                        for i in 0..inner {
                            gx[base + i] += gy[o * inner + i];
                        }
                    }
                }
            }
        }
        Op::SumAll { x } => {
            if let Some(gx) = buf(lo, *x) {
                for g in gx.iter_mut() {
                    *g += gy[0];
                }
            }
        }
        Op::Reshape { x } => {
            if let Some(gx) = buf(lo, *x) {
                for (g, &v) in gx.iter_mut().zip(gy) {
                    *g += v;
                }
            }
        }
        Op::RepeatRows { x, n } => {
            let c = node.value.len() / n;
            if let Some(gx) = buf(lo, *x) {
                for row in gy.chunks_exact(c) {
                    for (g, &v) in gx.iter_mut().zip(row) {
                        *g += v;
                    }
                }
            }
        }
        Op::EdgeFeatures { f, idx, k } => {
            let c = lo[f.0].value.shape()[1];
            let n = lo[f.0].value.shape()[0];
            if let Some(gf) = buf(lo, *f) {
                for i in 0..n {
                    for j in 0..*k {
                        let base = (i * k + j) * 2 * c;
                        let nb = idx[i * k + j] as usize;
                        for l in 0..c {
                            let ga = gy[base + l];
                            let gb = gy[base + c + l];
                            gf[i * c + l] += ga - gb;
                            gf[nb * c + l] += gb;
                        }
                    }
                }
            }
        }
        Op::EdgeLinear { f, w, b, idx, k } => {
            let fv = lo[f.0].value.clone();
            let wv = lo[w.0].value.clone();
            let (n, c) = (fv.shape()[0], fv.shape()[1]);
            let cout = wv.shape()[1];
            // Reduce dY over edges once: dP[i] = sum_j dY[i,j], dQ[r] = scatter.
            let mut dp = vec![0.0f32; n * cout];
            let mut dq = vec![0.0f32; n * cout];
            for i in 0..n {
                for j in 0..*k {
                    let src = &gy[(i * k + j) * cout..][..cout];
                    let nb = idx[i * k + j] as usize * cout;
                    for o in 0..cout {
                        dp[i * cout + o] += src[o];
                        dq[nb + o] += src[o];
                    }
                }
            }
            if let Some(gb) = buf(lo, *b) {
                for i in 0..n {
                    for o in 0..cout {
                        gb[o] += dp[i * cout + o];
                    }
                }
            }
            if let Some(gf) = buf(lo, *f) {
                let wd = wv.data();
                let mut wdiff = vec![0.0f32; c * cout];
                for r in 0..c {
                    for o in 0..cout {
                        wdiff[r * cout + o] = wd[r * cout + o] - wd[(c + r) * cout + o];
                    }
                }
                gemm_nt(n, cout, c, 1.0, &dp, &wdiff, 1.0, gf);
                gemm_nt(n, cout, c, 1.0, &dq, &wd[c * cout..], 1.0, gf);
            }
            if let Some(gw) = buf(lo, *w) {
                // dWa = f^T dP, dWb = f^T (dQ - dP)
                let mut g1 = vec![0.0f32; c * cout];
                let mut g2 = vec![0.0f32; c * cout];
                gemm_tn(c, n, cout, 1.0, fv.data(), &dp, 0.0, &mut g1);
                gemm_tn(c, n, cout, 1.0, fv.data(), &dq, 0.0, &mut g2);
                for r in 0..c * cout {
                    gw[r] += g1[r];
                    gw[c * cout + r] += g2[r] - g1[r];
                }
            }
        }
        Op::CrossEntropy { logits, targets } => {
            let lv = lo[logits.0].value.clone();
            let (n, c) = (lv.shape()[0], lv.shape()[1]);
            let g = gy[0] / n as f32;
            if let Some(gl) = buf(lo, *logits) {
                let src = lv.data();
                for (i, &cls) in targets.iter().enumerate() {
                    let row = &src[i * c..(i + 1) * c];
                    let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                    let sum: f32 = row.iter().map(|&v| (v - m).exp()).sum();
                    for j in 0..c {
                        let p = (row[j] - m).exp() / sum;
                        let ind = if j == cls as usize { 1.0 } else { 0.0 };
                        gl[i * c + j] += g * (p - ind);
                    }
                }
            }
        }
    }
}
