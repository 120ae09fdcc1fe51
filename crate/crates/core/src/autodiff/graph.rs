//! Dynamic computation tape.
//!
//! Every operation appends a node to an arena, so node order is already a
//! topological order and the backward pass is a single reverse sweep.

use crate::autodiff::kernels::{self, ConvGeom};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive that produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    BatchMatMul,
    TransposeLast2,
    Add,
    Sub,
    Mul,
    MulScalar,
    AddBias,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
    Concat,
    Reshape,
    Narrow,
    Conv2d,
    Sum,
    Mse,
    LayerNorm,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    TransposeLast2 { a: Var, batch: usize, rows: usize, cols: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulScalar { a: Var, s: T },
    AddBias { a: Var, bias: Var, n: usize },
    Relu { a: Var },
    Sigmoid { a: Var },
    Tanh { a: Var },
    Softmax { a: Var, outer: usize, axis_len: usize, inner: usize },
    Concat { inputs: Vec<Var>, outer: usize, widths: Vec<usize> },
    Reshape { a: Var },
    Narrow { a: Var, outer: usize, src_width: usize, offset: usize, width: usize },
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom, batch: usize },
    Sum { a: Var },
    Mse { a: Var, b: Var },
    LayerNorm { a: Var, gamma: Var, beta: Var, n: usize, stats: Vec<(T, T)> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::BatchMatMul { .. } => OpKind::BatchMatMul,
            Op::TransposeLast2 { .. } => OpKind::TransposeLast2,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::MulScalar { .. } => OpKind::MulScalar,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Tanh { .. } => OpKind::Tanh,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Concat { .. } => OpKind::Concat,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mse { .. } => OpKind::Mse,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. }
            | Op::BatchMatMul { a, b, .. }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::Mse { a, b } => vec![*a, *b],
            Op::AddBias { a, bias, .. } => vec![*a, *bias],
            Op::TransposeLast2 { a, .. }
            | Op::MulScalar { a, .. }
            | Op::Relu { a }
            | Op::Sigmoid { a }
            | Op::Tanh { a }
            | Op::Softmax { a, .. }
            | Op::Reshape { a }
            | Op::Narrow { a, .. }
            | Op::Sum { a } => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Conv2d { input, kernel, bias, .. } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias.iter().copied());
                v
            }
            Op::LayerNorm { a, gamma, beta, .. } => vec![*a, *gamma, *beta],
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Accumulated gradient; only leaves keep one across backward calls.
    grad: Option<Vec<T>>,
}

/// Append-only tape of tensor operations.
///
/// Leaves created with `requires_grad` collect gradients on
/// [`Graph::backward`]. Calling `backward` again without
/// [`Graph::zero_grad`] adds to the existing leaf gradients.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

/// Splits `shape` at `axis` into (outer, axis_len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Gradient buffer for `v`, allocated on first use; `None` for constants.
fn grad_buf<'g, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'g mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; it takes part in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: tensor.into_data(),
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    /// Copies a node's value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape and value always agree")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Clears every leaf gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = n.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    // ---------------------------------------------------------------- ops

    /// Matrix product. `a` may carry leading batch dimensions
    /// (`[.., m, k] × [k, n]`); they are folded into the row count.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::dim(
                "matmul",
                format!("cannot multiply {} by {}", shape_str(&sa), shape_str(&sb)),
            ));
        }
        let k = sb[0];
        let n = sb[1];
        let m = sa.iter().product::<usize>() / k;
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(self.value(a), self.value(b), &mut out, m, k, n);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        Ok(self.push(shape, out, Op::MatMul { a, b, m, k, n }))
    }

    /// Batched matrix product `[B, m, k] × [B, k, n] → [B, m, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim(
                "batch_matmul",
                format!("cannot multiply {} by {}", shape_str(&sa), shape_str(&sb)),
            ));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); batch * m * n];
        let (va, vb) = (self.value(a), self.value(b));
        for i in 0..batch {
            kernels::gemm(
                &va[i * m * k..(i + 1) * m * k],
                &vb[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.push(vec![batch, m, n], out, Op::BatchMatMul { a, b, batch, m, k, n }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 {
            return Err(Error::dim("transpose", format!("rank < 2: {}", shape_str(&sa))));
        }
        let rows = sa[sa.len() - 2];
        let cols = sa[sa.len() - 1];
        let batch = sa.iter().product::<usize>() / (rows * cols);
        let va = self.value(a);
        let mut out = vec![T::zero(); va.len()];
        for bi in 0..batch {
            let off = bi * rows * cols;
            for r in 0..rows {
                for c in 0..cols {
                    out[off + c * rows + r] = va[off + r * cols + c];
                }
            }
        }
        let mut shape = sa.clone();
        let len = shape.len();
        shape.swap(len - 1, len - 2);
        Ok(self.push(shape, out, Op::TransposeLast2 { a, batch, rows, cols }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{} vs {}", shape_str(self.shape(a)), shape_str(self.shape(b))),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Vec<T> {
        self.value(a).iter().map(|&x| f(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub { a, b }))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }))
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.map(a, |x| x * s);
        self.push(self.shape(a).to_vec(), out, Op::MulScalar { a, s })
    }

    /// Adds a vector along the last axis of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(bias);
        let n = *sa.last().unwrap_or(&1);
        if sa.is_empty() || sb.len() != 1 || sb[0] != n {
            return Err(Error::dim(
                "add_bias",
                format!("bias {} for input {}", shape_str(sb), shape_str(sa)),
            ));
        }
        let vb = self.value(bias);
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|row| row.iter().zip(vb).map(|(&x, &b)| x + b))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddBias { a, bias, n }))
    }

    /// `x · w + bias`, applied over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| if x < T::zero() { T::zero() } else { x });
        self.push(self.shape(a).to_vec(), out, Op::Relu { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.push(self.shape(a).to_vec(), out, Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, T::tanh);
        self.push(self.shape(a).to_vec(), out, Op::Tanh { a })
    }

    /// Softmax over `axis`, stabilized by subtracting the slice maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::dim(
                "softmax",
                format!("axis {axis} out of range for {}", shape_str(&sa)),
            ));
        }
        let (outer, axis_len, inner) = split_axis(&sa, axis);
        let va = self.value(a);
        let mut out = vec![T::zero(); va.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * axis_len + j) * inner + i;
                let max = (0..axis_len).map(|j| va[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..axis_len {
                    let e = (va[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..axis_len {
                    out[at(j)] /= total;
                }
            }
        }
        Ok(self.push(sa, out, Op::Softmax { a, outer, axis_len, inner }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} out of range for {}", shape_str(&base)),
            ));
        }
        let mut total_axis = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !agrees {
                return Err(Error::dim(
                    "concat",
                    format!("{} vs {} on axis {axis}", shape_str(s), shape_str(&base)),
                ));
            }
            total_axis += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let widths: Vec<usize> = inputs.iter().map(|&v| self.shape(v)[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total_axis;
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                widths,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).len() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("{} to {}", shape_str(self.shape(a)), shape_str(shape)),
            ));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape { a }))
    }

    /// Collapses everything but the first axis: `[B, ..] → [B, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let b = *s.first().ok_or_else(|| Error::dim("flatten", "rank-0 input"))?;
        let rest = s[1..].iter().product();
        self.reshape(a, &[b, rest])
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || len == 0 || start + len > sa[axis] {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {}", start + len, shape_str(&sa)),
            ));
        }
        let (outer, axis_len, inner) = split_axis(&sa, axis);
        let src_width = axis_len * inner;
        let offset = start * inner;
        let width = len * inner;
        let va = self.value(a);
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            out.extend_from_slice(&va[o * src_width + offset..o * src_width + offset + width]);
        }
        let mut shape = sa;
        shape[axis] = len;
        Ok(self.push(
            shape,
            out,
            Op::Narrow {
                a,
                outer,
                src_width,
                offset,
                width,
            },
        ))
    }

    /// 2-D cross-correlation with square stride and padding.
    ///
    /// `input` is `[N, C_in, H, W]` or `[C_in, H, W]`, `kernel` is
    /// `[C_out, C_in, kh, kw]`, `bias` is `[C_out]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.conv2d_general(input, kernel, bias, (stride, stride), (padding, padding))
    }

    pub fn conv2d_general(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let (batch, dims) = match si.len() {
            3 => (None, [si[0], si[1], si[2]]),
            4 => (Some(si[0]), [si[1], si[2], si[3]]),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("input must be rank 3 or 4, got {}", shape_str(&si)),
                ))
            }
        };
        if sk.len() != 4 || sk[1] != dims[0] {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {} for input {}", shape_str(&sk), shape_str(&si)),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sk[0]] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias {} for {} output channels", shape_str(self.shape(b)), sk[0]),
                ));
            }
        }
        let geom = ConvGeom::new(dims[0], dims[1], dims[2], sk[0], sk[2], sk[3], stride, padding)?;
        let n = batch.unwrap_or(1);
        let out_len = geom.out_len();
        let mut out = vec![T::zero(); n * geom.c_out * out_len];
        let mut cols = vec![T::zero(); geom.patch_len() * out_len];
        let vi = self.value(input);
        let vk = self.value(kernel);
        for s in 0..n {
            geom.im2col(&vi[s * geom.in_len()..(s + 1) * geom.in_len()], &mut cols);
            let dst = &mut out[s * geom.c_out * out_len..(s + 1) * geom.c_out * out_len];
            kernels::gemm(vk, &cols, dst, geom.c_out, geom.patch_len(), out_len);
            if let Some(b) = bias {
                let vb = self.value(b);
                for (c, chunk) in dst.chunks_mut(out_len).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += vb[c]);
                }
            }
        }
        let mut shape = vec![geom.c_out, geom.oh, geom.ow];
        if let Some(b) = batch {
            shape.insert(0, b);
        }
        Ok(self.push(
            shape,
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch: n,
            },
        ))
    }

    /// 1-D cross-correlation: `[N, C_in, L] ⊛ [C_out, C_in, k] → [N, C_out, L']`.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        if si.len() != 3 || sk.len() != 3 {
            return Err(Error::dim(
                "conv1d",
                format!("input {} kernel {}", shape_str(&si), shape_str(&sk)),
            ));
        }
        let x4 = self.reshape(input, &[si[0], si[1], 1, si[2]])?;
        let k4 = self.reshape(kernel, &[sk[0], sk[1], 1, sk[2]])?;
        let y = self.conv2d_general(x4, k4, bias, (1, stride), (0, padding))?;
        let sy = self.shape(y).to_vec();
        self.reshape(y, &[sy[0], sy[1], sy[3]])
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().copied().sum();
        self.push(Vec::new(), vec![total], Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::of(self.value(a).len() as f64);
        let s = self.sum(a);
        self.mul_scalar(s, T::one() / n)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let n = T::of(self.value(pred).len() as f64);
        let total: T = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(Vec::new(), vec![total / n], Op::Mse { a: pred, b: target }))
    }

    /// Normalizes over the last axis, then scales by `gamma` and shifts by `beta`.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let n = *sa.last().ok_or_else(|| Error::dim("layer_norm", "rank-0 input"))?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gamma {} beta {} for input {}",
                    shape_str(self.shape(gamma)),
                    shape_str(self.shape(beta)),
                    shape_str(&sa)
                ),
            ));
        }
        let nf = T::of(n as f64);
        let (va, vg, vb) = (self.value(a), self.value(gamma), self.value(beta));
        let mut out = Vec::with_capacity(va.len());
        let mut stats = Vec::with_capacity(va.len() / n);
        for row in va.chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nf;
            let rstd = T::one() / (var + eps).sqrt();
            for j in 0..n {
                out.push((row[j] - mean) * rstd * vg[j] + vb[j]);
            }
            stats.push((mean, rstd));
        }
        Ok(self.push(
            sa,
            out,
            Op::LayerNorm {
                a,
                gamma,
                beta,
                n,
                stats,
            },
        ))
    }

    // ----------------------------------------------------------- backward

    /// Back-propagates from a one-element `loss`, adding into the gradient
    /// of every differentiable leaf it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(&self.nodes[loss.0].shape)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &d)| *a += d),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        macro_rules! with_grad {
            ($v:expr, |$buf:ident| $body:block) => {
                if let Some($buf) = grad_buf(nodes, grads, $v) $body
            };
        }

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                with_grad!(*a, |ga| {
                    kernels::gemm_nt(g, vb, ga, *m, *k, *n);
                });
                with_grad!(*b, |gb| {
                    kernels::gemm_tn(va, g, gb, *m, *k, *n);
                });
            }
            Op::BatchMatMul { a, b, batch, m, k, n } => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (mk, kn, mn) = (m * k, k * n, m * n);
                with_grad!(*a, |ga| {
                    for s in 0..*batch {
                        kernels::gemm_nt(
                            &g[s * mn..(s + 1) * mn],
                            &vb[s * kn..(s + 1) * kn],
                            &mut ga[s * mk..(s + 1) * mk],
                            *m,
                            *k,
                            *n,
                        );
                    }
                });
                with_grad!(*b, |gb| {
                    for s in 0..*batch {
                        kernels::gemm_tn(
                            &va[s * mk..(s + 1) * mk],
                            &g[s * mn..(s + 1) * mn],
                            &mut gb[s * kn..(s + 1) * kn],
                            *m,
                            *k,
                            *n,
                        );
                    }
                });
            }
            Op::TransposeLast2 { a, batch, rows, cols } => {
                with_grad!(*a, |ga| {
                    for bi in 0..*batch {
                        let off = bi * rows * cols;
                        for r in 0..*rows {
                            for c in 0..*cols {
                                ga[off + r * cols + c] += g[off + c * rows + r];
                            }
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                with_grad!(*a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d);
                });
                with_grad!(*b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, &d)| *x += d);
                });
            }
            Op::Sub { a, b } => {
                with_grad!(*a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d);
                });
                with_grad!(*b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, &d)| *x -= d);
                });
            }
            Op::Mul { a, b } => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                with_grad!(*a, |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j] * vb[j];
                    }
                });
                with_grad!(*b, |gb| {
                    for j in 0..g.len() {
                        gb[j] += g[j] * va[j];
                    }
                });
            }
            Op::MulScalar { a, s } => {
                with_grad!(*a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d * *s);
                });
            }
            Op::AddBias { a, bias, n } => {
                with_grad!(*a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d);
                });
                with_grad!(*bias, |gb| {
                    for row in g.chunks(*n) {
                        gb.iter_mut().zip(row).for_each(|(x, &d)| *x += d);
                    }
                });
            }
            Op::Relu { a } => {
                let va = &nodes[a.0].value;
                with_grad!(*a, |ga| {
                    for j in 0..g.len() {
                        if va[j] > T::zero() {
                            ga[j] += g[j];
                        }
                    }
                });
            }
            Op::Sigmoid { a } => {
                with_grad!(*a, |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j] * out[j] * (T::one() - out[j]);
                    }
                });
            }
            Op::Tanh { a } => {
                with_grad!(*a, |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j] * (T::one() - out[j] * out[j]);
                    }
                });
            }
            Op::Softmax { a, outer, axis_len, inner } => {
                with_grad!(*a, |ga| {
                    for o in 0..*outer {
                        for ii in 0..*inner {
                            let at = |j: usize| (o * axis_len + j) * inner + ii;
                            let dot: T = (0..*axis_len).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..*axis_len {
                                ga[at(j)] += out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Concat { inputs, outer, widths } => {
                let row: usize = widths.iter().sum();
                let mut off = 0;
                for (&v, &w) in inputs.iter().zip(widths) {
                    with_grad!(v, |gv| {
                        for o in 0..*outer {
                            let src = &g[o * row + off..o * row + off + w];
                            gv[o * w..(o + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, &d)| *x += d);
                        }
                    });
                    off += w;
                }
            }
            Op::Reshape { a } => {
                with_grad!(*a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d);
                });
            }
            Op::Narrow { a, outer, src_width, offset, width } => {
                with_grad!(*a, |ga| {
                    for o in 0..*outer {
                        let dst = &mut ga[o * src_width + offset..o * src_width + offset + width];
                        dst.iter_mut()
                            .zip(&g[o * width..(o + 1) * width])
                            .for_each(|(x, &d)| *x += d);
                    }
                });
            }
            Op::Conv2d { input, kernel, bias, geom, batch } => {
                let vi = &nodes[input.0].value;
                let vk = &nodes[kernel.0].value;
                let out_len = geom.out_len();
                let span = geom.c_out * out_len;
                let mut cols = vec![T::zero(); geom.patch_len() * out_len];
                with_grad!(*kernel, |gk| {
                    for s in 0..*batch {
                        geom.im2col(&vi[s * geom.in_len()..(s + 1) * geom.in_len()], &mut cols);
                        kernels::gemm_nt(
                            &g[s * span..(s + 1) * span],
                            &cols,
                            gk,
                            geom.c_out,
                            geom.patch_len(),
                            out_len,
                        );
                    }
                });
                with_grad!(*input, |gi| {
                    for s in 0..*batch {
                        cols.iter_mut().for_each(|v| *v = T::zero());
                        kernels::gemm_tn(
                            vk,
                            &g[s * span..(s + 1) * span],
                            &mut cols,
                            geom.c_out,
                            geom.patch_len(),
                            out_len,
                        );
                        geom.col2im(&cols, &mut gi[s * geom.in_len()..(s + 1) * geom.in_len()]);
                    }
                });
                if let Some(b) = bias {
                    with_grad!(*b, |gb| {
                        for s in 0..*batch {
                            for (c, chunk) in g[s * span..(s + 1) * span].chunks(out_len).enumerate() {
                                gb[c] += chunk.iter().copied().sum();
                            }
                        }
                    });
                }
            }
            Op::Sum { a } => {
                with_grad!(*a, |ga| {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                });
            }
            Op::Mse { a, b } => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let scale = T::of(2.0) * g[0] / T::of(va.len() as f64);
                with_grad!(*a, |ga| {
                    for j in 0..va.len() {
                        ga[j] += scale * (va[j] - vb[j]);
                    }
                });
                with_grad!(*b, |gb| {
                    for j in 0..va.len() {
                        gb[j] -= scale * (va[j] - vb[j]);
                    }
                });
            }
            Op::LayerNorm { a, gamma, beta, n, stats } => {
                let va = &nodes[a.0].value;
                let vg = &nodes[gamma.0].value;
                let n = *n;
                let nf = T::of(n as f64);
                let xhat = |r: usize, j: usize| (va[r * n + j] - stats[r].0) * stats[r].1;
                with_grad!(*a, |ga| {
                    for (r, &(_, rstd)) in stats.iter().enumerate() {
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..n {
                            let d = g[r * n + j] * vg[j];
                            sum_d += d;
                            sum_dx += d * xhat(r, j);
                        }
                        for j in 0..n {
                            let d = g[r * n + j] * vg[j];
                            ga[r * n + j] += rstd / nf * (nf * d - sum_d - xhat(r, j) * sum_dx);
                        }
                    }
                });
                with_grad!(*gamma, |gg| {
                    for r in 0..stats.len() {
                        for j in 0..n {
                            gg[j] += g[r * n + j] * xhat(r, j);
                        }
                    }
                });
                with_grad!(*beta, |gb| {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, &d)| *x += d);
                    }
                });
            }
        }
    }
}
