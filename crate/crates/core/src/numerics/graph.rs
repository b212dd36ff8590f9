//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every operation appends one node holding its inputs, its forward value,
//! and enough metadata to evaluate the local vector-Jacobian product later.
//! Nodes are appended in execution order, so the record is topologically
//! sorted by construction and a single reverse sweep implements
//! backpropagation.

use super::kernels;
use super::{NumericsError, Scalar, Tensor, LOG_GUARD};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Scale(T),
    AddScalar(T),
    Abs,
    Log,
    Gelu,
    Matmul,
    Transpose2d,
    Linear,
    Conv2d,
    DepthwiseConv2d,
    BatchNorm { eps: T },
    CenterChannels,
    LayerNorm { eps: T },
    Softmax { axis: usize },
    ResizeBilinear,
    L2NormalizeRows,
    ConcatLast,
    Reshape,
    ExtractPatches { p: usize },
    SumAll,
    HardOneHot,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Abs => "abs",
            Op::Log => "log",
            Op::Gelu => "gelu",
            Op::Matmul => "matmul",
            Op::Transpose2d => "transpose2d",
            Op::Linear => "linear",
            Op::Conv2d => "conv2d",
            Op::DepthwiseConv2d => "depthwise_conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::CenterChannels => "center_channels",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax { .. } => "softmax",
            Op::ResizeBilinear => "resize_bilinear",
            Op::L2NormalizeRows => "l2_normalize_rows",
            Op::ConcatLast => "concat_last",
            Op::Reshape => "reshape",
            Op::ExtractPatches { .. } => "extract_patches",
            Op::SumAll => "sum_all",
            Op::HardOneHot => "hard_one_hot",
        }
    }

    /// True for ops that block gradient flow by construction.
    fn is_barrier(&self) -> bool {
        matches!(self, Op::HardOneHot)
    }
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<ValueId>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// The computation record: an append-only list of operation nodes.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `id`. Populated (possibly with zeros)
    /// for every node that requires grad.
    pub fn get(&self, id: ValueId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Registers a differentiable input (parameter) node.
    pub fn leaf(&mut self, value: Tensor<T>) -> ValueId {
        self.push(Op::Leaf, vec![], value, true)
    }

    /// Registers a non-differentiable input node.
    pub fn constant(&mut self, value: Tensor<T>) -> ValueId {
        self.push(Op::Constant, vec![], value, false)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: ValueId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<ValueId>, value: Tensor<T>, rg: bool) -> ValueId {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad: rg,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op<T>, inputs: Vec<ValueId>, value: Tensor<T>) -> ValueId {
        let rg = !op.is_barrier() && inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.push(op, inputs, value, rg)
    }

    // ── elementwise ──────────────────────────────────────────────────

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        self.same_shape("add", a, b)?;
        let v = kernels::zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push_op(Op::Add, vec![a, b], v))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        self.same_shape("sub", a, b)?;
        let v = kernels::zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push_op(Op::Sub, vec![a, b], v))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        self.same_shape("mul", a, b)?;
        let v = kernels::zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push_op(Op::Mul, vec![a, b], v))
    }

    pub fn scale(&mut self, a: ValueId, c: T) -> ValueId {
        let v = self.value(a).map(|x| x * c);
        self.push_op(Op::Scale(c), vec![a], v)
    }

    pub fn add_scalar(&mut self, a: ValueId, c: T) -> ValueId {
        let v = self.value(a).map(|x| x + c);
        self.push_op(Op::AddScalar(c), vec![a], v)
    }

    pub fn abs(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).map(|x| x.abs());
        self.push_op(Op::Abs, vec![a], v)
    }

    /// Elementwise natural log. Callers add [`LOG_GUARD`] themselves when the
    /// argument can reach zero.
    pub fn log(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).map(|x| x.ln());
        self.push_op(Op::Log, vec![a], v)
    }

    pub fn gelu(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).map(kernels::gelu);
        self.push_op(Op::Gelu, vec![a], v)
    }

    // ── linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        self.expect_rank("matmul", a, 2)?;
        self.expect_rank("matmul", b, 2)?;
        let k = self.value(a).shape()[1];
        if self.value(b).shape()[0] != k {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                axis: "inner dimension",
                expected: k,
                got: self.value(b).shape()[0],
            });
        }
        let v = kernels::matmul(self.value(a), self.value(b));
        Ok(self.push_op(Op::Matmul, vec![a, b], v))
    }

    pub fn transpose2d(&mut self, a: ValueId) -> Result<ValueId, NumericsError> {
        self.expect_rank("transpose2d", a, 2)?;
        let v = kernels::transpose2d(self.value(a));
        Ok(self.push_op(Op::Transpose2d, vec![a], v))
    }

    /// Affine map per row: `x[n,din] · w[din,dout] + b[dout]`.
    pub fn linear(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
    ) -> Result<ValueId, NumericsError> {
        self.expect_rank("linear", x, 2)?;
        self.expect_rank("linear", w, 2)?;
        self.expect_rank("linear", b, 1)?;
        let din = self.value(x).shape()[1];
        let dout = self.value(w).shape()[1];
        if self.value(w).shape()[0] != din {
            return Err(NumericsError::ShapeMismatch {
                op: "linear",
                axis: "input features",
                expected: din,
                got: self.value(w).shape()[0],
            });
        }
        if self.value(b).shape()[0] != dout {
            return Err(NumericsError::ShapeMismatch {
                op: "linear",
                axis: "bias length",
                expected: dout,
                got: self.value(b).shape()[0],
            });
        }
        let mut v = kernels::matmul(self.value(x), self.value(w));
        let bd = self.value(b).data().to_vec();
        for row in v.data_mut().chunks_exact_mut(dout) {
            for (o, &bv) in row.iter_mut().zip(&bd) {
                *o += bv;
            }
        }
        Ok(self.push_op(Op::Linear, vec![x, w, b], v))
    }

    // ── convolutions ─────────────────────────────────────────────────

    /// Same-padded cross-correlation with an odd square kernel.
    pub fn conv2d(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
    ) -> Result<ValueId, NumericsError> {
        self.expect_rank("conv2d", input, 3)?;
        self.expect_rank("conv2d", kernel, 4)?;
        self.expect_rank("conv2d", bias, 1)?;
        let kshape = self.value(kernel).shape().to_vec();
        let (k, cin, cout) = (kshape[0], kshape[2], kshape[3]);
        if kshape[1] != k {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d",
                axis: "kernel width",
                expected: k,
                got: kshape[1],
            });
        }
        if k % 2 == 0 {
            return Err(NumericsError::Invalid {
                op: "conv2d",
                msg: format!("kernel size must be odd, got {k}"),
            });
        }
        if self.value(input).shape()[2] != cin {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d",
                axis: "input channels",
                expected: cin,
                got: self.value(input).shape()[2],
            });
        }
        if self.value(bias).shape()[0] != cout {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d",
                axis: "bias length",
                expected: cout,
                got: self.value(bias).shape()[0],
            });
        }
        let v = kernels::conv2d(self.value(input), self.value(kernel), self.value(bias));
        Ok(self.push_op(Op::Conv2d, vec![input, kernel, bias], v))
    }

    /// Same-padded per-channel convolution (`kernel[k,k,c]`, odd `k`).
    pub fn depthwise_conv2d(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
    ) -> Result<ValueId, NumericsError> {
        self.expect_rank("depthwise_conv2d", input, 3)?;
        self.expect_rank("depthwise_conv2d", kernel, 3)?;
        self.expect_rank("depthwise_conv2d", bias, 1)?;
        let c = self.value(input).shape()[2];
        let kshape = self.value(kernel).shape().to_vec();
        if kshape[0] != kshape[1] || kshape[0] % 2 == 0 {
            return Err(NumericsError::Invalid {
                op: "depthwise_conv2d",
                msg: format!("kernel must be square with odd size, got {kshape:?}"),
            });
        }
        if kshape[2] != c {
            return Err(NumericsError::ShapeMismatch {
                op: "depthwise_conv2d",
                axis: "channels",
                expected: c,
                got: kshape[2],
            });
        }
        if self.value(bias).shape()[0] != c {
            return Err(NumericsError::ShapeMismatch {
                op: "depthwise_conv2d",
                axis: "bias length",
                expected: c,
                got: self.value(bias).shape()[0],
            });
        }
        let v = kernels::depthwise_conv2d(self.value(input), self.value(kernel), self.value(bias));
        Ok(self.push_op(Op::DepthwiseConv2d, vec![input, kernel, bias], v))
    }

    // ── normalization ────────────────────────────────────────────────

    /// Single-image batch norm: per-channel statistics over the spatial
    /// positions of an `[h,w,c]` tensor.
    pub fn batch_norm(
        &mut self,
        input: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: T,
    ) -> Result<ValueId, NumericsError> {
        self.expect_rank("batch_norm", input, 3)?;
        let shape = self.value(input).shape();
        let c = shape[2];
        if shape[0] * shape[1] < 2 {
            return Err(NumericsError::Invalid {
                op: "batch_norm",
                msg: "needs at least 2 spatial positions".into(),
            });
        }
        self.expect_len("batch_norm", gamma, "gamma length", c)?;
        self.expect_len("batch_norm", beta, "beta length", c)?;
        let v = kernels::batch_norm(self.value(input), self.value(gamma), self.value(beta), eps);
        Ok(self.push_op(Op::BatchNorm { eps }, vec![input, gamma, beta], v))
    }

    /// Subtracts each channel's spatial mean from an `[h,w,c]` tensor.
    pub fn center_channels(&mut self, input: ValueId) -> Result<ValueId, NumericsError> {
        self.expect_rank("center_channels", input, 3)?;
        let c = self.value(input).shape()[2];
        let m = T::from_f64((self.value(input).numel() / c) as f64);
        let mut means = vec![T::zero(); c];
        for row in self.value(input).data().chunks_exact(c) {
            for (acc, &v) in means.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in means.iter_mut() {
            *v /= m;
        }
        let mut out = Vec::with_capacity(self.value(input).numel());
        for row in self.value(input).data().chunks_exact(c) {
            for (ci, &v) in row.iter().enumerate() {
                out.push(v - means[ci]);
            }
        }
        let v = Tensor::new(self.value(input).shape().to_vec(), out).expect("center shape");
        Ok(self.push_op(Op::CenterChannels, vec![input], v))
    }

    /// Per-row layer norm over the feature axis of an `[n,d]` tensor.
    pub fn layer_norm(
        &mut self,
        input: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: T,
    ) -> Result<ValueId, NumericsError> {
        self.expect_rank("layer_norm", input, 2)?;
        let d = self.value(input).shape()[1];
        if d < 2 {
            return Err(NumericsError::Invalid {
                op: "layer_norm",
                msg: "needs at least 2 features per row".into(),
            });
        }
        self.expect_len("layer_norm", gamma, "gamma length", d)?;
        self.expect_len("layer_norm", beta, "beta length", d)?;
        let v = kernels::layer_norm(self.value(input), self.value(gamma), self.value(beta), eps);
        Ok(self.push_op(Op::LayerNorm { eps }, vec![input, gamma, beta], v))
    }

    pub fn softmax(&mut self, input: ValueId, axis: usize) -> Result<ValueId, NumericsError> {
        let rank = self.value(input).shape().len();
        if axis >= rank {
            return Err(NumericsError::Invalid {
                op: "softmax",
                msg: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        let v = kernels::softmax(self.value(input), axis);
        Ok(self.push_op(Op::Softmax { axis }, vec![input], v))
    }

    // ── shape & resampling ───────────────────────────────────────────

    pub fn resize_bilinear(
        &mut self,
        input: ValueId,
        out_h: usize,
        out_w: usize,
    ) -> Result<ValueId, NumericsError> {
        self.expect_rank("resize_bilinear", input, 3)?;
        if out_h == 0 || out_w == 0 {
            return Err(NumericsError::Invalid {
                op: "resize_bilinear",
                msg: "output dimensions must be positive".into(),
            });
        }
        let v = kernels::resize_bilinear(self.value(input), out_h, out_w);
        Ok(self.push_op(Op::ResizeBilinear, vec![input], v))
    }

    /// Divides every row of an `[n,d]` tensor by its L2 norm (guarded).
    pub fn l2_normalize_rows(&mut self, input: ValueId) -> Result<ValueId, NumericsError> {
        self.expect_rank("l2_normalize_rows", input, 2)?;
        let v = kernels::l2_normalize_rows(self.value(input), T::from_f64(LOG_GUARD));
        Ok(self.push_op(Op::L2NormalizeRows, vec![input], v))
    }

    /// Concatenates two tensors along their last axis; leading axes must match.
    pub fn concat_last(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(NumericsError::Invalid {
                op: "concat_last",
                msg: format!("leading dimensions differ: {sa:?} vs {sb:?}"),
            });
        }
        let ca = sa[sa.len() - 1];
        let cb = sb[sb.len() - 1];
        let rows = self.value(a).numel() / ca;
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for (ra, rb) in self
            .value(a)
            .data()
            .chunks_exact(ca)
            .zip(self.value(b).data().chunks_exact(cb))
        {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = ca + cb;
        let v = Tensor::new(shape, data).expect("concat shape");
        Ok(self.push_op(Op::ConcatLast, vec![a, b], v))
    }

    pub fn reshape(&mut self, input: ValueId, shape: &[usize]) -> Result<ValueId, NumericsError> {
        let v = self.value(input).reshaped(shape)?;
        Ok(self.push_op(Op::Reshape, vec![input], v))
    }

    /// Rearranges an `[h,w,c]` tensor into non-overlapping `p`×`p` patches:
    /// one row of `p²·c` values per patch, patches in row-major grid order.
    pub fn extract_patches(&mut self, input: ValueId, p: usize) -> Result<ValueId, NumericsError> {
        self.expect_rank("extract_patches", input, 3)?;
        let (h, w, c) = {
            let s = self.value(input).shape();
            (s[0], s[1], s[2])
        };
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(NumericsError::Invalid {
                op: "extract_patches",
                msg: format!("{h}x{w} input is not divisible into {p}x{p} patches"),
            });
        }
        let (gh, gw) = (h / p, w / p);
        let ind = self.value(input).data();
        let mut out = Vec::with_capacity(h * w * c);
        for gy in 0..gh {
            for gx in 0..gw {
                for py in 0..p {
                    let row = ((gy * p + py) * w + gx * p) * c;
                    out.extend_from_slice(&ind[row..row + p * c]);
                }
            }
        }
        let v = Tensor::new(vec![gh * gw, p * p * c], out).expect("patch shape");
        Ok(self.push_op(Op::ExtractPatches { p }, vec![input], v))
    }

    /// Reduces a tensor to a 1-element sum.
    pub fn sum_all(&mut self, input: ValueId) -> ValueId {
        let s = self.value(input).data().iter().copied().sum::<T>();
        self.push_op(Op::SumAll, vec![input], Tensor::scalar(s))
    }

    /// Reduces a tensor to its mean as a 1-element tensor.
    pub fn mean_all(&mut self, input: ValueId) -> ValueId {
        let n = T::from_f64(self.value(input).numel() as f64);
        let s = self.sum_all(input);
        self.scale(s, T::one() / n)
    }

    /// One-hot of the argmax along the last axis (lowest index wins ties).
    ///
    /// This is a gradient barrier: the output never propagates gradient to
    /// the input, mirroring the hard assignment's zero derivative almost
    /// everywhere. [`finite_diff_check`](super::finite_diff_check) reports
    /// barriers it finds on the loss path.
    pub fn hard_one_hot(&mut self, input: ValueId) -> Result<ValueId, NumericsError> {
        let shape = self.value(input).shape().to_vec();
        if shape.is_empty() {
            return Err(NumericsError::RankMismatch {
                op: "hard_one_hot",
                expected: 1,
                shape,
            });
        }
        let k = *shape.last().unwrap();
        let data = self.value(input).data();
        let mut out = vec![T::zero(); data.len()];
        for (row_in, row_out) in data.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
            let mut best = 0;
            for (j, &v) in row_in.iter().enumerate() {
                if v > row_in[best] {
                    best = j;
                }
            }
            row_out[best] = T::one();
        }
        let v = Tensor::new(shape, out).expect("one-hot shape");
        Ok(self.push_op(Op::HardOneHot, vec![input], v))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse-topological gradient accumulation from a scalar loss node.
    ///
    /// Every node with `requires_grad` ends up with a gradient; nodes the
    /// loss does not depend on get zero tensors.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<T>, NumericsError> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(NumericsError::NonScalarLoss { numel });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.accumulate_inputs(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    /// Names of gradient-barrier operations reachable from `id`.
    pub fn barrier_ops_on_path(&self, id: ValueId) -> Vec<&'static str> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![id.0];
        let mut found = Vec::new();
        while let Some(i) = stack.pop() {
            if seen[i] {
                continue;
            }
            seen[i] = true;
            let node = &self.nodes[i];
            if node.op.is_barrier() {
                found.push(node.op.name());
            }
            stack.extend(node.inputs.iter().map(|v| v.0));
        }
        found.sort_unstable();
        found.dedup();
        found
    }

    fn accumulate_inputs(&self, i: usize, gout: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let needs: Vec<bool> = node
            .inputs
            .iter()
            .map(|&x| self.nodes[x.0].requires_grad)
            .collect();
        if !needs.iter().any(|&b| b) {
            return;
        }
        let input = |j: usize| &self.nodes[node.inputs[j].0].value;
        let send = |slot: usize, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]| {
            let target = node.inputs[slot].0;
            match &mut grads[target] {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        };

        match &node.op {
            Op::Leaf | Op::Constant | Op::HardOneHot => {}
            Op::Add => {
                if needs[0] {
                    send(0, gout.clone(), grads);
                }
                if needs[1] {
                    send(1, gout.clone(), grads);
                }
            }
            Op::Sub => {
                if needs[0] {
                    send(0, gout.clone(), grads);
                }
                if needs[1] {
                    send(1, gout.map(|v| -v), grads);
                }
            }
            Op::Mul => {
                if needs[0] {
                    send(0, kernels::zip(gout, input(1), |g, b| g * b), grads);
                }
                if needs[1] {
                    send(1, kernels::zip(gout, input(0), |g, a| g * a), grads);
                }
            }
            Op::Scale(c) => {
                let c = *c;
                send(0, gout.map(|g| g * c), grads);
            }
            Op::AddScalar(_) => send(0, gout.clone(), grads),
            Op::Abs => {
                let g = kernels::zip(gout, input(0), |g, x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                send(0, g, grads);
            }
            Op::Log => {
                let g = kernels::zip(gout, input(0), |g, x| g / x);
                send(0, g, grads);
            }
            Op::Gelu => {
                let g = kernels::zip(gout, input(0), |g, x| g * kernels::gelu_derivative(x));
                send(0, g, grads);
            }
            Op::Matmul => {
                if needs[0] {
                    send(0, kernels::matmul_nt(gout, input(1)), grads);
                }
                if needs[1] {
                    send(1, kernels::matmul_tn(input(0), gout), grads);
                }
            }
            Op::Transpose2d => send(0, kernels::transpose2d(gout), grads),
            Op::Linear => {
                if needs[0] {
                    send(0, kernels::matmul_nt(gout, input(1)), grads);
                }
                if needs[1] {
                    send(1, kernels::matmul_tn(input(0), gout), grads);
                }
                if needs[2] {
                    send(2, column_sums(gout), grads);
                }
            }
            Op::Conv2d => {
                let (h, w) = (input(0).shape()[0], input(0).shape()[1]);
                let k = input(1).shape()[0];
                if needs[0] {
                    send(0, kernels::conv2d_backward_input(gout, input(1), h, w), grads);
                }
                if needs[1] {
                    send(1, kernels::conv2d_backward_kernel(gout, input(0), k), grads);
                }
                if needs[2] {
                    send(2, channel_sums(gout), grads);
                }
            }
            Op::DepthwiseConv2d => {
                let k = input(1).shape()[0];
                if needs[0] {
                    send(
                        0,
                        kernels::depthwise_conv2d_backward_input(gout, input(1)),
                        grads,
                    );
                }
                if needs[1] {
                    send(
                        1,
                        kernels::depthwise_conv2d_backward_kernel(gout, input(0), k),
                        grads,
                    );
                }
                if needs[2] {
                    send(2, channel_sums(gout), grads);
                }
            }
            Op::CenterChannels => {
                // projection onto zero-mean maps is self-adjoint
                let c = input(0).shape()[2];
                let m = T::from_f64((input(0).numel() / c) as f64);
                let mut means = vec![T::zero(); c];
                for row in gout.data().chunks_exact(c) {
                    for (acc, &v) in means.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                for v in means.iter_mut() {
                    *v /= m;
                }
                let mut gin = Vec::with_capacity(gout.numel());
                for row in gout.data().chunks_exact(c) {
                    for (ci, &v) in row.iter().enumerate() {
                        gin.push(v - means[ci]);
                    }
                }
                send(
                    0,
                    Tensor::new(input(0).shape().to_vec(), gin).expect("center grad shape"),
                    grads,
                );
            }
            Op::BatchNorm { eps } => {
                let (gx, gg, gb) = batch_norm_backward(input(0), input(1), gout, *eps);
                if needs[0] {
                    send(0, gx, grads);
                }
                if needs[1] {
                    send(1, gg, grads);
                }
                if needs[2] {
                    send(2, gb, grads);
                }
            }
            Op::LayerNorm { eps } => {
                let (gx, gg, gb) = layer_norm_backward(input(0), input(1), gout, *eps);
                if needs[0] {
                    send(0, gx, grads);
                }
                if needs[1] {
                    send(1, gg, grads);
                }
                if needs[2] {
                    send(2, gb, grads);
                }
            }
            Op::Softmax { axis } => {
                send(0, kernels::softmax_backward(&node.value, gout, *axis), grads);
            }
            Op::ResizeBilinear => {
                let (h, w) = (input(0).shape()[0], input(0).shape()[1]);
                send(0, kernels::resize_bilinear_backward(gout, h, w), grads);
            }
            Op::L2NormalizeRows => {
                send(0, l2_normalize_rows_backward(input(0), gout), grads);
            }
            Op::ConcatLast => {
                let ca = *input(0).shape().last().unwrap();
                let cb = *input(1).shape().last().unwrap();
                let mut da = Vec::with_capacity(input(0).numel());
                let mut db = Vec::with_capacity(input(1).numel());
                for row in gout.data().chunks_exact(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                if needs[0] {
                    send(
                        0,
                        Tensor::new(input(0).shape().to_vec(), da).expect("split shape"),
                        grads,
                    );
                }
                if needs[1] {
                    send(
                        1,
                        Tensor::new(input(1).shape().to_vec(), db).expect("split shape"),
                        grads,
                    );
                }
            }
            Op::Reshape => {
                let g = gout
                    .reshaped(input(0).shape())
                    .expect("reshape grad shape");
                send(0, g, grads);
            }
            Op::ExtractPatches { p } => {
                // pure permutation: scatter each patch row back to its tile
                let p = *p;
                let (h, w, c) = {
                    let s = input(0).shape();
                    (s[0], s[1], s[2])
                };
                let (gh, gw) = (h / p, w / p);
                let gd = gout.data();
                let mut gin = vec![T::zero(); h * w * c];
                let mut src = 0usize;
                for gy in 0..gh {
                    for gx in 0..gw {
                        for py in 0..p {
                            let row = ((gy * p + py) * w + gx * p) * c;
                            gin[row..row + p * c].copy_from_slice(&gd[src..src + p * c]);
                            src += p * c;
                        }
                    }
                }
                send(
                    0,
                    Tensor::new(vec![h, w, c], gin).expect("patch grad shape"),
                    grads,
                );
            }
            Op::SumAll => {
                send(0, Tensor::filled(input(0).shape(), gout.item()), grads);
            }
        }
    }

    // ── shape-check helpers ──────────────────────────────────────────

    fn same_shape(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<(), NumericsError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumericsError::Invalid {
                op,
                msg: format!(
                    "shape mismatch: {:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        Ok(())
    }

    fn expect_rank(&self, op: &'static str, id: ValueId, r: usize) -> Result<(), NumericsError> {
        let shape = self.value(id).shape();
        if shape.len() != r {
            return Err(NumericsError::RankMismatch {
                op,
                expected: r,
                shape: shape.to_vec(),
            });
        }
        Ok(())
    }

    fn expect_len(
        &self,
        op: &'static str,
        id: ValueId,
        axis: &'static str,
        expected: usize,
    ) -> Result<(), NumericsError> {
        let got = self.value(id).numel();
        if got != expected || self.value(id).shape().len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op,
                axis,
                expected,
                got,
            });
        }
        Ok(())
    }
}

/// Sum of each column of a 2-d gradient (bias adjoint of [`Graph::linear`]).
fn column_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let d = g.shape()[1];
    let mut out = vec![T::zero(); d];
    for row in g.data().chunks_exact(d) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(vec![d], out).expect("column sums shape")
}

/// Per-channel sum over spatial positions of an `[h,w,c]` gradient.
fn channel_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let c = g.shape()[2];
    let mut out = vec![T::zero(); c];
    for row in g.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(vec![c], out).expect("channel sums shape")
}

fn batch_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    gout: &Tensor<T>,
    eps: T,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let m = T::from_f64((h * w) as f64);
    let (mean, var) = kernels::channel_moments(x);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let xd = x.data();
    let gd = gout.data();
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (row_x, row_g) in xd.chunks_exact(c).zip(gd.chunks_exact(c)) {
        for ci in 0..c {
            let xh = (row_x[ci] - mean[ci]) * inv_std[ci];
            sum_g[ci] += row_g[ci];
            sum_gx[ci] += row_g[ci] * xh;
        }
    }

    let gm = gamma.data();
    let mut gx = Vec::with_capacity(x.numel());
    for (row_x, row_g) in xd.chunks_exact(c).zip(gd.chunks_exact(c)) {
        for ci in 0..c {
            let xh = (row_x[ci] - mean[ci]) * inv_std[ci];
            let t = row_g[ci] - sum_g[ci] / m - xh * sum_gx[ci] / m;
            gx.push(gm[ci] * inv_std[ci] * t);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("bn grad shape"),
        Tensor::new(vec![c], sum_gx).expect("bn gamma grad"),
        Tensor::new(vec![c], sum_g).expect("bn beta grad"),
    )
}

fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    gout: &Tensor<T>,
    eps: T,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let dt = T::from_f64(d as f64);
    let gm = gamma.data();
    let mut gx = Vec::with_capacity(n * d);
    let mut ggamma = vec![T::zero(); d];
    let mut gbeta = vec![T::zero(); d];
    for (row_x, row_g) in x.data().chunks_exact(d).zip(gout.data().chunks_exact(d)) {
        let mean = row_x.iter().copied().sum::<T>() / dt;
        let var = row_x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
        let inv_std = T::one() / (var + eps).sqrt();
        let mut sum_h = T::zero();
        let mut sum_hx = T::zero();
        for ci in 0..d {
            let xh = (row_x[ci] - mean) * inv_std;
            let hg = row_g[ci] * gm[ci];
            ggamma[ci] += row_g[ci] * xh;
            gbeta[ci] += row_g[ci];
            sum_h += hg;
            sum_hx += hg * xh;
        }
        for ci in 0..d {
            let xh = (row_x[ci] - mean) * inv_std;
            let hg = row_g[ci] * gm[ci];
            gx.push(inv_std * (hg - sum_h / dt - xh * sum_hx / dt));
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("ln grad shape"),
        Tensor::new(vec![d], ggamma).expect("ln gamma grad"),
        Tensor::new(vec![d], gbeta).expect("ln beta grad"),
    )
}

fn l2_normalize_rows_backward<T: Scalar>(x: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let d = x.shape()[1];
    let guard = T::from_f64(LOG_GUARD);
    let mut gx = Vec::with_capacity(x.numel());
    for (row_x, row_g) in x.data().chunks_exact(d).zip(gout.data().chunks_exact(d)) {
        let norm = row_x.iter().map(|&v| v * v).sum::<T>().sqrt();
        let s = norm + guard;
        let dot = row_x
            .iter()
            .zip(row_g)
            .map(|(&xv, &gv)| xv * gv)
            .sum::<T>();
        let coef = dot / (norm.max(guard) * s * s);
        for (&xv, &gv) in row_x.iter().zip(row_g) {
            gx.push(gv / s - xv * coef);
        }
    }
    Tensor::new(x.shape().to_vec(), gx).expect("l2 grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        // small deterministic LCG so unit tests need no RNG dependency
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        Tensor::from_fn(shape, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(rand_tensor(&[3, 4], 7));
        let s = g.sum_all(x);
        let grads = g.backward(s).unwrap();
        for &v in grads.get(x).unwrap().data() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn backward_of_half_square_is_identity() {
        let mut g = Graph::<f64>::new();
        let t = rand_tensor(&[5, 2], 3);
        let x = g.leaf(t.clone());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        let loss = g.scale(s, 0.5);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().max_abs_diff(&t) < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(rand_tensor(&[2, 2], 1));
        let y = g.add(x, x).unwrap();
        let err = g.backward(y).unwrap_err();
        assert!(matches!(err, NumericsError::NonScalarLoss { numel: 4 }));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(rand_tensor(&[2, 2], 1));
        let unused = g.leaf(rand_tensor(&[3], 2));
        let s = g.sum_all(x);
        let grads = g.backward(s).unwrap();
        let gu = grads.get(unused).unwrap();
        assert_eq!(gu.shape(), &[3]);
        assert!(gu.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g = Graph::<f64>::new();
        let img = rand_tensor(&[4, 5, 1], 11);
        let x = g.leaf(img.clone());
        let k = g.constant(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b).unwrap();
        assert!(g.value(y).max_abs_diff(&img) < 1e-15);
    }

    #[test]
    fn conv2d_constant_field_interior() {
        // constant input c with an all-ones 3x3 kernel sums 9 copies away
        // from the border
        let mut g = Graph::<f64>::new();
        let c = 0.37;
        let x = g.constant(Tensor::filled(&[5, 5, 1], c));
        let k = g.constant(Tensor::filled(&[3, 3, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b).unwrap();
        let v = g.value(y);
        assert!((v.at3(2, 2, 0) - 9.0 * c).abs() < 1e-12);
        assert!((v.at3(0, 0, 0) - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        let input = rand_tensor(&[5, 5, 2], 21);
        let kernel = rand_tensor(&[3, 3, 2, 4], 22);
        let bias = rand_tensor(&[4], 23);
        let mut g = Graph::<f64>::new();
        let (x, k, b) = (
            g.constant(input.clone()),
            g.constant(kernel.clone()),
            g.constant(bias.clone()),
        );
        let y = g.conv2d(x, k, b).unwrap();

        // direct sextuple loop over output position, kernel window, channels
        let mut expect = Tensor::<f64>::zeros(&[5, 5, 4]);
        for oy in 0..5usize {
            for ox in 0..5usize {
                for co in 0..4usize {
                    let mut acc = bias.data()[co];
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            for ci in 0..2usize {
                                let iy = oy as isize + ky as isize - 1;
                                let ix = ox as isize + kx as isize - 1;
                                if iy < 0 || iy >= 5 || ix < 0 || ix >= 5 {
                                    continue;
                                }
                                acc += input.at3(iy as usize, ix as usize, ci)
                                    * kernel.data()[((ky * 3 + kx) * 2 + ci) * 4 + co];
                            }
                        }
                    }
                    expect.data_mut()[(oy * 5 + ox) * 4 + co] = acc;
                }
            }
        }
        assert!(g.value(y).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn depthwise_1x1_is_per_channel_affine() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 1, 2], vec![2.0, 3.0]).unwrap());
        let b = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let y = g.depthwise_conv2d(x, k, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 3.0]);
    }

    #[test]
    fn depthwise_matches_loop_oracle() {
        let input = rand_tensor(&[6, 4, 3], 31);
        let kernel = rand_tensor(&[1, 1, 3], 32);
        let bias = rand_tensor(&[3], 33);
        let mut g = Graph::<f64>::new();
        let (x, k, b) = (
            g.constant(input.clone()),
            g.constant(kernel.clone()),
            g.constant(bias.clone()),
        );
        let y = g.depthwise_conv2d(x, k, b).unwrap();
        for yy in 0..6 {
            for xx in 0..4 {
                for c in 0..3 {
                    let expect = input.at3(yy, xx, c) * kernel.data()[c] + bias.data()[c];
                    assert!((g.value(y).at3(yy, xx, c) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn depthwise_rejects_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 2, 3]));
        let k = g.constant(Tensor::zeros(&[1, 1, 2]));
        let b = g.constant(Tensor::zeros(&[3]));
        let err = g.depthwise_conv2d(x, k, b).unwrap_err();
        assert!(err.to_string().contains("channels"));
    }

    #[test]
    fn batch_norm_standardizes_channels() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(rand_tensor(&[6, 7, 3], 41));
        let gamma = g.constant(Tensor::filled(&[3], 1.0));
        let beta = g.constant(Tensor::zeros(&[3]));
        let y = g.batch_norm(x, gamma, beta, 1e-5).unwrap();
        let v = g.value(y);
        for c in 0..3 {
            let vals: Vec<f64> = (0..42).map(|i| v.data()[i * 3 + c]).collect();
            let mean = vals.iter().sum::<f64>() / 42.0;
            let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 42.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3); // eps shrinks variance slightly
        }
    }

    #[test]
    fn batch_norm_constant_channel_gives_beta() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::filled(&[4, 4, 2], 0.7));
        let gamma = g.constant(Tensor::filled(&[2], 1.3));
        let beta = g.constant(Tensor::new(vec![2], vec![0.25, -0.5]).unwrap());
        let y = g.batch_norm(x, gamma, beta, 1e-5).unwrap();
        for row in g.value(y).data().chunks_exact(2) {
            assert!((row[0] - 0.25).abs() < 1e-12);
            assert!((row[1] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_unit_row_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![2, 2], vec![1.0, -1.0, 0.3, 0.3]).unwrap());
        let gamma = g.constant(Tensor::filled(&[2], 1.0));
        let beta = g.constant(Tensor::new(vec![2], vec![0.5, 0.5]).unwrap());
        let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
        let v = g.value(y);
        // row [1,-1] is already zero-mean unit-variance
        assert!((v.at2(0, 0) - 1.5).abs() < 1e-6);
        assert!((v.at2(0, 1) + 0.5).abs() < 1e-6);
        // constant row collapses to beta
        assert!((v.at2(1, 0) - 0.5).abs() < 1e-12);
        assert!((v.at2(1, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_hand_case() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 2.0]).unwrap());
        let b = g.constant(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn linear_matches_loop_oracle() {
        let x = rand_tensor(&[4, 3], 51);
        let w = rand_tensor(&[3, 5], 52);
        let b = rand_tensor(&[5], 53);
        let mut g = Graph::<f64>::new();
        let (xi, wi, bi) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.linear(xi, wi, bi).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut acc = b.data()[j];
                for p in 0..3 {
                    acc += x.at2(i, p) * w.at2(p, j);
                }
                assert!((g.value(y).at2(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1000.0, 0.0]).unwrap());
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y);
        assert_eq!(v.at2(0, 0), 0.5);
        assert_eq!(v.at2(0, 1), 0.5);
        assert_eq!(v.at2(1, 0), 1.0);
        assert_eq!(v.at2(1, 1), 0.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(rand_tensor(&[7, 5], 61));
        let y = g.softmax(x, 1).unwrap();
        for row in g.value(y).data().chunks_exact(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_one_hot_ties_pick_lowest_index() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2, 3], vec![0.1, 0.7, 0.2, 0.5, 0.5, 0.0]).unwrap());
        let y = g.hard_one_hot(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(!g.requires_grad(y));
        assert_eq!(g.barrier_ops_on_path(y), vec!["hard_one_hot"]);
    }

    #[test]
    fn concat_and_split_roundtrip_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(rand_tensor(&[3, 2], 71));
        let b = g.leaf(rand_tensor(&[3, 4], 72));
        let cat = g.concat_last(a, b).unwrap();
        assert_eq!(g.value(cat).shape(), &[3, 6]);
        let s = g.sum_all(cat);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(grads.get(b).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn forward_ops_are_deterministic() {
        let run = || {
            let mut g = Graph::<f64>::new();
            let x = g.constant(rand_tensor(&[6, 6, 2], 81));
            let k = g.constant(rand_tensor(&[3, 3, 2, 3], 82));
            let b = g.constant(rand_tensor(&[3], 83));
            let y = g.conv2d(x, k, b).unwrap();
            let z = g.resize_bilinear(y, 11, 9).unwrap();
            g.value(z).data().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
