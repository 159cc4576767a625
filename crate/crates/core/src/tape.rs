//! Tape-based reverse-mode autodiff.
//!
//! A [`Tape`] is rebuilt for every forward pass. Operations append nodes in
//! topological order; [`Tape::backward`] walks the tape once in reverse and
//! accumulates one gradient per `requires_grad` leaf. Interior gradients are
//! dropped as soon as they have been propagated.

use std::collections::BTreeMap;

use crate::conv::{self, RoiRect};
use crate::linalg;
use crate::params::ParamSet;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    ScalarAdd(NodeId),
    MatMul(NodeId, NodeId),
    Transpose2d(NodeId),
    Reshape(NodeId),
    Softmax { input: NodeId, axis: usize },
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Ln(NodeId),
    Abs(NodeId),
    Clamp(NodeId, f64, f64),
    SumAll(NodeId),
    MeanAll(NodeId),
    Conv2d { input: NodeId, kernel: NodeId, bias: Option<NodeId>, stride: usize, pad: usize },
    InstanceNorm { input: NodeId, eps: f64 },
    Upsample2x(NodeId),
    AddRowBias { input: NodeId, bias: NodeId },
    GatherRows { input: NodeId, rows: Vec<usize> },
    GatherSpans { input: NodeId, locs: Vec<(usize, usize)>, len: usize },
    RoiAlign { features: NodeId, rois: Vec<RoiRect>, out_h: usize, out_w: usize },
    Scale { input: NodeId, gain: NodeId },
    BceWithLogits { logits: NodeId, targets: Vec<f64> },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize> },
    SmoothL1Sum { pred: NodeId, target: Vec<f64>, beta: f64 },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
    /// True when a gradient must flow through this node.
    needs: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-leaf gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].data.clone())
            .expect("node shape/data consistent")
    }

    pub fn check_finite(&self, id: NodeId, context: &str) -> Result<(), TensorError> {
        match self.nodes[id.0].data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(index) => Err(TensorError::NonFinite { context: context.to_string(), index }),
        }
    }

    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> NodeId {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf, requires_grad, requires_grad)
    }

    pub fn leaf_owned(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<NodeId, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Construction(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(self.push(data, shape, Op::Leaf, requires_grad, requires_grad))
    }

    fn push(
        &mut self,
        data: Vec<f64>,
        shape: Vec<usize>,
        op: Op,
        requires_grad: bool,
        needs: bool,
    ) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { data, shape, op, requires_grad, needs });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> =
            self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data).map(|(x, y)| x + y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, shape, Op::Add(a, b), false, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f64> =
            self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data).map(|(x, y)| x - y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, shape, Op::Sub(a, b), false, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f64> =
            self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data).map(|(x, y)| x * y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, shape, Op::Mul(a, b), false, needs))
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(data, shape, Op::ScalarMul(a, c), false, needs)
    }

    pub fn scalar_add(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x + c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(data, shape, Op::ScalarAdd(a), false, needs)
    }

    /// c - a, elementwise.
    pub fn rsub_scalar(&mut self, c: f64, a: NodeId) -> NodeId {
        let neg = self.scalar_mul(a, -1.0);
        self.scalar_add(neg, c)
    }

    // ── linear algebra and shape ────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 {
            return Err(TensorError::Shape(format!("matmul needs rank-2, got {sa:?} x {sb:?}")));
        }
        if sa[1] != sb[0] {
            return Err(TensorError::Shape(format!("matmul inner dims: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = linalg::matmul(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(data, vec![m, n], Op::MatMul(a, b), false, needs))
    }

    pub fn transpose2d(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let s = &self.nodes[a.0].shape;
        if s.len() != 2 {
            return Err(TensorError::Shape(format!("transpose needs rank-2, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let data = linalg::transpose(&self.nodes[a.0].data, r, c);
        let needs = self.needs(a);
        Ok(self.push(data, vec![c, r], Op::Transpose2d(a), false, needs))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].data.len() {
            return Err(TensorError::Shape(format!(
                "reshape {:?} -> {shape:?}",
                self.nodes[a.0].shape
            )));
        }
        let data = self.nodes[a.0].data.clone();
        let needs = self.needs(a);
        Ok(self.push(data, shape, Op::Reshape(a), false, needs))
    }

    // ── nonlinearities ──────────────────────────────────────────────

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        // branch form keeps clamped outputs at +0.0 for bitwise contracts;
        // NaN must propagate so the finiteness check can surface it
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| if x > 0.0 || x.is_nan() { x } else { 0.0 })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(data, shape, Op::Relu(a), false, needs)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let data: Vec<f64> =
            self.nodes[a.0].data.iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(data, shape, Op::LeakyRelu(a, slope), false, needs)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(data, shape, Op::Sigmoid(a), false, needs)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(data, shape, Op::Tanh(a), false, needs)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.ln()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(data, shape, Op::Ln(a), false, needs)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.abs()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(data, shape, Op::Abs(a), false, needs)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.clamp(lo, hi)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(data, shape, Op::Clamp(a, lo, hi), false, needs)
    }

    /// Softmax along `axis` with max-subtraction.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(TensorError::Shape(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let src = &self.nodes[a.0].data;
        let axis_len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..axis_len {
                    max = max.max(src[base + k * inner]);
                }
                let mut sum = 0.0;
                for k in 0..axis_len {
                    let e = (src[base + k * inner] - max).exp();
                    data[base + k * inner] = e;
                    sum += e;
                }
                for k in 0..axis_len {
                    data[base + k * inner] /= sum;
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(data, shape, Op::Softmax { input: a, axis }, false, needs))
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let needs = self.needs(a);
        self.push(vec![s], vec![1], Op::SumAll(a), false, needs)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let needs = self.needs(a);
        self.push(vec![s / n], vec![1], Op::MeanAll(a), false, needs)
    }

    // ── structured ops ──────────────────────────────────────────────

    /// Cross-correlation of NCHW input with OIHW kernel, optional per-channel bias.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        let si = self.nodes[input.0].shape.clone();
        let sk = self.nodes[kernel.0].shape.clone();
        if si.len() != 4 || sk.len() != 4 {
            return Err(TensorError::Shape(format!("conv2d needs NCHW x OIHW, got {si:?} {sk:?}")));
        }
        if stride == 0 {
            return Err(TensorError::Contract("conv2d stride must be positive".into()));
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (o, i, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if i != c {
            return Err(TensorError::Shape(format!(
                "conv2d channels: input has {c}, kernel expects {i}"
            )));
        }
        if let Some(b) = bias {
            if self.nodes[b.0].shape != [o] {
                return Err(TensorError::Shape(format!(
                    "conv2d bias shape {:?}, expected [{o}]",
                    self.nodes[b.0].shape
                )));
            }
        }
        let oh = conv::conv_out_dim(h, kh, stride, pad)
            .ok_or_else(|| TensorError::Shape(format!("kernel {kh} exceeds padded input {h}")))?;
        let ow = conv::conv_out_dim(w, kw, stride, pad)
            .ok_or_else(|| TensorError::Shape(format!("kernel {kw} exceeds padded input {w}")))?;
        let data = conv::conv2d_forward(
            &self.nodes[input.0].data,
            n,
            c,
            h,
            w,
            &self.nodes[kernel.0].data,
            o,
            kh,
            kw,
            bias.map(|b| self.nodes[b.0].data.as_slice()),
            stride,
            pad,
            oh,
            ow,
        );
        let needs =
            self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            data,
            vec![n, o, oh, ow],
            Op::Conv2d { input, kernel, bias, stride, pad },
            false,
            needs,
        ))
    }

    /// Per-(sample, channel) normalization over the spatial plane, no affine.
    pub fn instance_norm(&mut self, input: NodeId, eps: f64) -> Result<NodeId, TensorError> {
        let s = self.nodes[input.0].shape.clone();
        if s.len() != 4 {
            return Err(TensorError::Shape(format!("instance_norm needs NCHW, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let src = &self.nodes[input.0].data;
        let mut data = vec![0.0; src.len()];
        for p in 0..s[0] * s[1] {
            let plane = &src[p * hw..(p + 1) * hw];
            let mean = plane.iter().sum::<f64>() / hw as f64;
            let var = plane.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / hw as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for (o, &x) in data[p * hw..(p + 1) * hw].iter_mut().zip(plane) {
                *o = (x - mean) * inv_std;
            }
        }
        let needs = self.needs(input);
        Ok(self.push(data, s, Op::InstanceNorm { input, eps }, false, needs))
    }

    /// Nearest-neighbor 2x spatial upsampling of an NCHW tensor.
    pub fn upsample2x(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let s = self.nodes[input.0].shape.clone();
        if s.len() != 4 {
            return Err(TensorError::Shape(format!("upsample2x needs NCHW, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let src = &self.nodes[input.0].data;
        let mut data = vec![0.0; n * c * 4 * h * w];
        let (oh, ow) = (2 * h, 2 * w);
        for p in 0..n * c {
            let sp = &src[p * h * w..(p + 1) * h * w];
            let dp = &mut data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    dp[y * ow + x] = sp[(y / 2) * w + x / 2];
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(data, vec![n, c, oh, ow], Op::Upsample2x(input), false, needs))
    }

    /// (N,D) + (D) broadcast add.
    pub fn add_row_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let si = self.nodes[input.0].shape.clone();
        let sb = self.nodes[bias.0].shape.clone();
        if si.len() != 2 || sb.len() != 1 || sb[0] != si[1] {
            return Err(TensorError::Shape(format!("add_row_bias: {si:?} + {sb:?}")));
        }
        let d = si[1];
        let data: Vec<f64> = self.nodes[input.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + self.nodes[bias.0].data[i % d])
            .collect();
        let needs = self.needs(input) || self.needs(bias);
        Ok(self.push(data, si, Op::AddRowBias { input, bias }, false, needs))
    }

    /// Select rows of an (N,D) matrix; duplicates allowed.
    pub fn gather_rows(&mut self, input: NodeId, rows: &[usize]) -> Result<NodeId, TensorError> {
        let s = self.nodes[input.0].shape.clone();
        if s.len() != 2 {
            return Err(TensorError::Shape(format!("gather_rows needs rank-2, got {s:?}")));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= s[0]) {
            return Err(TensorError::Contract(format!("gather_rows index {bad} >= {}", s[0])));
        }
        let d = s[1];
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(&self.nodes[input.0].data[r * d..(r + 1) * d]);
        }
        let needs = self.needs(input);
        Ok(self.push(
            data,
            vec![rows.len(), d],
            Op::GatherRows { input, rows: rows.to_vec() },
            false,
            needs,
        ))
    }

    /// Select `len`-wide spans (row, col_start) of an (N,D) matrix.
    pub fn gather_spans(
        &mut self,
        input: NodeId,
        locs: &[(usize, usize)],
        len: usize,
    ) -> Result<NodeId, TensorError> {
        let s = self.nodes[input.0].shape.clone();
        if s.len() != 2 {
            return Err(TensorError::Shape(format!("gather_spans needs rank-2, got {s:?}")));
        }
        for &(r, c) in locs {
            if r >= s[0] || c + len > s[1] {
                return Err(TensorError::Contract(format!(
                    "gather_spans ({r},{c})+{len} out of {s:?}"
                )));
            }
        }
        let d = s[1];
        let mut data = Vec::with_capacity(locs.len() * len);
        for &(r, c) in locs {
            data.extend_from_slice(&self.nodes[input.0].data[r * d + c..r * d + c + len]);
        }
        let needs = self.needs(input);
        Ok(self.push(
            data,
            vec![locs.len(), len],
            Op::GatherSpans { input, locs: locs.to_vec(), len },
            false,
            needs,
        ))
    }

    /// RoI-Align over (1,C,H,W) or (C,H,W) features in feature coordinates.
    pub fn roi_align(
        &mut self,
        features: NodeId,
        rois: &[RoiRect],
        out_h: usize,
        out_w: usize,
    ) -> Result<NodeId, TensorError> {
        let s = self.nodes[features.0].shape.clone();
        let (c, h, w) = match s.as_slice() {
            [1, c, h, w] => (*c, *h, *w),
            [c, h, w] => (*c, *h, *w),
            _ => return Err(TensorError::Shape(format!("roi_align features shape {s:?}"))),
        };
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::Contract("roi_align output size must be positive".into()));
        }
        for (i, r) in rois.iter().enumerate() {
            if !(r.x1 > r.x0 && r.y1 > r.y0) {
                return Err(TensorError::Contract(format!(
                    "roi_align: zero-area RoI at index {i}: {r:?}"
                )));
            }
        }
        if rois.is_empty() {
            return Err(TensorError::Contract("roi_align: empty RoI list".into()));
        }
        let data =
            conv::roi_align_forward(&self.nodes[features.0].data, c, h, w, rois, out_h, out_w);
        let needs = self.needs(features);
        Ok(self.push(
            data,
            vec![rois.len(), c, out_h, out_w],
            Op::RoiAlign { features, rois: rois.to_vec(), out_h, out_w },
            false,
            needs,
        ))
    }

    /// Multiply by a learnable scalar node of shape [1].
    pub fn scale(&mut self, input: NodeId, gain: NodeId) -> Result<NodeId, TensorError> {
        if self.nodes[gain.0].shape != [1] {
            return Err(TensorError::Shape(format!(
                "scale gain must be [1], got {:?}",
                self.nodes[gain.0].shape
            )));
        }
        let g = self.nodes[gain.0].data[0];
        let data: Vec<f64> = self.nodes[input.0].data.iter().map(|x| x * g).collect();
        let shape = self.nodes[input.0].shape.clone();
        let needs = self.needs(input) || self.needs(gain);
        Ok(self.push(data, shape, Op::Scale { input, gain }, false, needs))
    }

    // ── losses ──────────────────────────────────────────────────────

    /// Mean binary cross-entropy on raw logits (numerically stable).
    pub fn bce_with_logits(
        &mut self,
        logits: NodeId,
        targets: &[f64],
    ) -> Result<NodeId, TensorError> {
        if self.nodes[logits.0].data.len() != targets.len() {
            return Err(TensorError::Shape(format!(
                "bce_with_logits: {} logits vs {} targets",
                self.nodes[logits.0].data.len(),
                targets.len()
            )));
        }
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (&z, &t) in self.nodes[logits.0].data.iter().zip(targets) {
            loss += z.max(0.0) - z * t + (1.0 + (-z.abs()).exp()).ln();
        }
        let needs = self.needs(logits);
        Ok(self.push(
            vec![loss / n],
            vec![1],
            Op::BceWithLogits { logits, targets: targets.to_vec() },
            false,
            needs,
        ))
    }

    /// Mean negative log-softmax of the labelled class, logits (N,K).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId, TensorError> {
        let s = self.nodes[logits.0].shape.clone();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(TensorError::Shape(format!(
                "softmax_cross_entropy: logits {s:?} vs {} labels",
                labels.len()
            )));
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::Contract(format!("label {bad} >= {k} classes")));
        }
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &self.nodes[logits.0].data[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
            loss -= row[label] - lse;
        }
        let needs = self.needs(logits);
        Ok(self.push(
            vec![loss / labels.len() as f64],
            vec![1],
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec() },
            false,
            needs,
        ))
    }

    /// Sum of smooth-L1 terms against constant targets.
    pub fn smooth_l1_sum(
        &mut self,
        pred: NodeId,
        target: &[f64],
        beta: f64,
    ) -> Result<NodeId, TensorError> {
        if self.nodes[pred.0].data.len() != target.len() {
            return Err(TensorError::Shape(format!(
                "smooth_l1: {} preds vs {} targets",
                self.nodes[pred.0].data.len(),
                target.len()
            )));
        }
        if beta <= 0.0 {
            return Err(TensorError::Contract("smooth_l1 beta must be positive".into()));
        }
        let mut loss = 0.0;
        for (&p, &t) in self.nodes[pred.0].data.iter().zip(target) {
            let e = (p - t).abs();
            loss += if e < beta { 0.5 * e * e / beta } else { e - 0.5 * beta };
        }
        let needs = self.needs(pred);
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::SmoothL1Sum { pred, target: target.to_vec(), beta },
            false,
            needs,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Returns the gradient of every
    /// `requires_grad` leaf; leaves off the loss path get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_none() {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue; // keep leaf grads
            }
            let g = grads[i].take().expect("checked above");
            self.propagate(i, &g, &mut grads);
        }

        // every requires_grad leaf gets exactly one gradient
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.data.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, delta: &[f64]) {
        if !self.nodes[id.0].needs {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => grads[id.0] = Some(delta.to_vec()),
        }
    }

    fn acc_owned(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>) {
        if !self.nodes[id.0].needs {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&delta) {
                    *a += b;
                }
            }
            None => grads[id.0] = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => unreachable!("leaves are not propagated"),
            Op::Add(a, b) => {
                self.acc(grads, *a, g);
                self.acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g);
                if self.needs(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    self.acc_owned(grads, *b, neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da: Vec<f64> =
                        g.iter().zip(&self.nodes[b.0].data).map(|(x, y)| x * y).collect();
                    self.acc_owned(grads, *a, da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> =
                        g.iter().zip(&self.nodes[a.0].data).map(|(x, y)| x * y).collect();
                    self.acc_owned(grads, *b, db);
                }
            }
            Op::ScalarMul(a, c) => {
                if self.needs(*a) {
                    let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                    self.acc_owned(grads, *a, da);
                }
            }
            Op::ScalarAdd(a) => self.acc(grads, *a, g),
            Op::MatMul(a, b) => {
                let sa = &self.nodes[a.0].shape;
                let (m, k) = (sa[0], sa[1]);
                let n = self.nodes[b.0].shape[1];
                if self.needs(*a) {
                    // dA = g * B^T
                    let bt = linalg::transpose(&self.nodes[b.0].data, k, n);
                    let da = linalg::matmul(g, &bt, m, n, k);
                    self.acc_owned(grads, *a, da);
                }
                if self.needs(*b) {
                    // dB = A^T * g
                    let at = linalg::transpose(&self.nodes[a.0].data, m, k);
                    let db = linalg::matmul(&at, g, k, m, n);
                    self.acc_owned(grads, *b, db);
                }
            }
            Op::Transpose2d(a) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                self.acc_owned(grads, *a, linalg::transpose(g, r, c));
            }
            Op::Reshape(a) => self.acc(grads, *a, g),
            Op::Softmax { input, axis } => {
                let s = &node.data;
                let shape = &node.shape;
                let axis_len = shape[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut dg = vec![0.0; s.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let base = o * axis_len * inner + ii;
                        let mut dot = 0.0;
                        for k in 0..axis_len {
                            let f = base + k * inner;
                            dot += g[f] * s[f];
                        }
                        for k in 0..axis_len {
                            let f = base + k * inner;
                            dg[f] = s[f] * (g[f] - dot);
                        }
                    }
                }
                self.acc_owned(grads, *input, dg);
            }
            Op::Relu(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                self.acc_owned(grads, *a, da);
            }
            Op::LeakyRelu(a, slope) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { slope * gv })
                    .collect();
                self.acc_owned(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da: Vec<f64> =
                    g.iter().zip(&node.data).map(|(&gv, &s)| gv * s * (1.0 - s)).collect();
                self.acc_owned(grads, *a, da);
            }
            Op::Tanh(a) => {
                let da: Vec<f64> =
                    g.iter().zip(&node.data).map(|(&gv, &t)| gv * (1.0 - t * t)).collect();
                self.acc_owned(grads, *a, da);
            }
            Op::Ln(a) => {
                let da: Vec<f64> =
                    g.iter().zip(&self.nodes[a.0].data).map(|(&gv, &x)| gv / x).collect();
                self.acc_owned(grads, *a, da);
            }
            Op::Abs(a) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(&gv, &x)| gv * if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
                    .collect();
                self.acc_owned(grads, *a, da);
            }
            Op::Clamp(a, lo, hi) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(&gv, &x)| if x > *lo && x < *hi { gv } else { 0.0 })
                    .collect();
                self.acc_owned(grads, *a, da);
            }
            Op::SumAll(a) => {
                let da = vec![g[0]; self.nodes[a.0].data.len()];
                self.acc_owned(grads, *a, da);
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].data.len();
                let da = vec![g[0] / n as f64; n];
                self.acc_owned(grads, *a, da);
            }
            Op::Conv2d { input, kernel, bias, stride, pad } => {
                let si = &self.nodes[input.0].shape;
                let sk = &self.nodes[kernel.0].shape;
                let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
                let (o, _, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
                let (oh, ow) = (node.shape[2], node.shape[3]);
                let mut gi = vec![0.0; n * c * h * w];
                let mut gk = vec![0.0; o * c * kh * kw];
                let mut gb = bias.map(|_| vec![0.0; o]);
                conv::conv2d_backward(
                    g,
                    &self.nodes[input.0].data,
                    n,
                    c,
                    h,
                    w,
                    &self.nodes[kernel.0].data,
                    o,
                    kh,
                    kw,
                    *stride,
                    *pad,
                    oh,
                    ow,
                    &mut gi,
                    &mut gk,
                    gb.as_deref_mut(),
                );
                self.acc_owned(grads, *input, gi);
                self.acc_owned(grads, *kernel, gk);
                if let (Some(b), Some(gb)) = (bias, gb) {
                    self.acc_owned(grads, *b, gb);
                }
            }
            Op::InstanceNorm { input, eps } => {
                let s = &self.nodes[input.0].shape;
                let hw = s[2] * s[3];
                let x = &self.nodes[input.0].data;
                let y = &node.data;
                let mut dx = vec![0.0; x.len()];
                for p in 0..s[0] * s[1] {
                    let xs = &x[p * hw..(p + 1) * hw];
                    let ys = &y[p * hw..(p + 1) * hw];
                    let gs = &g[p * hw..(p + 1) * hw];
                    let mean = xs.iter().sum::<f64>() / hw as f64;
                    let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let g_mean = gs.iter().sum::<f64>() / hw as f64;
                    let gy_mean =
                        gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / hw as f64;
                    for j in 0..hw {
                        dx[p * hw + j] = inv_std * (gs[j] - g_mean - ys[j] * gy_mean);
                    }
                }
                self.acc_owned(grads, *input, dx);
            }
            Op::Upsample2x(a) => {
                let s = &self.nodes[a.0].shape;
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (2 * h, 2 * w);
                let mut da = vec![0.0; self.nodes[a.0].data.len()];
                for p in 0..s[0] * s[1] {
                    let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                    let dp = &mut da[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for x in 0..ow {
                            dp[(y / 2) * w + x / 2] += gp[y * ow + x];
                        }
                    }
                }
                self.acc_owned(grads, *a, da);
            }
            Op::AddRowBias { input, bias } => {
                self.acc(grads, *input, g);
                if self.needs(*bias) {
                    let d = self.nodes[bias.0].data.len();
                    let mut db = vec![0.0; d];
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % d] += gv;
                    }
                    self.acc_owned(grads, *bias, db);
                }
            }
            Op::GatherRows { input, rows } => {
                let d = self.nodes[input.0].shape[1];
                let mut da = vec![0.0; self.nodes[input.0].data.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..d {
                        da[r * d + j] += g[k * d + j];
                    }
                }
                self.acc_owned(grads, *input, da);
            }
            Op::GatherSpans { input, locs, len } => {
                let d = self.nodes[input.0].shape[1];
                let mut da = vec![0.0; self.nodes[input.0].data.len()];
                for (k, &(r, c)) in locs.iter().enumerate() {
                    for j in 0..*len {
                        da[r * d + c + j] += g[k * len + j];
                    }
                }
                self.acc_owned(grads, *input, da);
            }
            Op::RoiAlign { features, rois, out_h, out_w } => {
                let s = &self.nodes[features.0].shape;
                let (c, h, w) = if s.len() == 4 { (s[1], s[2], s[3]) } else { (s[0], s[1], s[2]) };
                let mut df = vec![0.0; self.nodes[features.0].data.len()];
                conv::roi_align_backward(g, c, h, w, rois, *out_h, *out_w, &mut df);
                self.acc_owned(grads, *features, df);
            }
            Op::Scale { input, gain } => {
                let gv = self.nodes[gain.0].data[0];
                if self.needs(*input) {
                    let da: Vec<f64> = g.iter().map(|x| x * gv).collect();
                    self.acc_owned(grads, *input, da);
                }
                if self.needs(*gain) {
                    let dg: f64 =
                        g.iter().zip(&self.nodes[input.0].data).map(|(a, b)| a * b).sum();
                    self.acc_owned(grads, *gain, vec![dg]);
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let n = targets.len() as f64;
                let da: Vec<f64> = self.nodes[logits.0]
                    .data
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| g[0] * (sigmoid(z) - t) / n)
                    .collect();
                self.acc_owned(grads, *logits, da);
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let k = self.nodes[logits.0].shape[1];
                let n = labels.len() as f64;
                let src = &self.nodes[logits.0].data;
                let mut da = vec![0.0; src.len()];
                for (r, &label) in labels.iter().enumerate() {
                    let row = &src[r * k..(r + 1) * k];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for j in 0..k {
                        let p = exps[j] / sum;
                        let t = if j == label { 1.0 } else { 0.0 };
                        da[r * k + j] = g[0] * (p - t) / n;
                    }
                }
                self.acc_owned(grads, *logits, da);
            }
            Op::SmoothL1Sum { pred, target, beta } => {
                let da: Vec<f64> = self.nodes[pred.0]
                    .data
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| g[0] * ((p - t) / beta).clamp(-1.0, 1.0))
                    .collect();
                self.acc_owned(grads, *pred, da);
            }
        }
    }
}

/// A tape bound to a parameter set: named parameters are interned as
/// `requires_grad` leaves on first use so gradients come back by name.
pub struct Graph<'a> {
    pub tape: Tape,
    params: &'a ParamSet,
    ids: BTreeMap<String, NodeId>,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamSet) -> Self {
        Graph { tape: Tape::new(), params, ids: BTreeMap::new() }
    }

    /// Leaf node for a named parameter (interned).
    pub fn var(&mut self, name: &str) -> Result<NodeId, TensorError> {
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| TensorError::Contract(format!("unknown parameter {name:?}")))?;
        let id = self.tape.leaf(t, true);
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }

    /// Constant input leaf (no gradient).
    pub fn input(&mut self, t: &Tensor) -> NodeId {
        self.tape.leaf(t, false)
    }

    /// Gradients keyed by parameter name for every interned parameter.
    pub fn backward(&self, loss: NodeId) -> Result<BTreeMap<String, Tensor>, TensorError> {
        let grads = self.tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, &id) in &self.ids {
            let shape = self.tape.shape(id).to_vec();
            let data = grads
                .get(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; self.tape.data(id).len()]);
            out.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(out)
    }
}
