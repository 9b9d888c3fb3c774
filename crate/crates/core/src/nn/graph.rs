//! Reverse-mode tape. Nodes are appended in evaluation order and may only
//! refer to earlier nodes, so the recorded graph is acyclic by construction.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::conv::{self, ConvGeom};
use crate::nn::scalar::matmul;
use crate::nn::tensor::split_axis;
use crate::nn::{ParamId, ParamStore, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this module.
pub trait CustomOp<F: Scalar> {
    fn name(&self) -> &'static str;
    /// Gradients with respect to each input, given the output gradient.
    fn backward(&self, inputs: &[&Tensor<F>], output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Tensor<F>>;
    /// Which side of each non-differentiable point the inputs sit on.
    fn branches(&self, _inputs: &[&Tensor<F>]) -> Vec<bool> {
        Vec::new()
    }
}

/// Where batch normalization takes its statistics from.
pub enum NormStats<'a, F> {
    /// Per-channel statistics of the current batch (training).
    Batch,
    /// Frozen running statistics (evaluation).
    Running { mean: &'a [F], var: &'a [F] },
}

/// Per-channel batch moments produced by a training-phase normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments<F> {
    pub mean: Vec<F>,
    /// Unbiased variance, used for running-statistics updates.
    pub var: Vec<F>,
}

enum Op<F: Scalar> {
    Leaf,
    Param,
    Conv1d { x: Var, w: Var, geom: ConvGeom },
    ConvTranspose1d { x: Var, w: Var, geom: ConvGeom },
    Norm { x: Var, gamma: Option<Var>, beta: Option<Var>, axis: usize, xhat: Vec<F>, inv_std: Vec<F>, batch: bool },
    PRelu { x: Var, slope: Var, axis: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Transpose12 { x: Var },
    Reshape { x: Var },
    GatherWindows { x: Var, starts: Vec<usize>, span: usize },
    ConcatCols { a: Var, b: Var },
    MeanLast { x: Var },
    Sigmoid { x: Var },
    L1 { pred: Var, target: Vec<F> },
    Mse { pred: Var, target: Vec<F> },
    Bce { pos: Var, neg: Var, eps: F },
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<F> },
    WeightedSum { x: Var, weights: Vec<F> },
    Mean { xs: Vec<Var> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<F>> },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, Var>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new() }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Brings a stored tensor onto the tape. Repeated calls return the same node.
    /// Buffers and frozen tensors enter as constants.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.param_with_grad(store, id, store.is_trainable(id))
    }

    /// Like [`Graph::param`] but with explicit control over gradient flow.
    pub fn param_with_grad(&mut self, store: &ParamStore<F>, id: ParamId, requires_grad: bool) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: store.get(id).clone(), op: Op::Param, requires_grad });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `x`: `batch x c_in x len`, `w`: `c_out x c_in x width`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad_left: usize, pad_right: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 {
            return Err(shape_err!("conv1d expects 3-d input and kernel, got {:?} and {:?}", xs, ws));
        }
        if xs[1] != ws[1] {
            return Err(shape_err!("conv1d kernel expects {} input channels, input has {}", ws[1], xs[1]));
        }
        let geom = ConvGeom::new(ws[2], stride, pad_left, pad_right)?;
        let (y, out_len) =
            conv::conv1d_forward(self.value(x).data(), xs[0], xs[1], xs[2], self.value(w).data(), ws[0], &geom)?;
        let value = Tensor::new([xs[0], ws[0], out_len], y)?;
        Ok(self.push(value, Op::Conv1d { x, w, geom }, &[x, w]))
    }

    /// `x`: `batch x c_in x n`, `w`: `c_in x c_out x width`; output has exactly
    /// `n * stride` samples.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 {
            return Err(shape_err!("conv_transpose1d expects 3-d input and kernel, got {:?} and {:?}", xs, ws));
        }
        if xs[1] != ws[0] {
            return Err(shape_err!("transposed kernel expects {} input channels, input has {}", ws[0], xs[1]));
        }
        let geom = ConvGeom::upsample(ws[2], stride)?;
        let y = conv::tconv1d_forward(self.value(x).data(), xs[0], xs[1], xs[2], self.value(w).data(), ws[1], &geom);
        let value = Tensor::new([xs[0], ws[1], xs[2] * stride], y)?;
        Ok(self.push(value, Op::ConvTranspose1d { x, w, geom }, &[x, w]))
    }

    /// Per-channel normalization along `axis` with optional affine parameters.
    pub fn batch_norm(
        &mut self,
        x: Var,
        axis: usize,
        gamma: Option<Var>,
        beta: Option<Var>,
        stats: NormStats<'_, F>,
        eps: F,
    ) -> Result<(Var, Option<BatchMoments<F>>)> {
        let (outer, channels, inner) = split_axis(self.shape(x), axis)?;
        let count = outer * inner;
        if count == 0 {
            return Err(invalid!("batch norm over an empty batch"));
        }
        for p in [gamma, beta].into_iter().flatten() {
            if self.value(p).numel() != channels {
                return Err(shape_err!("affine parameter has {} values for {} channels", self.value(p).numel(), channels));
            }
        }
        let xd = self.value(x).data();
        let (mean, var, moments) = match stats {
            NormStats::Batch => {
                let mut mean = vec![F::zero(); channels];
                let mut var = vec![F::zero(); channels];
                for o in 0..outer {
                    for c in 0..channels {
                        let row = &xd[(o * channels + c) * inner..(o * channels + c + 1) * inner];
                        mean[c] += row.iter().copied().sum::<F>();
                    }
                }
                let n = F::of(count as f64);
                mean.iter_mut().for_each(|m| *m /= n);
                for o in 0..outer {
                    for c in 0..channels {
                        let row = &xd[(o * channels + c) * inner..(o * channels + c + 1) * inner];
                        var[c] += row.iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum::<F>();
                    }
                }
                let unbiased = if count > 1 { F::of((count - 1) as f64) } else { F::one() };
                let moments = BatchMoments { mean: mean.clone(), var: var.iter().map(|&v| v / unbiased).collect() };
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var, Some(moments))
            }
            NormStats::Running { mean, var } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(shape_err!("running statistics do not match {} channels", channels));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let g = gamma.map(|v| self.value(v).data().to_vec());
        let b = beta.map(|v| self.value(v).data().to_vec());
        let mut xhat = vec![F::zero(); xd.len()];
        let mut y = vec![F::zero(); xd.len()];
        for o in 0..outer {
            for c in 0..channels {
                let base = (o * channels + c) * inner;
                let scale = g.as_ref().map_or(F::one(), |g| g[c]);
                let shift = b.as_ref().map_or(F::zero(), |b| b[c]);
                for i in base..base + inner {
                    let h = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    y[i] = h * scale + shift;
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), y)?;
        let batch = moments.is_some();
        let inputs: Vec<Var> = [Some(x), gamma, beta].into_iter().flatten().collect();
        let v = self.push(value, Op::Norm { x, gamma, beta, axis, xhat, inv_std, batch }, &inputs);
        Ok((v, moments))
    }

    /// Parametric ReLU with one slope per channel along `axis`.
    pub fn prelu(&mut self, x: Var, slope: Var, axis: usize) -> Result<Var> {
        let (outer, channels, inner) = split_axis(self.shape(x), axis)?;
        let a = self.value(slope).data();
        if a.len() != channels {
            return Err(shape_err!("prelu has {} slopes for {} channels", a.len(), channels));
        }
        let xd = self.value(x).data();
        let mut y = xd.to_vec();
        for o in 0..outer {
            for (c, &ac) in a.iter().enumerate() {
                let base = (o * channels + c) * inner;
                for v in &mut y[base..base + inner] {
                    if *v < F::zero() {
                        *v *= ac;
                    }
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), y)?;
        Ok(self.push(value, Op::PRelu { x, slope, axis }, &[x, slope]))
    }

    /// `x`: `rows x d_in`, `w`: `d_out x d_in`, `b`: `d_out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err!("linear: input {:?} incompatible with weights {:?}", xs, ws));
        }
        let (rows, d_in, d_out) = (xs[0], xs[1], ws[0]);
        let mut y = vec![F::zero(); rows * d_out];
        if let Some(b) = b {
            let bd = self.value(b).data();
            if bd.len() != d_out {
                return Err(shape_err!("linear: bias has {} values for {} outputs", bd.len(), d_out));
            }
            for r in 0..rows {
                y[r * d_out..(r + 1) * d_out].copy_from_slice(bd);
            }
        }
        matmul(rows, d_in, d_out, self.value(x).data(), false, self.value(w).data(), true, &mut y, b.is_some());
        let value = Tensor::new([rows, d_out], y)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    /// `a x b x c` to `a x c x b`.
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(shape_err!("transpose12 expects a 3-d tensor, got {:?}", s));
        }
        let y = transpose12(self.value(x).data(), s[0], s[1], s[2]);
        let value = Tensor::new([s[0], s[2], s[1]], y)?;
        Ok(self.push(value, Op::Transpose12 { x }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Rows `starts[i] .. starts[i] + span` of the 2-d `x`, flattened into row `i`.
    pub fn gather_windows(&mut self, x: Var, starts: &[usize], span: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || span == 0 {
            return Err(shape_err!("gather_windows expects a 2-d tensor and span >= 1, got {:?}", s));
        }
        let (rows, d) = (s[0], s[1]);
        let xd = self.value(x).data();
        let mut y = Vec::with_capacity(starts.len() * span * d);
        for &st in starts {
            if st + span > rows {
                return Err(shape_err!("window {}..{} exceeds {} rows", st, st + span, rows));
            }
            y.extend_from_slice(&xd[st * d..(st + span) * d]);
        }
        let value = Tensor::new([starts.len(), span * d], y)?;
        Ok(self.push(value, Op::GatherWindows { x, starts: starts.to_vec(), span }, &[x]))
    }

    /// Column-wise concatenation of two 2-d tensors with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(shape_err!("concat_cols: incompatible shapes {:?} and {:?}", sa, sb));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut y = Vec::with_capacity(ad.len() + bd.len());
        for r in 0..sa[0] {
            y.extend_from_slice(&ad[r * sa[1]..(r + 1) * sa[1]]);
            y.extend_from_slice(&bd[r * sb[1]..(r + 1) * sb[1]]);
        }
        let value = Tensor::new([sa[0], sa[1] + sb[1]], y)?;
        Ok(self.push(value, Op::ConcatCols { a, b }, &[a, b]))
    }

    /// Mean over the last axis.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let last = *s.last().ok_or_else(|| shape_err!("mean_last on a scalar"))?;
        if last == 0 {
            return Err(shape_err!("mean_last over an empty axis"));
        }
        let n = F::of(last as f64);
        let y: Vec<F> = self.value(x).data().chunks(last).map(|c| c.iter().copied().sum::<F>() / n).collect();
        let value = Tensor::new(s[..s.len() - 1].to_vec(), y)?;
        Ok(self.push(value, Op::MeanLast { x }, &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid { x }, &[x])
    }

    /// Mean absolute error.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<F>) -> Result<Var> {
        let p = self.value(pred);
        check_same(p, target, "l1_loss")?;
        let n = F::of(p.numel() as f64);
        let loss = p.data().iter().zip(target.data()).map(|(&a, &b)| (a - b).abs()).sum::<F>() / n;
        Ok(self.push(Tensor::scalar(loss), Op::L1 { pred, target: target.data().to_vec() }, &[pred]))
    }

    /// Mean squared error.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<F>) -> Result<Var> {
        let p = self.value(pred);
        check_same(p, target, "mse_loss")?;
        let n = F::of(p.numel() as f64);
        let loss = p.data().iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)).sum::<F>() / n;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target: target.data().to_vec() }, &[pred]))
    }

    /// `-(mean(log p_pos) + mean(log(1 - p_neg)))`, probabilities clamped to
    /// `[eps, 1 - eps]`.
    pub fn bce_loss(&mut self, pos: Var, neg: Var, eps: F) -> Result<Var> {
        let (p, q) = (self.value(pos), self.value(neg));
        if p.numel() == 0 || q.numel() == 0 {
            return Err(invalid!("bce_loss needs at least one positive and one negative"));
        }
        for &v in p.data().iter().chain(q.data()) {
            if !(v >= F::zero() && v <= F::one()) {
                return Err(invalid!("probability {} outside [0, 1]", v));
            }
        }
        let hi = F::one() - eps;
        let lp = p.data().iter().map(|&v| v.max(eps).min(hi).ln()).sum::<F>() / F::of(p.numel() as f64);
        let lq = q.data().iter().map(|&v| (F::one() - v.max(eps).min(hi)).ln()).sum::<F>() / F::of(q.numel() as f64);
        Ok(self.push(Tensor::scalar(-(lp + lq)), Op::Bce { pos, neg, eps }, &[pos, neg]))
    }

    /// Mean cross-entropy of row-wise softmax over `logits` (`rows x classes`).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(shape_err!("softmax_cross_entropy: logits {:?} vs {} labels", s, labels.len()));
        }
        let (rows, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(invalid!("label {} >= {} classes", bad, k));
        }
        let probs = softmax_rows(self.value(logits).data(), k);
        let loss = labels.iter().enumerate().map(|(r, &l)| -(probs[r * k + l].max(F::min_positive_value())).ln()).sum::<F>()
            / F::of(rows as f64);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, labels: labels.to_vec(), probs }, &[logits]))
    }

    /// `sum_i weights[i] * x[i]`.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<F>) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() != weights.numel() {
            return Err(shape_err!("weighted_sum: {} values vs {} weights", xv.numel(), weights.numel()));
        }
        let v = xv.dot(weights);
        Ok(self.push(Tensor::scalar(v), Op::WeightedSum { x, weights: weights.data().to_vec() }, &[x]))
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(invalid!("mean of an empty set"));
        }
        let mut acc = F::zero();
        for &x in xs {
            let v = self.value(x);
            if v.numel() != 1 {
                return Err(shape_err!("mean expects scalars, got shape {:?}", v.shape()));
            }
            acc += v.item();
        }
        let value = Tensor::scalar(acc / F::of(xs.len() as f64));
        Ok(self.push(value, Op::Mean { xs: xs.to_vec() }, xs))
    }

    /// Records an externally defined operation whose output was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<F>, op: Box<dyn CustomOp<F>>) -> Var {
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op }, inputs)
    }

    /// Hash of the branch taken at every kink on the tape: PReLU input
    /// signs, L1 residual signs, active probability clamps, and whatever
    /// custom ops report. Two evaluations with equal signatures lie on the
    /// same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::PRelu { x, .. } => self.value(*x).data().iter().for_each(|&v| (v >= F::zero()).hash(&mut h)),
                Op::L1 { pred, target } => {
                    self.value(*pred).data().iter().zip(target).for_each(|(&a, &b)| (a >= b).hash(&mut h))
                }
                Op::Bce { pos, neg, eps } => {
                    let hi = F::one() - *eps;
                    for &v in self.value(*pos).data().iter().chain(self.value(*neg).data()) {
                        (v < *eps, v > hi).hash(&mut h);
                    }
                }
                Op::Custom { inputs, op } => {
                    let vals: Vec<&Tensor<F>> = inputs.iter().map(|&v| self.value(v)).collect();
                    op.branches(&vals).hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got shape {:?}", lv.shape()));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite(format!("loss is {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), F::one()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Leaf | Op::Param);
            if is_leaf {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        let mut params = HashMap::new();
        for (&id, &v) in &self.params {
            params.insert(id, v);
        }
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv1d { x, w, geom } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let out_len = node.value.shape()[2];
                let mut dx = self.needs(*x).then(|| vec![F::zero(); self.value(*x).numel()]);
                let mut dw = self.needs(*w).then(|| vec![F::zero(); self.value(*w).numel()]);
                conv::conv1d_backward(
                    self.value(*x).data(),
                    xs[0],
                    xs[1],
                    xs[2],
                    self.value(*w).data(),
                    ws[0],
                    geom,
                    out_len,
                    gd,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                );
                self.acc_vec(grads, *x, dx);
                self.acc_vec(grads, *w, dw);
            }
            Op::ConvTranspose1d { x, w, geom } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let mut dx = self.needs(*x).then(|| vec![F::zero(); self.value(*x).numel()]);
                let mut dw = self.needs(*w).then(|| vec![F::zero(); self.value(*w).numel()]);
                conv::tconv1d_backward(
                    self.value(*x).data(),
                    xs[0],
                    xs[1],
                    xs[2],
                    self.value(*w).data(),
                    ws[1],
                    geom,
                    gd,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                );
                self.acc_vec(grads, *x, dx);
                self.acc_vec(grads, *w, dw);
            }
            Op::Norm { x, gamma, beta, axis, xhat, inv_std, batch } => {
                let (outer, channels, inner) = split_axis(node.value.shape(), *axis).expect("validated in forward");
                let gam = gamma.map(|v| self.value(v).data().to_vec());
                let mut dgamma = vec![F::zero(); channels];
                let mut dbeta = vec![F::zero(); channels];
                let mut sum_dxhat = vec![F::zero(); channels];
                let mut sum_dxhat_xhat = vec![F::zero(); channels];
                for o in 0..outer {
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        let scale = gam.as_ref().map_or(F::one(), |g| g[c]);
                        for i in base..base + inner {
                            dgamma[c] += gd[i] * xhat[i];
                            dbeta[c] += gd[i];
                            let dh = gd[i] * scale;
                            sum_dxhat[c] += dh;
                            sum_dxhat_xhat[c] += dh * xhat[i];
                        }
                    }
                }
                if self.needs(*x) {
                    let n = F::of((outer * inner) as f64);
                    let mut dx = vec![F::zero(); gd.len()];
                    for o in 0..outer {
                        for c in 0..channels {
                            let base = (o * channels + c) * inner;
                            let scale = gam.as_ref().map_or(F::one(), |g| g[c]);
                            for i in base..base + inner {
                                let dh = gd[i] * scale;
                                dx[i] = if *batch {
                                    inv_std[c] / n * (n * dh - sum_dxhat[c] - xhat[i] * sum_dxhat_xhat[c])
                                } else {
                                    dh * inv_std[c]
                                };
                            }
                        }
                    }
                    self.acc_vec(grads, *x, Some(dx));
                }
                if let Some(gv) = gamma {
                    self.acc_vec(grads, *gv, Some(dgamma));
                }
                if let Some(bv) = beta {
                    self.acc_vec(grads, *bv, Some(dbeta));
                }
            }
            Op::PRelu { x, slope, axis } => {
                let (outer, channels, inner) = split_axis(node.value.shape(), *axis).expect("validated in forward");
                let xd = self.value(*x).data();
                let a = self.value(*slope).data();
                let mut dx = vec![F::zero(); xd.len()];
                let mut da = vec![F::zero(); channels];
                for o in 0..outer {
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        for i in base..base + inner {
                            if xd[i] < F::zero() {
                                dx[i] = gd[i] * a[c];
                                da[c] += gd[i] * xd[i];
                            } else {
                                dx[i] = gd[i];
                            }
                        }
                    }
                }
                self.acc_vec(grads, *x, Some(dx));
                self.acc_vec(grads, *slope, Some(da));
            }
            Op::Linear { x, w, b } => {
                let (rows, d_in) = (self.shape(*x)[0], self.shape(*x)[1]);
                let d_out = self.shape(*w)[0];
                if self.needs(*x) {
                    let mut dx = vec![F::zero(); rows * d_in];
                    matmul(rows, d_out, d_in, gd, false, self.value(*w).data(), false, &mut dx, false);
                    self.acc_vec(grads, *x, Some(dx));
                }
                if self.needs(*w) {
                    let mut dw = vec![F::zero(); d_out * d_in];
                    matmul(d_out, rows, d_in, gd, true, self.value(*x).data(), false, &mut dw, false);
                    self.acc_vec(grads, *w, Some(dw));
                }
                if let Some(b) = b {
                    let mut db = vec![F::zero(); d_out];
                    for row in gd.chunks(d_out) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.acc_vec(grads, *b, Some(db));
                }
            }
            Op::Transpose12 { x } => {
                let s = node.value.shape();
                self.acc_vec(grads, *x, Some(transpose12(gd, s[0], s[1], s[2])));
            }
            Op::Reshape { x } => self.acc_vec(grads, *x, Some(gd.to_vec())),
            Op::GatherWindows { x, starts, span } => {
                let d = self.shape(*x)[1];
                let mut dx = vec![F::zero(); self.value(*x).numel()];
                for (r, &st) in starts.iter().enumerate() {
                    let src = &gd[r * span * d..(r + 1) * span * d];
                    for (t, &v) in dx[st * d..(st + span) * d].iter_mut().zip(src) {
                        *t += v;
                    }
                }
                self.acc_vec(grads, *x, Some(dx));
            }
            Op::ConcatCols { a, b } => {
                let (da, db) = (self.shape(*a)[1], self.shape(*b)[1]);
                let mut ga = Vec::with_capacity(self.value(*a).numel());
                let mut gb = Vec::with_capacity(self.value(*b).numel());
                for row in gd.chunks(da + db) {
                    ga.extend_from_slice(&row[..da]);
                    gb.extend_from_slice(&row[da..]);
                }
                self.acc_vec(grads, *a, Some(ga));
                self.acc_vec(grads, *b, Some(gb));
            }
            Op::MeanLast { x } => {
                let last = *self.shape(*x).last().expect("validated in forward");
                let n = F::of(last as f64);
                let dx: Vec<F> = gd.iter().flat_map(|&v| std::iter::repeat_n(v / n, last)).collect();
                self.acc_vec(grads, *x, Some(dx));
            }
            Op::Sigmoid { x } => {
                let dx = node.value.data().iter().zip(gd).map(|(&s, &g)| g * s * (F::one() - s)).collect();
                self.acc_vec(grads, *x, Some(dx));
            }
            Op::L1 { pred, target } => {
                let n = F::of(target.len() as f64);
                let g0 = gd[0] / n;
                let dx = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        let d = p - t;
                        if d > F::zero() {
                            g0
                        } else if d < F::zero() {
                            -g0
                        } else {
                            F::zero()
                        }
                    })
                    .collect();
                self.acc_vec(grads, *pred, Some(dx));
            }
            Op::Mse { pred, target } => {
                let k = gd[0] * F::of(2.0) / F::of(target.len() as f64);
                let dx = self.value(*pred).data().iter().zip(target).map(|(&p, &t)| k * (p - t)).collect();
                self.acc_vec(grads, *pred, Some(dx));
            }
            Op::Bce { pos, neg, eps } => {
                let hi = F::one() - *eps;
                let p = self.value(*pos).data();
                let q = self.value(*neg).data();
                let (np, nq) = (F::of(p.len() as f64), F::of(q.len() as f64));
                let dp = p
                    .iter()
                    .map(|&v| if v < *eps || v > hi { F::zero() } else { -gd[0] / (np * v) })
                    .collect();
                let dq = q
                    .iter()
                    .map(|&v| if v < *eps || v > hi { F::zero() } else { gd[0] / (nq * (F::one() - v)) })
                    .collect();
                self.acc_vec(grads, *pos, Some(dp));
                self.acc_vec(grads, *neg, Some(dq));
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let scale = gd[0] / F::of(labels.len() as f64);
                let mut dx: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dx[r * k + l] -= scale;
                }
                self.acc_vec(grads, *logits, Some(dx));
            }
            Op::WeightedSum { x, weights } => {
                self.acc_vec(grads, *x, Some(weights.iter().map(|&w| w * gd[0]).collect()));
            }
            Op::Mean { xs } => {
                let share = gd[0] / F::of(xs.len() as f64);
                for &x in xs {
                    self.acc_vec(grads, x, Some(vec![share]));
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<F>> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                debug_assert_eq!(gs.len(), inputs.len(), "{} returned wrong gradient count", op.name());
                for (&v, gi) in inputs.iter().zip(gs) {
                    self.acc_vec(grads, v, Some(gi.into_data()));
                }
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc_vec(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Option<Vec<F>>) {
        let Some(g) = g else { return };
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(self.shape(v).to_vec(), g).expect("gradient matches value shape"));
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
    params: HashMap<ParamId, Var>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient reaching a leaf. Leaves the loss does not depend on have zero gradient.
    pub fn wrt(&self, graph: &Graph<F>, v: Var) -> Tensor<F> {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v).to_vec()))
    }

    /// Gradient of a parameter that was placed on the tape and reached by backward.
    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Result<&Tensor<F>> {
        self.params
            .get(&id)
            .and_then(|v| self.grads.get(v.0))
            .and_then(|g| g.as_ref())
            .ok_or_else(|| Error::Detached(store.name(id).to_string()))
    }

    /// Every parameter that received a gradient, ordered by id.
    pub fn params(&self) -> Vec<(ParamId, &Tensor<F>)> {
        let mut out: Vec<(ParamId, &Tensor<F>)> = self
            .params
            .iter()
            .filter_map(|(&id, v)| self.grads.get(v.0).and_then(|g| g.as_ref()).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn check_same<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{what}: prediction {:?} vs target {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn softmax_rows<F: Scalar>(logits: &[F], k: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let e: Vec<F> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: F = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / z));
    }
    out
}

fn transpose12<F: Scalar>(x: &[F], a: usize, b: usize, c: usize) -> Vec<F> {
    let mut y = vec![F::zero(); x.len()];
    for i in 0..a {
        let src = &x[i * b * c..(i + 1) * b * c];
        let dst = &mut y[i * b * c..(i + 1) * b * c];
        for j in 0..b {
            for k in 0..c {
                dst[k * b + j] = src[j * c + k];
            }
        }
    }
    y
}
