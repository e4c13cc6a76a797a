//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive as it executes. Node ids are assigned in
//! execution order, so the tape is topologically sorted by construction and
//! [`Graph::backward`] is a single reverse sweep.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, ConvGeom, Padding};
use crate::tensor::{Element, Tensor};
use crate::text::ctc;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm statistics source.
#[derive(Clone, Debug)]
pub enum NormStats<T> {
    /// Normalise with the statistics of the current batch.
    Batch,
    /// Normalise with fixed running statistics.
    Running { mean: Vec<T>, var: Vec<T> },
}

/// Result of a batch-norm forward in training mode.
pub struct NormOutput<T> {
    pub out: Var,
    /// Batch mean and unbiased variance per channel, `None` in running mode.
    pub batch_moments: Option<(Vec<T>, Vec<T>)>,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool2x2 {
        x: Var,
        argmax: Vec<usize>,
    },
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Softmax {
        x: Var,
        axis: usize,
        log: bool,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Sum {
        x: Var,
        axes: Vec<usize>,
    },
    Mean {
        x: Var,
        axes: Vec<usize>,
    },
    Max {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    CtcLoss {
        x: Var,
        grad: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. One graph per forward/backward step.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Unnamed input that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Named trainable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: Tensor<T>) -> Var {
        let v = self.leaf(value, true);
        self.params.push((name.to_string(), v));
        v
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: Padding,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs:?} and weight {ws:?} must both be rank 4"),
            ));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, i, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c != i {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels but weight expects {i} (input {xs:?}, weight {ws:?})"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} does not match {o} output channels", self.shape(b)),
                ));
            }
        }
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        let ph = h + pad.top + pad.bottom;
        let pw = wd + pad.left + pad.right;
        if ph < kh || pw < kw {
            return Err(Error::shape(
                "conv2d",
                format!("padded input {ph}×{pw} is smaller than kernel {kh}×{kw}"),
            ));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            kh,
            kw,
            sh,
            sw,
            pad,
            oh: (ph - kh) / sh + 1,
            ow: (pw - kw) / sw + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            o,
            &geom,
        );
        let value = Tensor::new(&[n, o, geom.oh, geom.ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// 2×2 max pooling with stride 2. Odd spatial dims are padded with −∞.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("maxpool2d", format!("expected NCHW, got {s:?}")));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(self.value(x).data(), s[0] * s[1], s[2], s[3]);
        let value = Tensor::new(&[s[0], s[1], s[2].div_ceil(2), s[3].div_ceil(2)], out)?;
        Ok(self.push(value, Op::MaxPool2x2 { x, argmax }, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 4 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("expected NCHW, got {:?}", self.shape(x)),
            ));
        }
        self.mean(x, &[2, 3])
    }

    /// Matrix product of rank-2 operands, or batched over the leading axis of
    /// rank-3 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => (*ba, *m, *k, *n),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("incompatible operands {sa:?} × {sb:?}"),
                ))
            }
        };
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                false,
                &bd[i * k * n..(i + 1) * k * n],
                false,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, batch, m, k, n }, &[a, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(value, Op::Sigmoid(x), &[x])
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(Error::shape(name, format!("rank mismatch {sa:?} vs {sb:?}")));
        }
        let mut out_shape = Vec::with_capacity(sa.len());
        for (axis, (&da, &db)) in sa.iter().zip(sb).enumerate() {
            if da != db && da != 1 && db != 1 {
                return Err(Error::shape(
                    name,
                    format!("axis {axis}: cannot broadcast {sa:?} with {sb:?}"),
                ));
            }
            out_shape.push(da.max(db));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out = if sa == sb {
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ast = kernels::broadcast_strides(sa, &out_shape);
            let bst = kernels::broadcast_strides(sb, &out_shape);
            let mut out = vec![T::zero(); out_shape.iter().product()];
            kernels::for_each_broadcast(&out_shape, &ast, &bst, |o, i, j| out[o] = f(ad[i], bd[j]));
            out
        };
        Tensor::new(&out_shape, out)
    }

    /// Elementwise sum with size-1 broadcasting between equal-rank operands.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v + s);
        self.push(value, Op::AddScalar(x), &[x])
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, log: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let out = kernels::softmax(self.value(x).data(), &shape, axis, log);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Softmax { x, axis, log }, &[x]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, true)
    }

    /// Per-channel normalisation of an `N×C×H×W` tensor followed by the affine
    /// map `gamma · x̂ + beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<T>,
        eps: T,
    ) -> Result<NormOutput<T>> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("batch_norm", format!("expected NCHW, got {s:?}")));
        }
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{what} {:?} does not match {c} channels", self.shape(v)),
                ));
            }
        }
        let xd = self.value(x).data();
        let (mean, var, batch_moments, batch_stats) = match stats {
            NormStats::Batch => {
                let (mean, var) = kernels::channel_moments(xd, n, c, plane);
                let m = n * plane;
                let unbiased = if m > 1 {
                    let f = T::from_usize(m) / T::from_usize(m - 1);
                    var.iter().map(|&v| v * f).collect()
                } else {
                    var.clone()
                };
                (mean.clone(), var, Some((mean, unbiased)), true)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm", "running statistics length mismatch"));
                }
                (mean, var, None, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                let (m, is, g, be) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                for (o, &v) in out[range.clone()].iter_mut().zip(&xd[range]) {
                    *o = g * ((v - m) * is) + be;
                }
            }
        }
        let value = Tensor::new(&s, out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
            batch_stats,
        };
        Ok(NormOutput {
            out: self.push(value, op, &[x, gamma, beta]),
            batch_moments,
        })
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || factor == 0 {
            return Err(Error::shape(
                "upsample_nearest",
                format!("expected NCHW and positive factor, got {s:?} × {factor}"),
            ));
        }
        let out = kernels::upsample_nearest(self.value(x).data(), s[0] * s[1], s[2], s[3], factor);
        let value = Tensor::new(&[s[0], s[1], s[2] * factor, s[3] * factor], out)?;
        Ok(self.push(value, Op::Upsample { x, factor }, &[x]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} does not match {base:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = kernels::axis_split(&base, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    fn check_axes(&self, name: &'static str, x: Var, axes: &[usize]) -> Result<Vec<usize>> {
        let rank = self.shape(x).len();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.is_empty() || sorted.iter().any(|&a| a >= rank) {
            return Err(Error::shape(name, format!("bad axes {axes:?} for rank {rank}")));
        }
        Ok(sorted)
    }

    /// Keep-dim sum over `axes`.
    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let axes = self.check_axes("sum", x, axes)?;
        let shape = self.shape(x).to_vec();
        let out_shape = kernels::reduced_shape(&shape, &axes);
        let map = kernels::reduce_index_map(&shape, &axes);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for (&v, &o) in self.value(x).data().iter().zip(&map) {
            out[o] = out[o] + v;
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Sum { x, axes }, &[x]))
    }

    /// Keep-dim mean over `axes`.
    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let axes = self.check_axes("mean", x, axes)?;
        let shape = self.shape(x).to_vec();
        let count = T::from_usize(axes.iter().map(|&a| shape[a]).product());
        let out_shape = kernels::reduced_shape(&shape, &axes);
        let map = kernels::reduce_index_map(&shape, &axes);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for (&v, &o) in self.value(x).data().iter().zip(&map) {
            out[o] = out[o] + v;
        }
        out.iter_mut().for_each(|v| *v = *v / count);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Mean { x, axes }, &[x]))
    }

    /// Keep-dim max over `axes`; the gradient goes to the first maximal
    /// element in row-major order.
    pub fn max(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let axes = self.check_axes("max", x, axes)?;
        let shape = self.shape(x).to_vec();
        let out_shape = kernels::reduced_shape(&shape, &axes);
        let map = kernels::reduce_index_map(&shape, &axes);
        let numel = out_shape.iter().product();
        let mut out = vec![T::neg_infinity(); numel];
        let mut argmax = vec![usize::MAX; numel];
        for (i, (&v, &o)) in self.value(x).data().iter().zip(&map).enumerate() {
            if argmax[o] == usize::MAX || v > out[o] {
                out[o] = v;
                argmax[o] = i;
            }
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Max { x, argmax }, &[x]))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let s = self.sum(x, &axes)?;
        self.reshape(s, &[1])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let s = self.mean(x, &axes)?;
        self.reshape(s, &[1])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", format!("{axes:?} is not a permutation of rank {}", shape.len())));
        }
        let out = kernels::permute(self.value(x).data(), &shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Permute { x, axes: axes.to_vec() }, &[x]))
    }

    /// Mean CTC negative log-likelihood over a batch of `N×T×V` log
    /// probabilities. Fails with [`Error::CtcInfeasible`] if any label cannot
    /// be aligned in `T` frames.
    pub fn ctc_loss(&mut self, log_probs: Var, labels: &[Vec<usize>], blank: usize) -> Result<Var> {
        let s = self.shape(log_probs).to_vec();
        if s.len() != 3 || s[0] != labels.len() {
            return Err(Error::shape(
                "ctc_loss",
                format!("expected N×T×V log-probs for {} labels, got {s:?}", labels.len()),
            ));
        }
        let (n, t, v) = (s[0], s[1], s[2]);
        let data = self.value(log_probs).data();
        let mut total = T::zero();
        let mut grad = vec![T::zero(); data.len()];
        let inv_n = T::one() / T::from_usize(n);
        for (i, label) in labels.iter().enumerate() {
            let lp = &data[i * t * v..(i + 1) * t * v];
            let out = ctc::ctc_forward_backward(lp, t, v, label, blank)?;
            match out {
                Some((loss, g)) => {
                    total = total + loss;
                    for (dst, src) in grad[i * t * v..(i + 1) * t * v].iter_mut().zip(g) {
                        *dst = src * inv_n;
                    }
                }
                None => {
                    return Err(Error::CtcInfeasible {
                        sample: i,
                        required: ctc::min_frames(label),
                        frames: t,
                    })
                }
            }
        }
        let value = Tensor::scalar(total * inv_n);
        Ok(self.push(value, Op::CtcLoss { x: log_probs, grad }, &[log_probs]))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarOutput(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.backward_node(node, &dy, &mut grads);
            }
            grads[id] = Some(dy);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
            params: self.params.clone(),
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, g: Vec<T>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e = *e + x),
            slot @ None => *slot = Some(g),
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let o = self.shape(*w)[0];
                let cg = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy,
                    o,
                    geom,
                    self.needs(*x),
                );
                if let Some(dx) = cg.input {
                    acc(*x, dx);
                }
                if self.needs(*w) {
                    acc(*w, cg.weight);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        acc(*b, cg.bias);
                    }
                }
            }
            Op::MaxPool2x2 { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&i, &g) in argmax.iter().zip(dy) {
                    dx[i] = dx[i] + g;
                }
                acc(*x, dx);
            }
            Op::MatMul { a, b, batch, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for i in 0..*batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &dy[i * m * n..(i + 1) * m * n],
                            false,
                            &bd[i * k * n..(i + 1) * k * n],
                            true,
                            T::zero(),
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                    acc(*a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); batch * k * n];
                    for i in 0..*batch {
                        T::gemm(
                            k,
                            m,
                            n,
                            &ad[i * m * k..(i + 1) * m * k],
                            true,
                            &dy[i * m * n..(i + 1) * m * n],
                            false,
                            T::zero(),
                            &mut db[i * k * n..(i + 1) * k * n],
                        );
                    }
                    acc(*b, db);
                }
            }
            Op::Relu(x) => {
                let dx = y
                    .iter()
                    .zip(dy)
                    .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
                    .collect();
                acc(*x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = y.iter().zip(dy).map(|(&s, &g)| g * s * (T::one() - s)).collect();
                acc(*x, dx);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                let out_shape = node.value.shape();
                if self.needs(*a) {
                    acc(*a, kernels::unbroadcast(dy, out_shape, self.shape(*a)));
                }
                if self.needs(*b) {
                    let mut db = kernels::unbroadcast(dy, out_shape, self.shape(*b));
                    if negate {
                        db.iter_mut().for_each(|v| *v = -*v);
                    }
                    acc(*b, db);
                }
            }
            Op::Mul(a, b) => {
                let out_shape = node.value.shape();
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let ast = kernels::broadcast_strides(sa, out_shape);
                let bst = kernels::broadcast_strides(sb, out_shape);
                if self.needs(*a) {
                    let mut full = vec![T::zero(); dy.len()];
                    kernels::for_each_broadcast(out_shape, &ast, &bst, |o, _, j| full[o] = dy[o] * bd[j]);
                    acc(*a, kernels::unbroadcast(&full, out_shape, sa));
                }
                if self.needs(*b) {
                    let mut full = vec![T::zero(); dy.len()];
                    kernels::for_each_broadcast(out_shape, &ast, &bst, |o, i, _| full[o] = dy[o] * ad[i]);
                    acc(*b, kernels::unbroadcast(&full, out_shape, sb));
                }
            }
            Op::Scale(x, s) => acc(*x, dy.iter().map(|&g| g * *s).collect()),
            Op::AddScalar(x) => acc(*x, dy.to_vec()),
            Op::Softmax { x, axis, log } => {
                acc(*x, kernels::softmax_backward(y, dy, node.value.shape(), *axis, *log));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let s = self.shape(*x);
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let xd = self.value(*x).data();
                let gd = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xd.len()];
                let count = T::from_usize(n * plane);
                for ch in 0..c {
                    let (m, is) = (mean[ch], inv_std[ch]);
                    let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
                    for b in 0..n {
                        let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                        for (&g, &v) in dy[r.clone()].iter().zip(&xd[r]) {
                            sum_dy = sum_dy + g;
                            sum_dy_xhat = sum_dy_xhat + g * (v - m) * is;
                        }
                    }
                    dgamma[ch] = sum_dy_xhat;
                    dbeta[ch] = sum_dy;
                    let k = gd[ch] * is;
                    for b in 0..n {
                        let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                        for ((d, &g), &v) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xd[r]) {
                            *d = if *batch_stats {
                                let xhat = (v - m) * is;
                                k * (g - sum_dy / count - xhat * sum_dy_xhat / count)
                            } else {
                                k * g
                            };
                        }
                    }
                }
                if self.needs(*x) {
                    acc(*x, dx);
                }
                if self.needs(*gamma) {
                    acc(*gamma, dgamma);
                }
                if self.needs(*beta) {
                    acc(*beta, dbeta);
                }
            }
            Op::Upsample { x, factor } => {
                let s = self.shape(*x);
                acc(
                    *x,
                    kernels::upsample_nearest_backward(dy, s[0] * s[1], s[2], s[3], *factor),
                );
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = kernels::axis_split(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if self.needs(v) {
                        let mut g = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            g.extend_from_slice(&dy[start..start + len * inner]);
                        }
                        acc(v, g);
                    }
                    offset += len;
                }
            }
            Op::Sum { x, axes } | Op::Mean { x, axes } => {
                let shape = self.shape(*x);
                let map = kernels::reduce_index_map(shape, axes);
                let scale = if matches!(node.op, Op::Mean { .. }) {
                    T::one() / T::from_usize(axes.iter().map(|&a| shape[a]).product())
                } else {
                    T::one()
                };
                acc(*x, map.iter().map(|&o| dy[o] * scale).collect());
            }
            Op::Max { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&i, &g) in argmax.iter().zip(dy) {
                    dx[i] = dx[i] + g;
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, dy.to_vec()),
            Op::Permute { x, axes } => {
                let inv = kernels::inverse_permutation(axes);
                acc(*x, kernels::permute(dy, node.value.shape(), &inv));
            }
            Op::CtcLoss { x, grad } => {
                let g = dy[0];
                acc(*x, grad.iter().map(|&v| v * g).collect());
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(String, Var)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to `v`; zero if `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape).expect("gradient shape"),
        }
    }

    pub fn param(&self, name: &str) -> Option<Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| self.wrt(v))
    }

    /// All named parameter gradients, keyed by name.
    pub fn params(&self) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(name, v)| (name.clone(), self.wrt(*v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_scalar_filter_scales_input() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[1, 1, 1, 1], &[2.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, Some(b), (1, 1), Padding::NONE).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 4, 5]).unwrap());
        let w = g.constant(Tensor::from_fn(&[2, 3, 3, 3], |i| i as f64 * 0.1).unwrap());
        let b = g.constant(t(&[2], &[0.5, -1.5]));
        let y = g.conv2d(x, w, Some(b), (1, 1), Padding::uniform(1)).unwrap();
        assert_eq!(g.shape(y), &[2, 2, 4, 5]);
        for (i, &v) in g.value(y).data().iter().enumerate() {
            assert_eq!(v, if (i / 20) % 2 == 0 { 0.5 } else { -1.5 });
        }
    }

    #[test]
    fn conv_reports_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]).unwrap());
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]).unwrap());
        let err = g.conv2d(x, w, None, (1, 1), Padding::NONE).unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");
    }

    #[test]
    fn conv_output_size_formula() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 7, 9]).unwrap());
        let w = g.constant(Tensor::zeros(&[4, 1, 2, 2]).unwrap());
        let y = g.conv2d(x, w, None, (2, 3), Padding::new(0, 1, 0, 1)).unwrap();
        // ⌊(7+1−2)/2+1⌋ = 4, ⌊(9+1−2)/3+1⌋ = 3
        assert_eq!(g.shape(y), &[1, 4, 4, 3]);
    }

    #[test]
    fn maxpool_and_gap_examples() {
        let mut g = Graph::new();
        let x = g.variable(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.maxpool2d(x).unwrap();
        assert_eq!(g.value(p).data(), &[4.0]);
        let a = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(a).data(), &[2.5]);
        assert_eq!(g.shape(a), &[1, 1, 1, 1]);

        let c = g.constant(Tensor::full(&[1, 2, 4, 4], 3.0).unwrap());
        let pc = g.maxpool2d(c).unwrap();
        assert!(g.value(pc).data().iter().all(|&v| v == 3.0));
        let ones = g.constant(Tensor::ones(&[1, 3, 2, 2]).unwrap());
        let go = g.global_avg_pool(ones).unwrap();
        assert_eq!(g.value(go).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gap_gradient_is_uniform() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_fn(&[2, 3, 4, 5], |i| (i as f64).sin()).unwrap());
        let a = g.global_avg_pool(x).unwrap();
        let s = g.sum_all(a).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(x).data().iter().all(|&v| (v - 1.0 / 20.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_and_sigmoid_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let s = g.softmax(x, 1).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = g.constant(t(&[1], &[0.0]));
        let sg = g.sigmoid(z);
        assert_eq!(g.value(sg).data(), &[0.5]);
    }

    #[test]
    fn unreached_inputs_get_zero_gradient() {
        let mut g = Graph::new();
        let a = g.param("a", t(&[2], &[1.0, 2.0]));
        let b = g.param("b", t(&[2], &[3.0, 4.0]));
        let s = g.sum_all(a).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(b).data(), &[0.0, 0.0]);
        assert_eq!(grads.param("a").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let a = g.variable(t(&[1], &[3.0]));
        let sq = g.mul(a, a).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.wrt(a).data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let a = g.variable(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(a), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn broadcast_errors_name_axes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::<f64>::zeros(&[2, 3]).unwrap());
        let b = g.constant(Tensor::<f64>::zeros(&[2, 4]).unwrap());
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
    }

    #[test]
    fn concat_and_upsample_values() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 1, 1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[1, 2, 1, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[1, 3, 1, 2]);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let u = g.upsample_nearest(a, 2).unwrap();
        assert_eq!(g.value(u).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
