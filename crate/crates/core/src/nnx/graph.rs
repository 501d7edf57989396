//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation eagerly: the forward value is
//! computed immediately and the op is appended to the tape. `backward`
//! walks the tape in reverse and accumulates adjoints.

use crate::error::{Error, Result};
use crate::nnx::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// Clamp applied to discriminator outputs before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    MulConst(Var, Tensor),
    Reverse(Var, f64),
    GlobalAvgPool(Var),
    ChannelMean(Var),
    ChannelStd(Var),
    BroadcastHw(Var),
    GatherRows(Var, Vec<usize>),
    SelectRows(Var, Var, Vec<bool>),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    Reshape(Var),
    Sum(Var),
    Mse(Var, Tensor),
    BinaryDomainLoss(Var, Var),
    DomainLossLogits(Var, Var),
    GaussKernel(Var, Var, f64),
    WeightedSum(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Build a fresh graph per step.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a trainable parameter or an input under test).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf. Also serves as `detach`.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || xs[1] != ws[1] {
            return Err(Error::Dimension(format!(
                "conv2d input {:?} weight {:?}",
                xs, ws
            )));
        }
        if self.value(b).shape() != [ws[0]] {
            return Err(Error::Dimension("conv2d bias".into()));
        }
        let geo = ConvGeom::new(&xs, &ws, stride, pad)?;
        let out = conv_forward(self.value(x), self.value(w), self.value(b), &geo);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            &[x, w, b],
        ))
    }

    /// `x[N,D] · wᵀ[D,O] + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.value(b).shape() != [ws[0]] {
            return Err(Error::Dimension(format!(
                "linear input {:?} weight {:?}",
                xs, ws
            )));
        }
        let (n, d, o) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; n * o];
        for i in 0..n {
            out[i * o..(i + 1) * o].copy_from_slice(self.value(b).data());
        }
        gemm_nt_acc(self.value(x).data(), self.value(w).data(), &mut out, n, d, o);
        let t = Tensor::new(&[n, o], out)?;
        Ok(self.push(t, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), &[a, b]))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v + c);
        self.push(t, Op::AddScalar(x), &[x])
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::MulScalar(x, c), &[x])
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let t = self.value(x).zip_map(&c, |a, b| a * b)?;
        Ok(self.push(t, Op::MulConst(x, c), &[x]))
    }

    /// Identity forward; multiplies the incoming gradient by `-scale`.
    pub fn reverse_gradient(&mut self, x: Var, scale: f64) -> Result<Var> {
        if !(scale >= 0.0) {
            return Err(Error::Parameter(format!(
                "gradient reversal scale must be >= 0, got {scale}"
            )));
        }
        let t = self.value(x).clone();
        Ok(self.push(t, Op::Reverse(x, scale), &[x]))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = channel_reduce(self.value(x), |s| s.iter().sum::<f64>() / s.len() as f64)?;
        Ok(self.push(t, Op::GlobalAvgPool(x), &[x]))
    }

    /// Per-sample channel means, `[N,C,H,W] -> [N,C]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let t = channel_reduce(self.value(x), |s| s.iter().sum::<f64>() / s.len() as f64)?;
        Ok(self.push(t, Op::ChannelMean(x), &[x]))
    }

    /// Per-sample channel population standard deviations, `[N,C,H,W] -> [N,C]`.
    pub fn channel_std(&mut self, x: Var) -> Result<Var> {
        let t = channel_reduce(self.value(x), population_std)?;
        Ok(self.push(t, Op::ChannelStd(x), &[x]))
    }

    /// `[N,C] -> [N,C,H,W]` by repeating each entry over the spatial grid.
    pub fn broadcast_hw(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("broadcast_hw on {:?}", s)));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(s[0] * s[1] * hw);
        for &v in self.value(x).data() {
            data.extend(std::iter::repeat_n(v, hw));
        }
        let t = Tensor::new(&[s[0], s[1], h, w], data)?;
        Ok(self.push(t, Op::BroadcastHw(x), &[x]))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let rows = self.value(x).rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Dimension(format!("row {bad} out of {rows}")));
        }
        let t = self.value(x).gather_rows(idx);
        Ok(self.push(t, Op::GatherRows(x, idx.to_vec()), &[x]))
    }

    /// Row `i` from `a` where `mask[i]`, otherwise from `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, mask: &[bool]) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.check_same_shape(tb)?;
        if mask.len() != ta.rows() {
            return Err(Error::Dimension("select_rows mask length".into()));
        }
        let w = ta.row_len();
        let mut data = Vec::with_capacity(ta.len());
        for (i, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { ta.row(i) } else { tb.row(i) });
        }
        let t = Tensor::new(ta.shape(), data)?;
        debug_assert_eq!(t.len(), w * mask.len());
        Ok(self.push(t, Op::SelectRows(a, b, mask.to_vec()), &[a, b]))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape()[1..] != tb.shape()[1..] {
            return Err(Error::Dimension(format!(
                "concat {:?} with {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut shape = ta.shape().to_vec();
        shape[0] += tb.rows();
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::ConcatRows(a, b), &[a, b]))
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        if start > end || end > tx.rows() {
            return Err(Error::Dimension(format!(
                "slice {start}..{end} of {} rows",
                tx.rows()
            )));
        }
        let w = tx.row_len();
        let mut shape = tx.shape().to_vec();
        shape[0] = end - start;
        let t = Tensor::new(&shape, tx.data()[start * w..end * w].to_vec())?;
        Ok(self.push(t, Op::SliceRows(x, start), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x), &[x])
    }

    /// Mean squared error against a constant target with the same element count.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || p.is_empty() {
            return Err(Error::Dimension(format!(
                "mse: {} predictions vs {} targets",
                p.len(),
                target.len()
            )));
        }
        let n = p.len() as f64;
        let l: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(l), Op::Mse(pred, target.clone()), &[pred]))
    }

    /// `-mean(log(1 - d_s)) - mean(log(d_t))` with outputs clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`. Source is labeled 0, target 1.
    pub fn binary_domain_loss(&mut self, d_source: Var, d_target: Var) -> Result<Var> {
        let (s, t) = (self.value(d_source), self.value(d_target));
        if s.is_empty() || t.is_empty() {
            return Err(Error::Dimension("empty discriminator batch".into()));
        }
        let l = dann_value(s.data(), t.data());
        Ok(self.push(
            Tensor::scalar(l),
            Op::BinaryDomainLoss(d_source, d_target),
            &[d_source, d_target],
        ))
    }

    /// The same loss written on discriminator logits:
    /// `mean(softplus(z_s)) + mean(softplus(-z_t))`. No clamping is needed and
    /// saturated outputs keep a gradient.
    pub fn domain_loss_logits(&mut self, z_source: Var, z_target: Var) -> Result<Var> {
        let (s, t) = (self.value(z_source), self.value(z_target));
        if s.is_empty() || t.is_empty() {
            return Err(Error::Dimension("empty discriminator batch".into()));
        }
        let ls = s.data().iter().map(|&z| softplus(z)).sum::<f64>() / s.len() as f64;
        let lt = t.data().iter().map(|&z| softplus(-z)).sum::<f64>() / t.len() as f64;
        Ok(self.push(
            Tensor::scalar(ls + lt),
            Op::DomainLossLogits(z_source, z_target),
            &[z_source, z_target],
        ))
    }

    /// Gaussian kernel matrix between the rows of `a[n,D]` and `b[m,D]`.
    pub fn gauss_kernel(&mut self, a: Var, b: Var, bandwidth: f64) -> Result<Var> {
        if !(bandwidth > 0.0) {
            return Err(Error::Parameter(format!("bandwidth {bandwidth}")));
        }
        let t = gauss_kernel_rows(self.value(a), self.value(b), bandwidth)?;
        Ok(self.push(t, Op::GaussKernel(a, b, bandwidth), &[a, b]))
    }

    /// `Σ c ⊙ x` for a constant coefficient tensor `c`.
    pub fn weighted_sum(&mut self, x: Var, c: Tensor) -> Result<Var> {
        self.value(x).check_same_shape(&c)?;
        let l: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(l), Op::WeightedSum(x, c), &[x]))
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let geo = ConvGeom::new(tx.shape(), tw.shape(), *stride, *pad)?;
                let (dx, dw, db) = conv_backward(tx, tw, g, &geo, self.wants(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, d, o) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
                if self.wants(*x) {
                    let mut dx = vec![0.0; n * d];
                    gemm_acc(g.data(), tw.data(), &mut dx, n, o, d);
                    self.accumulate(grads, *x, Tensor::new(&[n, d], dx)?);
                }
                let mut dw = vec![0.0; o * d];
                gemm_tn_acc(g.data(), tx.data(), &mut dw, n, o, d);
                self.accumulate(grads, *w, Tensor::new(&[o, d], dw)?);
                let mut db = vec![0.0; o];
                for r in 0..n {
                    for (acc, v) in db.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *b, Tensor::new(&[o], db)?);
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .zip_map(g, |v, gv| if v > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = out.zip_map(g, |s, gv| gv * s * (1.0 - s))?;
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(tb, |gv, bv| gv * bv)?);
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(ta, |gv, av| gv * av)?);
                }
            }
            Op::Div(a, b) => {
                let tb = self.value(*b);
                let ga = g.zip_map(tb, |gv, bv| gv / bv)?;
                if self.wants(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = out.zip_map(tb, |o, bv| o / bv)?;
                    self.accumulate(grads, *b, q.zip_map(g, |qv, gv| -qv * gv)?);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::MulScalar(x, c) => self.accumulate(grads, *x, g.map(|v| v * c)),
            Op::MulConst(x, c) => self.accumulate(grads, *x, g.zip_map(c, |gv, cv| gv * cv)?),
            Op::Reverse(x, scale) => self.accumulate(grads, *x, g.map(|v| -scale * v)),
            Op::GlobalAvgPool(x) | Op::ChannelMean(x) => {
                let s = self.value(*x).shape();
                let hw = s[2] * s[3];
                let mut dx = Vec::with_capacity(self.value(*x).len());
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv / hw as f64, hw));
                }
                self.accumulate(grads, *x, Tensor::new(s, dx)?);
            }
            Op::ChannelStd(x) => {
                let tx = self.value(*x);
                let s = tx.shape();
                let hw = s[2] * s[3];
                let mut dx = vec![0.0; tx.len()];
                for (k, chunk) in tx.data().chunks(hw).enumerate() {
                    let sd = out.data()[k];
                    if sd == 0.0 {
                        continue;
                    }
                    let mean = chunk.iter().sum::<f64>() / hw as f64;
                    let scale = g.data()[k] / (hw as f64 * sd);
                    for (d, &v) in dx[k * hw..(k + 1) * hw].iter_mut().zip(chunk) {
                        *d = scale * (v - mean);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(s, dx)?);
            }
            Op::BroadcastHw(x) => {
                let s = out.shape();
                let hw = s[2] * s[3];
                let dx: Vec<f64> = g.data().chunks(hw).map(|c| c.iter().sum()).collect();
                self.accumulate(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
            }
            Op::GatherRows(x, idx) => {
                let tx = self.value(*x);
                let w = tx.row_len();
                let mut dx = vec![0.0; tx.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for (d, v) in dx[src * w..(src + 1) * w].iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(tx.shape(), dx)?);
            }
            Op::SelectRows(a, b, mask) => {
                let w = g.row_len();
                let mut da = vec![0.0; g.len()];
                let mut db = vec![0.0; g.len()];
                for (r, &m) in mask.iter().enumerate() {
                    let dst = if m { &mut da } else { &mut db };
                    dst[r * w..(r + 1) * w].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, Tensor::new(g.shape(), da)?);
                self.accumulate(grads, *b, Tensor::new(g.shape(), db)?);
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).len();
                let ga = Tensor::new(self.value(*a).shape(), g.data()[..na].to_vec())?;
                let gb = Tensor::new(self.value(*b).shape(), g.data()[na..].to_vec())?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::SliceRows(x, start) => {
                let tx = self.value(*x);
                let w = tx.row_len();
                let mut dx = vec![0.0; tx.len()];
                dx[start * w..start * w + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, Tensor::new(tx.shape(), dx)?);
            }
            Op::Reshape(x) => {
                let dx = g.clone().reshape(self.value(*x).shape())?;
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::Mse(p, target) => {
                let tp = self.value(*p);
                let scale = 2.0 * g.item() / tp.len() as f64;
                let data = tp
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                self.accumulate(grads, *p, Tensor::new(tp.shape(), data)?);
            }
            Op::BinaryDomainLoss(s, t) => {
                let gv = g.item();
                let (ts, tt) = (self.value(*s), self.value(*t));
                let (ns, nt) = (ts.len() as f64, tt.len() as f64);
                let ds = ts.map(|d| {
                    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&d) {
                        gv / (ns * (1.0 - d))
                    } else {
                        0.0
                    }
                });
                let dt = tt.map(|d| {
                    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&d) {
                        -gv / (nt * d)
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *s, ds);
                self.accumulate(grads, *t, dt);
            }
            Op::DomainLossLogits(s, t) => {
                let gv = g.item();
                let (ns, nt) = (self.value(*s).len() as f64, self.value(*t).len() as f64);
                let ds = self.value(*s).map(|z| gv * sigmoid(z) / ns);
                let dt = self.value(*t).map(|z| -gv * sigmoid(-z) / nt);
                self.accumulate(grads, *s, ds);
                self.accumulate(grads, *t, dt);
            }
            Op::GaussKernel(a, b, bw) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, m, d) = (ta.rows(), tb.rows(), ta.row_len());
                let inv = 1.0 / (bw * bw);
                let mut da = vec![0.0; n * d];
                let mut db = vec![0.0; m * d];
                for i in 0..n {
                    let ai = ta.row(i);
                    for j in 0..m {
                        let c = g.data()[i * m + j] * out.data()[i * m + j] * inv;
                        if c == 0.0 {
                            continue;
                        }
                        let bj = tb.row(j);
                        for k in 0..d {
                            let diff = ai[k] - bj[k];
                            da[i * d + k] -= c * diff;
                            db[j * d + k] += c * diff;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(ta.shape(), da)?);
                self.accumulate(grads, *b, Tensor::new(tb.shape(), db)?);
            }
            Op::WeightedSum(x, c) => {
                let gv = g.item();
                self.accumulate(grads, *x, c.map(|v| v * gv));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn population_std(s: &[f64]) -> f64 {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    (s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn dann_value(source: &[f64], target: &[f64]) -> f64 {
    let clamp = |d: f64| d.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let ls = source.iter().map(|&d| (1.0 - clamp(d)).ln()).sum::<f64>() / source.len() as f64;
    let lt = target.iter().map(|&d| clamp(d).ln()).sum::<f64>() / target.len() as f64;
    -ls - lt
}

fn channel_reduce(x: &Tensor, f: impl Fn(&[f64]) -> f64) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || s[2] * s[3] == 0 {
        return Err(Error::Dimension(format!(
            "expected [N,C,H,W] with H·W ≥ 1, got {:?}",
            s
        )));
    }
    let data = x.data().chunks(s[2] * s[3]).map(f).collect();
    Tensor::new(&[s[0], s[1]], data)
}

pub(crate) fn gauss_kernel_rows(a: &Tensor, b: &Tensor, bandwidth: f64) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.row_len() != b.row_len() {
        return Err(Error::Dimension(format!(
            "kernel rows {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, m) = (a.rows(), b.rows());
    let denom = 2.0 * bandwidth * bandwidth;
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            let d2: f64 = ai.iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            out.push((-d2 / denom).exp());
        }
    }
    Tensor::new(&[n, m], out)
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (h, w, k) = (xs[2], xs[3], ws[2]);
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Dimension(format!(
                "conv kernel {k} stride {stride} on {h}x{w}"
            )));
        }
        Ok(ConvGeom {
            n: xs[0],
            c: xs[1],
            h,
            w,
            o: ws[0],
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Column matrix `[C·k·k, Ho·Wo]` for one sample.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * self.wo + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.h
                                && (ix as usize) < self.w
                            {
                                x[(ci * self.h + iy as usize) * self.w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.w {
                                continue;
                            }
                            dx[(ci * self.h + iy as usize) * self.w + ix as usize] +=
                                src[oy * self.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, g: &ConvGeom) -> Tensor {
    let (pk, p) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * p;
    let mut out = vec![0.0; g.n * out_len];
    let mut col = vec![0.0; pk * p];
    for s in 0..g.n {
        g.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut col);
        let dst = &mut out[s * out_len..(s + 1) * out_len];
        for (oc, &bv) in b.data().iter().enumerate() {
            dst[oc * p..(oc + 1) * p].fill(bv);
        }
        gemm_acc(w.data(), &col, dst, g.o, pk, p);
    }
    Tensor::new(&[g.n, g.o, g.ho, g.wo], out).expect("conv output shape")
}

fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (pk, p) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.o * p;
    let mut dw = vec![0.0; g.o * pk];
    let mut db = vec![0.0; g.o];
    let mut dx = if need_dx {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    let mut col = vec![0.0; pk * p];
    let mut dcol = vec![0.0; pk * p];
    for s in 0..g.n {
        let go = &gout.data()[s * out_len..(s + 1) * out_len];
        g.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut col);
        gemm_nt_acc(go, &col, &mut dw, g.o, p, pk);
        for oc in 0..g.o {
            db[oc] += go[oc * p..(oc + 1) * p].iter().sum::<f64>();
        }
        if need_dx {
            dcol.fill(0.0);
            gemm_tn_acc(w.data(), go, &mut dcol, g.o, pk, p);
            g.col2im(&dcol, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    let dx = need_dx.then(|| Tensor::new(x.shape(), dx).expect("dx shape"));
    (
        dx,
        Tensor::new(w.shape(), dw).expect("dw shape"),
        Tensor::new(&[g.o], db).expect("db shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_scalar(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn square_via_mul() {
        let mut g = Graph::new();
        let w = g.param(Tensor::scalar(3.0));
        let y = g.mul(w, w).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(w).unwrap().item(), 6.0);
    }

    #[test]
    fn reverse_gradient_negates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, -2.0]));
        let r = g.reverse_gradient(x, 1.0).unwrap();
        assert_eq!(g.value(r), g.value(x));
        let y = g.weighted_sum(r, Tensor::from_vec(vec![3.0, 5.0])).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[-3.0, -5.0]);
        assert!(g.reverse_gradient(x, -1.0).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 1 sample, 1 channel 3x3, 1 filter 3x3, pad 1 stride 2
        let x = Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::new(&[1, 1, 3, 3], vec![0., 1., 0., 1., -4., 1., 0., 1., 0.]).unwrap();
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.param(w.clone()));
        let bv = g.param(Tensor::from_vec(vec![0.5]));
        let y = g.conv2d(xv, wv, bv, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        // output (0,0) centred on input (0,0): 2 + 4 - 4*1 + 0.5
        assert_eq!(g.value(y).data()[0], 2.0 + 4.0 - 4.0 + 0.5);
        // output (1,1) centred on input (2,2): 6 + 8 - 36 + 0.5
        assert_eq!(g.value(y).data()[3], 6.0 + 8.0 - 36.0 + 0.5);
    }

    #[test]
    fn channel_std_gradient_matches_fd() {
        let vals = vec![0.3, -1.2, 2.5, 0.7];
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[1, 1, 2, 2], vals.clone()).unwrap());
        let s = g.channel_std(x).unwrap();
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        for k in 0..4 {
            let f = |v: f64| {
                let mut c = vals.clone();
                c[k] = v;
                population_std(&c)
            };
            let fd = fd_scalar(f, vals[k]);
            assert!((grads.wrt(x).unwrap().data()[k] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn dann_uniform_is_two_ln_two() {
        let v = dann_value(&[0.5, 0.5, 0.5], &[0.5, 0.5]);
        assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }
}
