//! The recording tape and every differentiable operator.

use super::kernels::{col2im, gemm, im2col, linear_taps, Mat, Window};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-supplied pointwise function and its derivative.
#[derive(Clone, Copy)]
pub struct UnaryFn {
    pub name: &'static str,
    pub forward: fn(f32) -> f32,
    pub derivative: fn(f32) -> f32,
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        padding: usize,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Unary(Var, UnaryFn),
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    PixelShuffle {
        input: Var,
        s: usize,
    },
    UpsampleLinear {
        input: Var,
        s: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    L1 {
        pred: Var,
        target: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Active piece of every piecewise-linear node of a tape, in recording
/// order: ReLU masks, max-pool winners and L1 residual signs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KinkPattern {
    pieces: Vec<Vec<i64>>,
}

impl KinkPattern {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

/// Ordered record of executed operations.
///
/// Nodes are appended as operations run, so the record is always in
/// topological order and [`Graph::backward`] visits it once in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    frozen: Option<Frozen>,
}

struct Frozen {
    pattern: KinkPattern,
    cursor: usize,
    mismatch: Option<String>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// A graph whose piecewise nodes keep the pieces of `pattern` instead
    /// of choosing them from their inputs, i.e. evaluates the linear
    /// extension of one smooth piece. Operations must be recorded in the
    /// same order as on the tape that produced `pattern`. Such a graph is
    /// for forward evaluation only.
    pub fn frozen(pattern: KinkPattern) -> Self {
        Graph {
            nodes: Vec::new(),
            frozen: Some(Frozen {
                pattern,
                cursor: 0,
                mismatch: None,
            }),
        }
    }

    /// Set when a frozen graph's operations did not line up with its
    /// pattern; the values computed after that point are not meaningful.
    pub fn frozen_mismatch(&self) -> Option<&str> {
        self.frozen.as_ref().and_then(|f| f.mismatch.as_deref())
    }

    /// Next frozen piece of a differentiable piecewise node.
    fn frozen_piece(&mut self, op: &'static str, len: usize, requires_grad: bool) -> Option<Vec<i64>> {
        let frozen = self.frozen.as_mut().filter(|_| requires_grad)?;
        match frozen.pattern.pieces.get(frozen.cursor).filter(|p| p.len() == len) {
            Some(piece) => {
                frozen.cursor += 1;
                Some(piece.clone())
            }
            None => {
                let at = frozen.cursor;
                frozen
                    .mismatch
                    .get_or_insert_with(|| format!("{op} does not match the frozen pattern at piece {at}"));
                None
            }
        }
    }

    pub fn kink_pattern(&self) -> KinkPattern {
        let pieces = self
            .nodes
            .iter()
            .filter_map(|node| match &node.op {
                Op::Relu(x) => Some(self.nodes[x.0].value.data().iter().map(|&v| (v > 0.0) as i64).collect()),
                Op::MaxPool { argmax, .. } => Some(argmax.iter().map(|&a| a as i64).collect()),
                Op::L1 { pred, target } => {
                    let (p, t) = (self.nodes[pred.0].value.data(), self.nodes[target.0].value.data());
                    Some(
                        p.iter()
                            .zip(t)
                            .map(|(a, b)| a.partial_cmp(b).map_or(0, |o| o as i64))
                            .collect(),
                    )
                }
                _ => None,
            })
            .collect();
        KinkPattern { pieces }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    /// Removes a leaf's tensor (with its gradient) from the graph.
    pub fn take(&mut self, v: Var) -> Tensor {
        let placeholder = Tensor::scalar(0.0);
        std::mem::replace(&mut self.nodes[v.0].value, placeholder)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Stride-1 2-D convolution. `weight` is `[cout, cin, k, k]`, `bias` is `[cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize) -> Result<Var> {
        let [b, cin, h, w] = self.value(input).dims4("conv2d")?;
        let [cout, wcin, k, k2] = self.value(weight).dims4("conv2d")?;
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be square and odd, got {k}x{k2}"),
            ));
        }
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {cin} do not match weight input channels {wcin}"),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "bias shape {:?} does not match output channels {cout}",
                    self.value(bias).shape()
                ),
            ));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} exceeds padded input {h}x{w}"),
            ));
        }
        let g = Window {
            channels: cin,
            height: h,
            width: w,
            kernel: k,
            stride: 1,
            padding,
        };
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut out = vec![0.0f32; b * cout * oh * ow];
        let mut col = vec![0.0f32; g.col_rows() * g.col_cols()];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let bs = self.value(bias).data();
            let per_in = cin * h * w;
            let per_out = cout * oh * ow;
            for n in 0..b {
                im2col(&x[n * per_in..(n + 1) * per_in], g, &mut col);
                let dst = &mut out[n * per_out..(n + 1) * per_out];
                for (co, plane) in dst.chunks_mut(oh * ow).enumerate() {
                    plane.fill(bs[co]);
                }
                gemm(
                    Mat::new(wt, cout, g.col_rows()),
                    Mat::new(&col, g.col_rows(), oh * ow),
                    dst,
                    1.0,
                );
            }
        }
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(&[b, cout, oh, ow], out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            },
            rg,
        ))
    }

    /// Transposed convolution; `weight` is `[cin, cout, k, k]`.
    /// Output extent is `(h − 1)·stride − 2·padding + k`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [b, cin, h, w] = self.value(input).dims4("conv_transpose2d")?;
        let [wcin, cout, k, k2] = self.value(weight).dims4("conv_transpose2d")?;
        if k != k2 || stride == 0 {
            return Err(Error::shape(
                "conv_transpose2d",
                "kernel must be square, stride positive",
            ));
        }
        if wcin != cin {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input channels {cin} do not match weight input channels {wcin}"),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::shape(
                "conv_transpose2d",
                "bias must have one entry per output channel",
            ));
        }
        if (h - 1) * stride + k < 2 * padding + 1 {
            return Err(Error::shape("conv_transpose2d", "padding removes the whole output"));
        }
        let oh = (h - 1) * stride + k - 2 * padding;
        let ow = (w - 1) * stride + k - 2 * padding;
        let g = Window {
            channels: cout,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            padding,
        };
        let mut out = vec![0.0f32; b * cout * oh * ow];
        let mut cols = vec![0.0f32; cout * k * k * h * w];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let bs = self.value(bias).data();
            for n in 0..b {
                gemm(
                    Mat::new(wt, cin, cout * k * k).t(),
                    Mat::new(&x[n * cin * h * w..(n + 1) * cin * h * w], cin, h * w),
                    &mut cols,
                    0.0,
                );
                let dst = &mut out[n * cout * oh * ow..(n + 1) * cout * oh * ow];
                for (co, plane) in dst.chunks_mut(oh * ow).enumerate() {
                    plane.fill(bs[co]);
                }
                col2im(&cols, g, dst);
            }
        }
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(&[b, cout, oh, ow], out)?,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let rg = self.any_grad(&[x]);
        let t = match self.frozen_piece("relu", self.value(x).numel(), rg) {
            Some(mask) => {
                let src = self.value(x);
                let data = src
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| if m == 1 { v } else { 0.0 })
                    .collect();
                Tensor::new(src.shape(), data).expect("same shape")
            }
            None => self.map(x, |v| v.max(0.0)),
        };
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Sigmoid(x), rg)
    }

    /// Applies a caller-defined pointwise function with its derivative.
    pub fn unary(&mut self, x: Var, f: UnaryFn) -> Var {
        let t = self.map(x, f.forward);
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Unary(x, f), rg)
    }

    fn map(&self, x: Var, f: impl Fn(f32) -> f32) -> Tensor {
        let src = self.value(x);
        Tensor::new(src.shape(), src.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    /// Non-overlapping `k × k` max pooling; ties resolve to the first
    /// element in row-major window order.
    pub fn maxpool2d(&mut self, input: Var, k: usize) -> Result<Var> {
        let [b, c, h, w] = self.value(input).dims4("maxpool2d")?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::divisibility(
                "maxpool2d",
                format!("spatial extent {h}x{w} is not divisible by window {k}"),
            ));
        }
        let (oh, ow) = (h / k, w / k);
        let rg = self.any_grad(&[input]);
        if let Some(winners) = self.frozen_piece("maxpool2d", b * c * oh * ow, rg) {
            let x = self.value(input).data();
            let argmax: Vec<u32> = winners.iter().map(|&a| a as u32).collect();
            let out = argmax.iter().map(|&a| x[a as usize]).collect();
            return Ok(self.push(Tensor::new(&[b, c, oh, ow], out)?, Op::MaxPool { input, argmax }, rg));
        }
        let x = self.value(input).data();
        let mut out = vec![0.0f32; b * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        for p in 0..b * c {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut at = 0usize;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = (oy * k + dy) * w + ox * k + dx;
                            if plane[i] > best || (dy == 0 && dx == 0) {
                                best = plane[i];
                                at = i;
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = (p * h * w + at) as u32;
                }
            }
        }
        Ok(self.push(Tensor::new(&[b, c, oh, ow], out)?, Op::MaxPool { input, argmax }, rg))
    }

    /// Sub-pixel rearrangement:
    /// `out[b, c, s·y + dy, s·x + dx] = in[b, c·s² + dy·s + dx, y, x]`.
    pub fn pixel_shuffle(&mut self, input: Var, s: usize) -> Result<Var> {
        let [b, cin, h, w] = self.value(input).dims4("pixel_shuffle")?;
        if s == 0 || cin % (s * s) != 0 {
            return Err(Error::divisibility(
                "pixel_shuffle",
                format!("channel count {cin} is not divisible by {}", s * s),
            ));
        }
        let c = cin / (s * s);
        let x = self.value(input).data();
        let mut out = vec![0.0f32; x.len()];
        for (src, dst) in shuffle_index(b, c, h, w, s) {
            out[dst] = x[src];
        }
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            Tensor::new(&[b, c, h * s, w * s], out)?,
            Op::PixelShuffle { input, s },
            rg,
        ))
    }

    /// Fixed (non-learned) separable linear interpolation by an integer factor.
    pub fn upsample_linear(&mut self, input: Var, s: usize) -> Result<Var> {
        let [b, c, h, w] = self.value(input).dims4("upsample_linear")?;
        if s == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let (ty, tx) = (linear_taps(h, s), linear_taps(w, s));
        let (oh, ow) = (h * s, w * s);
        let x = self.value(input).data();
        let mut out = vec![0.0f32; b * c * oh * ow];
        for p in 0..b * c {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                    out[(p * oh + oy) * ow + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        let rg = self.any_grad(&[input]);
        Ok(self.push(Tensor::new(&[b, c, oh, ow], out)?, Op::UpsampleLinear { input, s }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::invalid("concat needs at least one input"))?;
        let base = self.value(first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for rank {}", base.len()),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(Error::shape(
                    "concat",
                    format!("shape {s:?} differs from {base:?} outside axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let t = self.map(x, |v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s as f32), Op::Sum(x), rg)
    }

    /// Mean absolute error over all elements. With equally sized samples
    /// this is the batch mean of per-sample means.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("l1_loss", pred, target)?;
        let rg = self.any_grad(&[pred, target]);
        let signs = self.frozen_piece("l1_loss", self.value(pred).numel(), rg);
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let s: f64 = match signs {
            Some(signs) => p
                .iter()
                .zip(t)
                .zip(&signs)
                .map(|((&a, &b), &s)| s as f64 * (a as f64 - b as f64))
                .sum(),
            None => p.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum(),
        };
        let mean = (s / p.len() as f64) as f32;
        Ok(self.push(Tensor::scalar(mean), Op::L1 { pred, target }, rg))
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// calls until the leaf's gradient is reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::invalid("loss does not depend on any differentiable leaf"));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            } => {
                let [b, cin, h, w] = dims(&nodes[input.0].value);
                let [cout, _, k, _] = dims(&nodes[weight.0].value);
                let g4 = Window {
                    channels: cin,
                    height: h,
                    width: w,
                    kernel: k,
                    stride: 1,
                    padding: *padding,
                };
                let hw = g4.col_cols();
                let rows = g4.col_rows();
                if wants(*bias) {
                    let gb = slot(grads, nodes, *bias);
                    for n in 0..b {
                        for co in 0..cout {
                            let s: f32 = g[(n * cout + co) * hw..(n * cout + co + 1) * hw].iter().sum();
                            gb[co] += s;
                        }
                    }
                }
                let x = nodes[input.0].value.data();
                let wt = nodes[weight.0].value.data();
                let mut col = vec![0.0f32; rows * hw];
                if wants(*weight) {
                    let mut gw = std::mem::take(slot(grads, nodes, *weight));
                    for n in 0..b {
                        im2col(&x[n * cin * h * w..(n + 1) * cin * h * w], g4, &mut col);
                        gemm(
                            Mat::new(&g[n * cout * hw..(n + 1) * cout * hw], cout, hw),
                            Mat::new(&col, rows, hw).t(),
                            &mut gw,
                            1.0,
                        );
                    }
                    *slot(grads, nodes, *weight) = gw;
                }
                if wants(*input) {
                    let mut gx = std::mem::take(slot(grads, nodes, *input));
                    for n in 0..b {
                        gemm(
                            Mat::new(wt, cout, rows).t(),
                            Mat::new(&g[n * cout * hw..(n + 1) * cout * hw], cout, hw),
                            &mut col,
                            0.0,
                        );
                        col2im(&col, g4, &mut gx[n * cin * h * w..(n + 1) * cin * h * w]);
                    }
                    *slot(grads, nodes, *input) = gx;
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let [b, cin, h, w] = dims(&nodes[input.0].value);
                let [_, cout, k, _] = dims(&nodes[weight.0].value);
                let [_, _, oh, ow] = dims(&nodes[i].value);
                let g4 = Window {
                    channels: cout,
                    height: oh,
                    width: ow,
                    kernel: k,
                    stride: *stride,
                    padding: *padding,
                };
                let rows = cout * k * k;
                if wants(*bias) {
                    let gb = slot(grads, nodes, *bias);
                    for n in 0..b {
                        for co in 0..cout {
                            let s: f32 = g[(n * cout + co) * oh * ow..(n * cout + co + 1) * oh * ow].iter().sum();
                            gb[co] += s;
                        }
                    }
                }
                let x = nodes[input.0].value.data();
                let wt = nodes[weight.0].value.data();
                let mut dcols = vec![0.0f32; rows * h * w];
                let (want_w, want_x) = (wants(*weight), wants(*input));
                let mut gw = if want_w {
                    std::mem::take(slot(grads, nodes, *weight))
                } else {
                    Vec::new()
                };
                let mut gx = if want_x {
                    std::mem::take(slot(grads, nodes, *input))
                } else {
                    Vec::new()
                };
                for n in 0..b {
                    im2col(&g[n * cout * oh * ow..(n + 1) * cout * oh * ow], g4, &mut dcols);
                    if want_w {
                        gemm(
                            Mat::new(&x[n * cin * h * w..(n + 1) * cin * h * w], cin, h * w),
                            Mat::new(&dcols, rows, h * w).t(),
                            &mut gw,
                            1.0,
                        );
                    }
                    if want_x {
                        gemm(
                            Mat::new(wt, cin, rows),
                            Mat::new(&dcols, rows, h * w),
                            &mut gx[n * cin * h * w..(n + 1) * cin * h * w],
                            1.0,
                        );
                    }
                }
                if want_w {
                    *slot(grads, nodes, *weight) = gw;
                }
                if want_x {
                    *slot(grads, nodes, *input) = gx;
                }
            }
            Op::Relu(x) => {
                let xv = nodes[x.0].value.data();
                let gx = slot(grads, nodes, *x);
                for ((o, &v), &gi) in gx.iter_mut().zip(xv).zip(g) {
                    if v > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = nodes[i].value.data();
                let gx = slot(grads, nodes, *x);
                for ((o, &yi), &gi) in gx.iter_mut().zip(y).zip(g) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
            Op::Unary(x, f) => {
                let xv = nodes[x.0].value.data();
                let gx = slot(grads, nodes, *x);
                for ((o, &v), &gi) in gx.iter_mut().zip(xv).zip(g) {
                    *o += gi * (f.derivative)(v);
                }
            }
            Op::MaxPool { input, argmax, .. } => {
                let gx = slot(grads, nodes, *input);
                for (&at, &gi) in argmax.iter().zip(g) {
                    gx[at as usize] += gi;
                }
            }
            Op::PixelShuffle { input, s } => {
                let [b, c, h, w] = dims(&nodes[i].value);
                let gx = slot(grads, nodes, *input);
                for (src, dst) in shuffle_index(b, c, h / s, w / s, *s) {
                    gx[src] += g[dst];
                }
            }
            Op::UpsampleLinear { input, s } => {
                let [b, c, h, w] = dims(&nodes[input.0].value);
                let (ty, tx) = (linear_taps(h, *s), linear_taps(w, *s));
                let (oh, ow) = (h * s, w * s);
                let gx = slot(grads, nodes, *input);
                for p in 0..b * c {
                    let plane = &mut gx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let gi = g[(p * oh + oy) * ow + ox];
                            plane[y0 * w + x0] += gi * (1.0 - fy) * (1.0 - fx);
                            plane[y0 * w + x1] += gi * (1.0 - fy) * fx;
                            plane[y1 * w + x0] += gi * fy * (1.0 - fx);
                            plane[y1 * w + x1] += gi * fy * fx;
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = nodes[i].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let block = nodes[v.0].value.shape()[*axis] * inner;
                    if wants(v) {
                        let gv = slot(grads, nodes, v);
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + block];
                            gv[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += block;
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    slot(grads, nodes, *a).iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
                }
                if wants(*b) {
                    slot(grads, nodes, *b)
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, gi)| *o += sign * gi);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = nodes[b.0].value.data();
                    slot(grads, nodes, *a)
                        .iter_mut()
                        .zip(g.iter().zip(bv))
                        .for_each(|(o, (gi, y))| *o += gi * y);
                }
                if wants(*b) {
                    let av = nodes[a.0].value.data();
                    slot(grads, nodes, *b)
                        .iter_mut()
                        .zip(g.iter().zip(av))
                        .for_each(|(o, (gi, x))| *o += gi * x);
                }
            }
            Op::Scale(x, f) => {
                slot(grads, nodes, *x)
                    .iter_mut()
                    .zip(g)
                    .for_each(|(o, gi)| *o += gi * f);
            }
            Op::Sum(x) => {
                let g0 = g[0];
                slot(grads, nodes, *x).iter_mut().for_each(|o| *o += g0);
            }
            Op::L1 { pred, target } => {
                let (p, t) = (nodes[pred.0].value.data(), nodes[target.0].value.data());
                let scale = g[0] / p.len() as f32;
                let sign = |a: f32, b: f32| {
                    if a > b {
                        scale
                    } else if a < b {
                        -scale
                    } else {
                        0.0
                    }
                };
                if wants(*pred) {
                    slot(grads, nodes, *pred)
                        .iter_mut()
                        .zip(p.iter().zip(t))
                        .for_each(|(o, (&a, &b))| *o += sign(a, b));
                }
                if wants(*target) {
                    slot(grads, nodes, *target)
                        .iter_mut()
                        .zip(p.iter().zip(t))
                        .for_each(|(o, (&a, &b))| *o -= sign(a, b));
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f32>>], nodes: &[Node], v: Var) -> &'a mut Vec<f32> {
    let n = nodes[v.0].value.numel();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn dims(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3]]
}

/// `(input index, output index)` pairs of a pixel shuffle producing
/// `b × c × (h·s) × (w·s)` from `b × (c·s²) × h × w`.
fn shuffle_index(b: usize, c: usize, h: usize, w: usize, s: usize) -> impl Iterator<Item = (usize, usize)> {
    let (oh, ow) = (h * s, w * s);
    (0..b).flat_map(move |n| {
        (0..c).flat_map(move |ch| {
            (0..s * s).flat_map(move |phase| {
                let (dy, dx) = (phase / s, phase % s);
                (0..h).flat_map(move |y| {
                    (0..w).map(move |x| {
                        let src = ((n * c * s * s + ch * s * s + phase) * h + y) * w + x;
                        let dst = ((n * c + ch) * oh + s * y + dy) * ow + s * x + dx;
                        (src, dst)
                    })
                })
            })
        })
    })
}
