//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Forward calls on [`Tape`] append nodes (operation + result value) in
//! execution order; [`Tape::backward`] walks the node list in reverse,
//! which is a reverse topological order because the list is append-only.
//! Gradients accumulate additively when a value feeds several consumers.
//!
//! The operation set is exactly what the pipeline needs: elementwise
//! arithmetic, a strided 2-D convolution, separable Gaussian window
//! convolution, 2x average pooling / nearest upsampling, reductions,
//! a dense layer, embedding lookup and a per-channel affine (FiLM).

use crate::error::{DuawError, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f32),
    Exp(usize),
    Ln(usize),
    Powf(usize, f32),
    Relu(usize),
    Sigmoid(usize),
    Clamp(usize, f32, f32),
    Conv2d {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Depthwise "valid" convolution with a fixed separable window.
    WindowConv {
        input: usize,
        window: Vec<f32>,
    },
    AvgPool2(usize),
    Upsample2(usize),
    Sum(usize),
    Mean(usize),
    /// Per-channel spatial mean: (C,H,W) -> (C).
    SpatialMean(usize),
    Linear {
        input: usize,
        weight: usize,
        bias: usize,
    },
    Gather {
        table: usize,
        row: usize,
    },
    /// out[c,h,w] = in[c,h,w] * (1 + scale[c]) + shift[c]
    ChannelAffine {
        input: usize,
        scale: usize,
        shift: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradient table produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Record a differentiable leaf (a parameter or attack variable).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Record a constant leaf (data, frozen weights, noise draws).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, name: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(DuawError::shape(name, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(t, Op::Add(a.0, b.0), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(t, Op::Sub(a.0, b.0), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(t, Op::Mul(a.0, b.0), ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "div")?;
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x / y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(t, Op::Div(a.0, b.0), ng))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let t = self.value(a).map(|v| v + c);
        let ng = self.needs(a.0);
        self.push(t, Op::AddScalar(a.0), ng)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f32) -> Var {
        let t = self.value(a).map(|v| v * c);
        let ng = self.needs(a.0);
        self.push(t, Op::MulScalar(a.0, c), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f32::exp);
        let ng = self.needs(a.0);
        self.push(t, Op::Exp(a.0), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f32::ln);
        let ng = self.needs(a.0);
        self.push(t, Op::Ln(a.0), ng)
    }

    /// Elementwise power with a fixed exponent; inputs must stay positive
    /// for fractional exponents (callers floor first).
    pub fn powf(&mut self, a: Var, p: f32) -> Var {
        let t = self.value(a).map(|v| v.powf(p));
        let ng = self.needs(a.0);
        self.push(t, Op::Powf(a.0, p), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.max(0.0));
        let ng = self.needs(a.0);
        self.push(t, Op::Relu(a.0), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        let ng = self.needs(a.0);
        self.push(t, Op::Sigmoid(a.0), ng)
    }

    /// Elementwise clamp; gradient is zero where the input is outside
    /// [lo, hi].
    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let t = self.value(a).map(|v| v.clamp(lo, hi));
        let ng = self.needs(a.0);
        self.push(t, Op::Clamp(a.0, lo, hi), ng)
    }

    /// 2-D convolution: input (C,H,W), kernel (O,C,k,k), square odd kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let ishape = self.value(input).shape().to_vec();
        let kshape = self.value(kernel).shape().to_vec();
        if ishape.len() != 3 {
            return Err(DuawError::InvalidArg(format!(
                "conv2d input must be (C,H,W), got {:?}",
                ishape
            )));
        }
        if kshape.len() != 4 || kshape[2] != kshape[3] {
            return Err(DuawError::InvalidArg(format!(
                "conv2d kernel must be (O,C,k,k), got {:?}",
                kshape
            )));
        }
        let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (c_out, kc, k) = (kshape[0], kshape[1], kshape[2]);
        if kc != c_in {
            return Err(DuawError::shape("conv2d kernel C_in", &[c_in], &[kc]));
        }
        if k % 2 == 0 {
            return Err(DuawError::InvalidArg(format!("conv2d kernel size {} must be odd", k)));
        }
        if stride < 1 {
            return Err(DuawError::InvalidArg("conv2d stride must be >= 1".into()));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(DuawError::InvalidArg(format!(
                "conv2d input {}x{} (pad {}) smaller than kernel {}",
                h, w, padding, k
            )));
        }
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (w + 2 * padding - k) / stride + 1;

        let out = conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            padding,
            ho,
            wo,
        );
        let t = Tensor::from_vec(vec![c_out, ho, wo], out)?;
        let ng = self.needs(input.0) || self.needs(kernel.0);
        Ok(self.push(
            t,
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                stride,
                padding,
            },
            ng,
        ))
    }

    /// Depthwise "valid" convolution with a fixed normalized window
    /// applied separably along both axes. Output shrinks by len-1 per axis.
    pub fn window_conv(&mut self, input: Var, window: &[f32]) -> Result<Var> {
        let ishape = self.value(input).shape().to_vec();
        if ishape.len() != 3 {
            return Err(DuawError::InvalidArg(format!(
                "window_conv input must be (C,H,W), got {:?}",
                ishape
            )));
        }
        let k = window.len();
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        if h < k || w < k {
            return Err(DuawError::InvalidArg(format!(
                "window_conv input {}x{} smaller than window {}",
                h, w, k
            )));
        }
        let out = window_conv_forward(self.value(input).data(), window, c, h, w);
        let t = Tensor::from_vec(vec![c, h - k + 1, w - k + 1], out)?;
        let ng = self.needs(input.0);
        Ok(self.push(
            t,
            Op::WindowConv {
                input: input.0,
                window: window.to_vec(),
            },
            ng,
        ))
    }

    /// 2x2 average pooling; H and W must be even.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let ishape = self.value(input).shape().to_vec();
        if ishape.len() != 3 {
            return Err(DuawError::InvalidArg(format!(
                "avg_pool2 input must be (C,H,W), got {:?}",
                ishape
            )));
        }
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(DuawError::InvalidArg(format!(
                "avg_pool2 requires even H and W, got {}x{}",
                h, w
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(input).data();
        let mut out = vec![0.0f32; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    let base = ch * h * w + 2 * y * w + 2 * x;
                    out[ch * ho * wo + y * wo + x] =
                        0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
                }
            }
        }
        let t = Tensor::from_vec(vec![c, ho, wo], out)?;
        let ng = self.needs(input.0);
        Ok(self.push(t, Op::AvgPool2(input.0), ng))
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let ishape = self.value(input).shape().to_vec();
        if ishape.len() != 3 {
            return Err(DuawError::InvalidArg(format!(
                "upsample2 input must be (C,H,W), got {:?}",
                ishape
            )));
        }
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (ho, wo) = (2 * h, 2 * w);
        let src = self.value(input).data();
        let mut out = vec![0.0f32; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    out[ch * ho * wo + y * wo + x] = src[ch * h * w + (y / 2) * w + x / 2];
                }
            }
        }
        let t = Tensor::from_vec(vec![c, ho, wo], out)?;
        let ng = self.needs(input.0);
        Ok(self.push(t, Op::Upsample2(input.0), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let ng = self.needs(a.0);
        self.push(Tensor::scalar(s as f32), Op::Sum(a.0), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let ng = self.needs(a.0);
        self.push(Tensor::scalar((s / n) as f32), Op::Mean(a.0), ng)
    }

    /// Per-channel spatial mean: (C,H,W) -> (C).
    pub fn spatial_mean(&mut self, a: Var) -> Result<Var> {
        let ishape = self.value(a).shape().to_vec();
        if ishape.len() != 3 {
            return Err(DuawError::InvalidArg(format!(
                "spatial_mean input must be (C,H,W), got {:?}",
                ishape
            )));
        }
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        let src = self.value(a).data();
        let mut out = vec![0.0f32; c];
        for ch in 0..c {
            let s: f64 = src[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).sum();
            out[ch] = (s / (h * w) as f64) as f32;
        }
        let t = Tensor::from_vec(vec![c], out)?;
        let ng = self.needs(a.0);
        Ok(self.push(t, Op::SpatialMean(a.0), ng))
    }

    /// Dense layer: input (n), weight (m,n), bias (m) -> (m).
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let ishape = self.value(input).shape().to_vec();
        let wshape = self.value(weight).shape().to_vec();
        let bshape = self.value(bias).shape().to_vec();
        if ishape.len() != 1 || wshape.len() != 2 || bshape.len() != 1 {
            return Err(DuawError::InvalidArg(format!(
                "linear expects (n), (m,n), (m); got {:?}, {:?}, {:?}",
                ishape, wshape, bshape
            )));
        }
        let (m, n) = (wshape[0], wshape[1]);
        if ishape[0] != n || bshape[0] != m {
            return Err(DuawError::shape("linear dims", &[m, n], &[bshape[0], ishape[0]]));
        }
        let x = self.value(input).data();
        let wd = self.value(weight).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0f32; m];
        for i in 0..m {
            let row = &wd[i * n..(i + 1) * n];
            let mut acc = 0.0f32;
            for j in 0..n {
                acc += row[j] * x[j];
            }
            out[i] = acc + bd[i];
        }
        let t = Tensor::from_vec(vec![m], out)?;
        let ng = self.needs(input.0) || self.needs(weight.0) || self.needs(bias.0);
        Ok(self.push(
            t,
            Op::Linear {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
            },
            ng,
        ))
    }

    /// Embedding lookup: table (V,d), fixed row index -> (d).
    pub fn gather(&mut self, table: Var, row: usize) -> Result<Var> {
        let tshape = self.value(table).shape().to_vec();
        if tshape.len() != 2 {
            return Err(DuawError::InvalidArg(format!(
                "gather table must be (V,d), got {:?}",
                tshape
            )));
        }
        let (v, d) = (tshape[0], tshape[1]);
        if row >= v {
            return Err(DuawError::InvalidArg(format!("gather row {} out of range {}", row, v)));
        }
        let data = self.value(table).data()[row * d..(row + 1) * d].to_vec();
        let t = Tensor::from_vec(vec![d], data)?;
        let ng = self.needs(table.0);
        Ok(self.push(t, Op::Gather { table: table.0, row }, ng))
    }

    /// FiLM-style modulation: out[c] = in[c] * (1 + scale[c]) + shift[c].
    pub fn channel_affine(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        let ishape = self.value(input).shape().to_vec();
        if ishape.len() != 3 {
            return Err(DuawError::InvalidArg(format!(
                "channel_affine input must be (C,H,W), got {:?}",
                ishape
            )));
        }
        let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
        if self.value(scale).shape() != [c] || self.value(shift).shape() != [c] {
            return Err(DuawError::shape(
                "channel_affine scale/shift",
                &[c],
                self.value(scale).shape(),
            ));
        }
        let src = self.value(input).data();
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        let mut out = vec![0.0f32; c * h * w];
        for ch in 0..c {
            let g = 1.0 + sc[ch];
            let b = sh[ch];
            for i in 0..h * w {
                out[ch * h * w + i] = src[ch * h * w + i] * g + b;
            }
        }
        let t = Tensor::from_vec(ishape, out)?;
        let ng = self.needs(input.0) || self.needs(scale.0) || self.needs(shift.0);
        Ok(self.push(
            t,
            Op::ChannelAffine {
                input: input.0,
                scale: scale.0,
                shift: shift.0,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar loss. Returns gradients for every node
    /// that participates in the loss and requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(DuawError::InvalidArg(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_parents(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_into = |grads: &mut [Option<Tensor>], idx: usize, delta: Vec<f32>, shape: &[usize]| {
            match &mut grads[idx] {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta) {
                        *a += d;
                    }
                }
                slot @ None => {
                    *slot = Some(Tensor::from_vec(shape.to_vec(), delta).expect("grad shape"));
                }
            }
        };
        let want = |this: &Tape, idx: usize| this.nodes[idx].needs_grad;

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(self, *a) {
                    add_into(grads, *a, g.data().to_vec(), self.nodes[*a].value.shape());
                }
                if want(self, *b) {
                    add_into(grads, *b, g.data().to_vec(), self.nodes[*b].value.shape());
                }
            }
            Op::Sub(a, b) => {
                if want(self, *a) {
                    add_into(grads, *a, g.data().to_vec(), self.nodes[*a].value.shape());
                }
                if want(self, *b) {
                    add_into(
                        grads,
                        *b,
                        g.data().iter().map(|v| -v).collect(),
                        self.nodes[*b].value.shape(),
                    );
                }
            }
            Op::Mul(a, b) => {
                if want(self, *a) {
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .zip(self.nodes[*b].value.data())
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    add_into(grads, *a, d, self.nodes[*a].value.shape());
                }
                if want(self, *b) {
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .zip(self.nodes[*a].value.data())
                        .map(|(gv, av)| gv * av)
                        .collect();
                    add_into(grads, *b, d, self.nodes[*b].value.shape());
                }
            }
            Op::Div(a, b) => {
                if want(self, *a) {
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .zip(self.nodes[*b].value.data())
                        .map(|(gv, bv)| gv / bv)
                        .collect();
                    add_into(grads, *a, d, self.nodes[*a].value.shape());
                }
                if want(self, *b) {
                    let av = self.nodes[*a].value.data();
                    let bv = self.nodes[*b].value.data();
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, gv)| -gv * av[j] / (bv[j] * bv[j]))
                        .collect();
                    add_into(grads, *b, d, self.nodes[*b].value.shape());
                }
            }
            Op::AddScalar(a) => {
                if want(self, *a) {
                    add_into(grads, *a, g.data().to_vec(), self.nodes[*a].value.shape());
                }
            }
            Op::MulScalar(a, c) => {
                if want(self, *a) {
                    add_into(
                        grads,
                        *a,
                        g.data().iter().map(|v| v * c).collect(),
                        self.nodes[*a].value.shape(),
                    );
                }
            }
            Op::Exp(a) => {
                if want(self, *a) {
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(gv, yv)| gv * yv)
                        .collect();
                    add_into(grads, *a, d, self.nodes[*a].value.shape());
                }
            }
            Op::Ln(a) => {
                if want(self, *a) {
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .zip(self.nodes[*a].value.data())
                        .map(|(gv, xv)| gv / xv)
                        .collect();
                    add_into(grads, *a, d, self.nodes[*a].value.shape());
                }
            }
            Op::Powf(a, p) => {
                if want(self, *a) {
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .zip(self.nodes[*a].value.data())
                        .map(|(gv, xv)| gv * p * xv.powf(p - 1.0))
                        .collect();
                    add_into(grads, *a, d, self.nodes[*a].value.shape());
                }
            }
            Op::Relu(a) => {
                if want(self, *a) {
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .zip(self.nodes[*a].value.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    add_into(grads, *a, d, self.nodes[*a].value.shape());
                }
            }
            Op::Sigmoid(a) => {
                if want(self, *a) {
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect();
                    add_into(grads, *a, d, self.nodes[*a].value.shape());
                }
            }
            Op::Clamp(a, lo, hi) => {
                if want(self, *a) {
                    let d: Vec<f32> = g
                        .data()
                        .iter()
                        .zip(self.nodes[*a].value.data())
                        .map(|(gv, xv)| if *xv >= *lo && *xv <= *hi { *gv } else { 0.0 })
                        .collect();
                    add_into(grads, *a, d, self.nodes[*a].value.shape());
                }
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let ishape = self.nodes[*input].value.shape();
                let kshape = self.nodes[*kernel].value.shape();
                let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
                let (c_out, k) = (kshape[0], kshape[2]);
                let oshape = self.nodes[i].value.shape();
                let (ho, wo) = (oshape[1], oshape[2]);
                if want(self, *input) {
                    let d = conv2d_backward_input(
                        g.data(),
                        self.nodes[*kernel].value.data(),
                        c_in,
                        h,
                        w,
                        c_out,
                        k,
                        *stride,
                        *padding,
                        ho,
                        wo,
                    );
                    add_into(grads, *input, d, ishape);
                }
                if want(self, *kernel) {
                    let d = conv2d_backward_kernel(
                        g.data(),
                        self.nodes[*input].value.data(),
                        c_in,
                        h,
                        w,
                        c_out,
                        k,
                        *stride,
                        *padding,
                        ho,
                        wo,
                    );
                    add_into(grads, *kernel, d, kshape);
                }
            }
            Op::WindowConv { input, window } => {
                if want(self, *input) {
                    let ishape = self.nodes[*input].value.shape();
                    let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
                    let d = window_conv_backward(g.data(), window, c, h, w);
                    add_into(grads, *input, d, ishape);
                }
            }
            Op::AvgPool2(a) => {
                if want(self, *a) {
                    let ishape = self.nodes[*a].value.shape();
                    let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
                    let (ho, wo) = (h / 2, w / 2);
                    let mut d = vec![0.0f32; c * h * w];
                    for ch in 0..c {
                        for y in 0..ho {
                            for x in 0..wo {
                                let gv = 0.25 * g.data()[ch * ho * wo + y * wo + x];
                                let base = ch * h * w + 2 * y * w + 2 * x;
                                d[base] += gv;
                                d[base + 1] += gv;
                                d[base + w] += gv;
                                d[base + w + 1] += gv;
                            }
                        }
                    }
                    add_into(grads, *a, d, ishape);
                }
            }
            Op::Upsample2(a) => {
                if want(self, *a) {
                    let ishape = self.nodes[*a].value.shape();
                    let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
                    let (ho, wo) = (2 * h, 2 * w);
                    let mut d = vec![0.0f32; c * h * w];
                    for ch in 0..c {
                        for y in 0..ho {
                            for x in 0..wo {
                                d[ch * h * w + (y / 2) * w + x / 2] +=
                                    g.data()[ch * ho * wo + y * wo + x];
                            }
                        }
                    }
                    add_into(grads, *a, d, ishape);
                }
            }
            Op::Sum(a) => {
                if want(self, *a) {
                    let gv = g.item();
                    let n = self.nodes[*a].value.numel();
                    add_into(grads, *a, vec![gv; n], self.nodes[*a].value.shape());
                }
            }
            Op::Mean(a) => {
                if want(self, *a) {
                    let n = self.nodes[*a].value.numel();
                    let gv = g.item() / n as f32;
                    add_into(grads, *a, vec![gv; n], self.nodes[*a].value.shape());
                }
            }
            Op::SpatialMean(a) => {
                if want(self, *a) {
                    let ishape = self.nodes[*a].value.shape();
                    let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
                    let mut d = vec![0.0f32; c * h * w];
                    for ch in 0..c {
                        let gv = g.data()[ch] / (h * w) as f32;
                        for i2 in 0..h * w {
                            d[ch * h * w + i2] = gv;
                        }
                    }
                    add_into(grads, *a, d, ishape);
                }
            }
            Op::Linear { input, weight, bias } => {
                let wshape = self.nodes[*weight].value.shape();
                let (m, n) = (wshape[0], wshape[1]);
                if want(self, *input) {
                    let wd = self.nodes[*weight].value.data();
                    let mut d = vec![0.0f32; n];
                    for r in 0..m {
                        let gv = g.data()[r];
                        for j in 0..n {
                            d[j] += gv * wd[r * n + j];
                        }
                    }
                    add_into(grads, *input, d, self.nodes[*input].value.shape());
                }
                if want(self, *weight) {
                    let x = self.nodes[*input].value.data();
                    let mut d = vec![0.0f32; m * n];
                    for r in 0..m {
                        let gv = g.data()[r];
                        for j in 0..n {
                            d[r * n + j] = gv * x[j];
                        }
                    }
                    add_into(grads, *weight, d, wshape);
                }
                if want(self, *bias) {
                    add_into(grads, *bias, g.data().to_vec(), self.nodes[*bias].value.shape());
                }
            }
            Op::Gather { table, row } => {
                if want(self, *table) {
                    let tshape = self.nodes[*table].value.shape();
                    let (v, dd) = (tshape[0], tshape[1]);
                    let mut d = vec![0.0f32; v * dd];
                    d[row * dd..(row + 1) * dd].copy_from_slice(g.data());
                    add_into(grads, *table, d, tshape);
                }
            }
            Op::ChannelAffine { input, scale, shift } => {
                let ishape = self.nodes[*input].value.shape();
                let (c, h, w) = (ishape[0], ishape[1], ishape[2]);
                let sc = self.nodes[*scale].value.data();
                if want(self, *input) {
                    let mut d = vec![0.0f32; c * h * w];
                    for ch in 0..c {
                        let gmul = 1.0 + sc[ch];
                        for i2 in 0..h * w {
                            d[ch * h * w + i2] = g.data()[ch * h * w + i2] * gmul;
                        }
                    }
                    add_into(grads, *input, d, ishape);
                }
                if want(self, *scale) {
                    let x = self.nodes[*input].value.data();
                    let mut d = vec![0.0f32; c];
                    for ch in 0..c {
                        let mut acc = 0.0f32;
                        for i2 in 0..h * w {
                            acc += g.data()[ch * h * w + i2] * x[ch * h * w + i2];
                        }
                        d[ch] = acc;
                    }
                    add_into(grads, *scale, d, self.nodes[*scale].value.shape());
                }
                if want(self, *shift) {
                    let mut d = vec![0.0f32; c];
                    for ch in 0..c {
                        let mut acc = 0.0f32;
                        for i2 in 0..h * w {
                            acc += g.data()[ch * h * w + i2];
                        }
                        d[ch] = acc;
                    }
                    add_into(grads, *shift, d, self.nodes[*shift].value.shape());
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    input: &[f32],
    kernel: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; c_out * ho * wo];
    for co in 0..c_out {
        let oplane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..c_in {
            let iplane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = kernel[((co * c_in + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let irow = &iplane[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut oplane[oy * wo..(oy + 1) * wo];
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            orow[ox] += wv * irow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input(
    gout: &[f32],
    kernel: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<f32> {
    let mut gin = vec![0.0f32; c_in * h * w];
    for co in 0..c_out {
        let gplane = &gout[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..c_in {
            let iplane = &mut gin[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = kernel[((co * c_in + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let grow = &gplane[oy * wo..(oy + 1) * wo];
                        let irow = &mut iplane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            irow[ix as usize] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }
    gin
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_kernel(
    gout: &[f32],
    input: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<f32> {
    let mut gk = vec![0.0f32; c_out * c_in * k * k];
    for co in 0..c_out {
        let gplane = &gout[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..c_in {
            let iplane = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0f32;
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let grow = &gplane[oy * wo..(oy + 1) * wo];
                        let irow = &iplane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += grow[ox] * irow[ix as usize];
                        }
                    }
                    gk[((co * c_in + ci) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    gk
}

fn window_conv_forward(input: &[f32], window: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let k = window.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0f32; c * ho * wo];
    let mut tmp = vec![0.0f32; h * wo];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        // horizontal pass
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            let trow = &mut tmp[y * wo..(y + 1) * wo];
            for x in 0..wo {
                let mut acc = 0.0f32;
                for (kx, wv) in window.iter().enumerate() {
                    acc += wv * row[x + kx];
                }
                trow[x] = acc;
            }
        }
        // vertical pass
        let oplane = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for y in 0..ho {
            for (ky, wv) in window.iter().enumerate() {
                let trow = &tmp[(y + ky) * wo..(y + ky + 1) * wo];
                let orow = &mut oplane[y * wo..(y + 1) * wo];
                for x in 0..wo {
                    orow[x] += wv * trow[x];
                }
            }
        }
    }
    out
}

fn window_conv_backward(gout: &[f32], window: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let k = window.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut gin = vec![0.0f32; c * h * w];
    let mut gtmp = vec![0.0f32; h * wo];
    for ch in 0..c {
        gtmp.iter_mut().for_each(|v| *v = 0.0);
        let gplane = &gout[ch * ho * wo..(ch + 1) * ho * wo];
        // adjoint of vertical pass
        for y in 0..ho {
            let grow = &gplane[y * wo..(y + 1) * wo];
            for (ky, wv) in window.iter().enumerate() {
                let trow = &mut gtmp[(y + ky) * wo..(y + ky + 1) * wo];
                for x in 0..wo {
                    trow[x] += wv * grow[x];
                }
            }
        }
        // adjoint of horizontal pass
        let iplane = &mut gin[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let trow = &gtmp[y * wo..(y + 1) * wo];
            let irow = &mut iplane[y * w..(y + 1) * w];
            for x in 0..wo {
                let gv = trow[x];
                if gv == 0.0 {
                    continue;
                }
                for (kx, wv) in window.iter().enumerate() {
                    irow[x + kx] += wv * gv;
                }
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_tensor, rng_from};

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(normal_tensor(&[5], &mut rng_from(1)));
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_2x() {
        let mut tape = Tape::new();
        let xt = normal_tensor(&[7], &mut rng_from(2));
        let x = tape.leaf(xt.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let grads = tape.backward(s).unwrap();
        for (g, v) in grads.wrt(x).unwrap().data().iter().zip(xt.data()) {
            assert!((g - 2.0 * v).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn gradients_accumulate_across_consumers() {
        // y = sum(x) + sum(x) => dy/dx = 2
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[4], 0.5));
        let s1 = tape.sum(x);
        let s2 = tape.sum(x);
        let y = tape.add(s1, s2).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap());
        let k = tape.constant(Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn zero_kernel_annihilates() {
        let mut tape = Tape::new();
        let x = tape.constant(normal_tensor(&[2, 4, 4], &mut rng_from(3)));
        let k = tape.constant(Tensor::zeros(&[3, 2, 3, 3]));
        let y = tape.conv2d(x, k, 1, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(tape.conv2d(x, k, 1, 1).is_err());
    }

    #[test]
    fn avg_pool_matches_block_average() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let y = tape.avg_pool2(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
    }

    #[test]
    fn avg_pool_rejects_odd_sizes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4]));
        assert!(tape.avg_pool2(x).is_err());
    }

    #[test]
    fn window_conv_of_constant_is_constant() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[1, 8, 8], 0.3));
        let win = crate::metrics::gaussian_window(5, 1.5);
        let y = tape.window_conv(x, &win).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn window_size_one_is_identity() {
        let mut tape = Tape::new();
        let xt = normal_tensor(&[1, 4, 4], &mut rng_from(5));
        let x = tape.constant(xt.clone());
        let y = tape.window_conv(x, &[1.0]).unwrap();
        assert_eq!(tape.value(y).data(), xt.data());
    }

    #[test]
    fn window_conv_rejects_small_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 4]));
        let win = crate::metrics::gaussian_window(11, 1.5);
        assert!(tape.window_conv(x, &win).is_err());
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let mut tape = Tape::new();
        let xt = normal_tensor(&[2, 4, 4], &mut rng_from(6));
        let x = tape.constant(xt.clone());
        let up = tape.upsample2(x).unwrap();
        let down = tape.avg_pool2(up).unwrap();
        for (a, b) in tape.value(down).data().iter().zip(xt.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn clamp_grad_is_zero_outside_box() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![3], vec![-0.5, 0.5, 1.5]).unwrap());
        let y = tape.clamp(x, 0.0, 1.0);
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn linear_matches_manual() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let w = tape.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.5, -1.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(vec![2], vec![0.1, 0.2]).unwrap());
        let y = tape.linear(x, w, b).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 1.1).abs() < 1e-6);
        assert!((out[1] - (0.5 - 2.0 + 0.2)).abs() < 1e-6);
    }
}
