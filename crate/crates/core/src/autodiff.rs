//! Minimal reverse-mode differentiation over small dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value. [`Graph::backward`] walks the nodes in reverse creation
//! order (a valid topological order) and accumulates gradients with the
//! chain rule. Feature maps are `[C, H, W]`; convolution weights are
//! `[O, C, k, k]`; scalars are `[1]`.

use crate::error::{Error, Result};

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(n, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        match self.shape.as_slice() {
            [c, h, w] => (*c, *h, *w),
            s => panic!("expected a [C, H, W] tensor, got {s:?}"),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
enum LogArg {
    /// `-log(x)`
    Direct,
    /// `-log(1 - x)`
    Complement,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    AvgPool { x: Var, kh: usize, kw: usize },
    Reverse { x: Var, factor: f64 },
    Sum(Var),
    SqErr { x: Var, target: Vec<f64> },
    NegLog { x: Var, weights: Vec<f64>, arg: LogArg, scale: f64 },
    Add(Var, Var),
    Scale(Var, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Probability clamp applied inside log terms.
pub const PROB_EPS: f64 = 1e-7;

/// Tape of one forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
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

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn chw_of(&self, v: Var) -> Result<(usize, usize, usize)> {
        match self.value(v).shape() {
            [c, h, w] => Ok((*c, *h, *w)),
            s => Err(Error::shape("[C, H, W]", s)),
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Stride-1 convolution with zero "same" padding and an odd square
    /// kernel; `x: [C, H, W]`, `w: [O, C, k, k]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (c, h, wd) = self.chw_of(x)?;
        let ws = self.value(w).shape().to_vec();
        let [o, wc, k, k2] = ws[..] else {
            return Err(Error::shape("[O, C, k, k]", ws));
        };
        if wc != c || k != k2 || k % 2 == 0 || self.value(b).shape() != [o] {
            return Err(Error::shape(
                format!("weight [_, {c}, k, k] odd k, bias [{o}]"),
                (ws.clone(), self.value(b).shape().to_vec()),
            ));
        }
        let out = conv_forward(self.value(x), self.value(w), self.value(b), o, k);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        debug_assert_eq!(out.chw(), (o, h, wd));
        Ok(self.push(out, Op::Conv2d { x, w, b }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let out = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|v| f(*v)).collect(),
        };
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// Identity forward; backward multiplies the upstream gradient by `-factor`.
    pub fn reverse_gradient(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| v, Op::Reverse { x, factor })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    /// Non-overlapping `kh x kw` average pooling of a `[C, H, W]` tensor.
    pub fn avg_pool(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        let (c, h, w) = self.chw_of(x)?;
        if kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0 {
            return Err(Error::InvalidArgument(format!(
                "{h}x{w} map not divisible into {kh}x{kw} pools"
            )));
        }
        let (oh, ow) = (h / kh, w / kw);
        let src = &self.value(x).data;
        let mut out = vec![0.0; c * oh * ow];
        let inv = 1.0 / (kh * kw) as f64;
        for ch in 0..c {
            for y in 0..h {
                let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
                let orow = &mut out[(ch * oh + y / kh) * ow..(ch * oh + y / kh + 1) * ow];
                for (x, v) in row.iter().enumerate() {
                    orow[x / kw] += v * inv;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                shape: vec![c, oh, ow],
                data: out,
            },
            Op::AvgPool { x, kh, kw },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `sum((x - target)^2)` against a constant target.
    pub fn sq_err(&mut self, x: Var, target: &[f64]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != target.len() {
            return Err(Error::shape(v.len(), target.len()));
        }
        let s = v
            .data
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::SqErr {
                x,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    fn neg_log(&mut self, x: Var, weights: &[f64], arg: LogArg, scale: f64) -> Result<Var> {
        let v = self.value(x);
        if v.len() != weights.len() {
            return Err(Error::shape(v.len(), weights.len()));
        }
        let s: f64 = v
            .data
            .iter()
            .zip(weights)
            .map(|(p, w)| {
                let q = match arg {
                    LogArg::Direct => *p,
                    LogArg::Complement => 1.0 - p,
                };
                -w * q.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
            })
            .sum();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(scale * s),
            Op::NegLog {
                x,
                weights: weights.to_vec(),
                arg,
                scale,
            },
            rg,
        ))
    }

    /// `scale * sum(-w * log(clamp(x)))`.
    pub fn neg_log_weighted(&mut self, x: Var, weights: &[f64], scale: f64) -> Result<Var> {
        self.neg_log(x, weights, LogArg::Direct, scale)
    }

    /// `scale * sum(-w * log(clamp(1 - x)))`.
    pub fn neg_log1m_weighted(&mut self, x: Var, weights: &[f64], scale: f64) -> Result<Var> {
        self.neg_log(x, weights, LogArg::Complement, scale)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return Err(Error::shape(va.shape.clone(), vb.shape.clone()));
        }
        let out = Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Sum of several scalars (or equally shaped tensors).
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_all of nothing".into()))?;
        let mut acc = *first;
        for t in rest {
            acc = self.add(acc, *t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar `loss` seeded with gradient 1.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: self.nodes[loss.0].value.shape.clone(),
            data: vec![1.0; self.nodes[loss.0].value.len()],
        });
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// `f(upstream, input)` per element.
    fn elementwise(&self, x: Var, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        g.clone().map_with(&self.nodes[x.0].value, f)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let (gx, gw, gb) = conv_backward(
                    &self.nodes[x.0].value,
                    &self.nodes[w.0].value,
                    g,
                    self.rg(*x),
                    self.rg(*w) || self.rg(*b),
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                if let Some((gw, gb)) = gw.zip(gb) {
                    self.accumulate(grads, *w, gw);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Relu(x) => {
                let t = self.elementwise(*x, g, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *x, t);
            }
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                let t = self.elementwise(*x, g, |gi, xi| if xi > 0.0 { gi } else { s * gi });
                self.accumulate(grads, *x, t);
            }
            Op::Tanh(x) => {
                let t = g.clone().map_with(&node.value, |gi, yi| gi * (1.0 - yi * yi));
                self.accumulate(grads, *x, t);
            }
            Op::Sigmoid(x) => {
                let t = g.clone().map_with(&node.value, |gi, yi| gi * yi * (1.0 - yi));
                self.accumulate(grads, *x, t);
            }
            Op::Softplus(x) => {
                let t = self.elementwise(*x, g, |gi, xi| gi * sigmoid(xi));
                self.accumulate(grads, *x, t);
            }
            Op::AvgPool { x, kh, kw } => {
                let (c, h, w) = self.nodes[x.0].value.chw();
                let (oh, ow) = (h / kh, w / kw);
                let inv = 1.0 / (kh * kw) as f64;
                let mut out = Tensor::zeros(&[c, h, w]);
                for ch in 0..c {
                    for y in 0..h {
                        let grow = &g.data[(ch * oh + y / kh) * ow..(ch * oh + y / kh + 1) * ow];
                        let row = &mut out.data[(ch * h + y) * w..(ch * h + y + 1) * w];
                        for (x, v) in row.iter_mut().enumerate() {
                            *v = grow[x / kw] * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, out);
            }
            Op::Reverse { x, factor } => {
                let f = -factor;
                let t = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().map(|v| f * v).collect(),
                };
                self.accumulate(grads, *x, t);
            }
            Op::Scale(x, s) => {
                let t = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().map(|v| s * v).collect(),
                };
                self.accumulate(grads, *x, t);
            }
            Op::Sum(x) => {
                let s = self.nodes[x.0].value.shape.clone();
                let n = self.nodes[x.0].value.len();
                self.accumulate(
                    grads,
                    *x,
                    Tensor {
                        shape: s,
                        data: vec![g.item(); n],
                    },
                );
            }
            Op::SqErr { x, target } => {
                let gi = g.item();
                let xv = &self.nodes[x.0].value;
                let t = Tensor {
                    shape: xv.shape.clone(),
                    data: xv
                        .data
                        .iter()
                        .zip(target)
                        .map(|(a, b)| 2.0 * gi * (a - b))
                        .collect(),
                };
                self.accumulate(grads, *x, t);
            }
            Op::NegLog {
                x,
                weights,
                arg,
                scale,
            } => {
                let gi = g.item() * scale;
                let xv = &self.nodes[x.0].value;
                let t = Tensor {
                    shape: xv.shape.clone(),
                    data: xv
                        .data
                        .iter()
                        .zip(weights)
                        .map(|(p, w)| {
                            let (q, sign) = match arg {
                                LogArg::Direct => (*p, 1.0),
                                LogArg::Complement => (1.0 - p, -1.0),
                            };
                            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&q) {
                                0.0
                            } else {
                                -gi * w * sign / q
                            }
                        })
                        .collect(),
                };
                self.accumulate(grads, *x, t);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
        }
    }
}

impl Tensor {
    fn map_with(mut self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = f(*a, *b);
        }
        self
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, o: usize, k: usize) -> Tensor {
    let (c, h, wd) = x.chw();
    let p = (k / 2) as isize;
    let mut out = vec![0.0; o * h * wd];
    for oc in 0..o {
        let plane = &mut out[oc * h * wd..(oc + 1) * h * wd];
        plane.fill(b.data[oc]);
        for ic in 0..c {
            let src = &x.data[ic * h * wd..(ic + 1) * h * wd];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = valid_range(wd, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = w.data[((oc * c + ic) * k + ky) * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let srow = &src[sy * wd..(sy + 1) * wd];
                        let orow = &mut plane[y * wd..(y + 1) * wd];
                        let sx0 = (x0 as isize + dx) as usize;
                        for (ov, sv) in orow[x0..x1].iter_mut().zip(&srow[sx0..sx0 + (x1 - x0)]) {
                            *ov += wv * sv;
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![o, h, wd],
        data: out,
    }
}

type ConvGrads = (Option<Tensor>, Option<Tensor>, Option<Tensor>);

fn conv_backward(x: &Tensor, w: &Tensor, g: &Tensor, need_x: bool, need_w: bool) -> ConvGrads {
    let (c, h, wd) = x.chw();
    let o = w.shape[0];
    let k = w.shape[2];
    let p = (k / 2) as isize;
    let mut gx = need_x.then(|| vec![0.0; c * h * wd]);
    let mut gw = need_w.then(|| vec![0.0; w.len()]);
    for oc in 0..o {
        let gplane = &g.data[oc * h * wd..(oc + 1) * h * wd];
        for ic in 0..c {
            let src = &x.data[ic * h * wd..(ic + 1) * h * wd];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = valid_range(wd, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let widx = ((oc * c + ic) * k + ky) * k + kx;
                    let wv = w.data[widx];
                    let sx0 = (x0 as isize + dx) as usize;
                    let len = x1 - x0;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &gplane[y * wd + x0..y * wd + x1];
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[ic * h * wd + sy * wd + sx0..ic * h * wd + sy * wd + sx0 + len];
                            for (d, gv) in dst.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                        if gw.is_some() {
                            let srow = &src[sy * wd + sx0..sy * wd + sx0 + len];
                            acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    let gb = need_w.then(|| {
        let data = (0..o)
            .map(|oc| g.data[oc * h * wd..(oc + 1) * h * wd].iter().sum())
            .collect();
        Tensor {
            shape: vec![o],
            data,
        }
    });
    (
        gx.map(|data| Tensor {
            shape: vec![c, h, wd],
            data,
        }),
        gw.map(|data| Tensor {
            shape: w.shape.clone(),
            data,
        }),
        gb,
    )
}

/// Output rows `y` for which `y + d` stays inside `0..n`.
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo.min(n), hi.min(n))
}
