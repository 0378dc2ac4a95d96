use std::fmt;
use std::str::FromStr;

use super::kernels::{self, ConvGeometry};
use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reductions supported by [`Tape::pool`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    /// Mean over `H x W`, producing `[C]`.
    GlobalAvg,
    /// Mean over `H x W`, producing `[C, 1, 1]`.
    ChannelAvg,
    /// Max over `H x W`, producing `[C, 1, 1]`.
    ChannelMax,
    /// Mean over channels, producing `[1, H, W]`.
    SpatialAvg,
    /// Max over channels, producing `[1, H, W]`.
    SpatialMax,
}

impl PoolKind {
    pub const ALL: [PoolKind; 5] = [
        Self::GlobalAvg,
        Self::ChannelAvg,
        Self::ChannelMax,
        Self::SpatialAvg,
        Self::SpatialMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GlobalAvg => "global-avg",
            Self::ChannelAvg => "channel-avg",
            Self::ChannelMax => "channel-max",
            Self::SpatialAvg => "spatial-avg",
            Self::SpatialMax => "spatial-max",
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown pool kind {s:?}")))
    }
}

/// Pointwise operations supported by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Relu,
    Sigmoid,
    Mul,
    Add,
    Scale(f64),
    Log1p,
}

impl Elementwise {
    pub fn arity(self) -> usize {
        match self {
            Self::Mul | Self::Add => 2,
            _ => 1,
        }
    }
}

impl FromStr for Elementwise {
    type Err = Error;

    /// Parses `relu`, `sigmoid`, `mul`, `add`, `log1p` or `scale:<c>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            "mul" => Ok(Self::Mul),
            "add" => Ok(Self::Add),
            "log1p" => Ok(Self::Log1p),
            _ => s
                .strip_prefix("scale:")
                .and_then(|c| c.parse().ok())
                .map(Self::Scale)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown elementwise op {s:?}"))),
        }
    }
}

/// Backward rule of a custom operation: receives the input values, the
/// output value and the upstream gradient, and returns one optional gradient
/// per input.
pub type CustomBackward<T> =
    Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

enum Op<T: Real> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Pool {
        input: Var,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, T),
    Log1p(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Sum(Var),
    Concat(Vec<Var>),
    ChannelGate {
        input: Var,
        gate: Var,
    },
    SpatialGate {
        input: Var,
        gate: Var,
    },
    Normalize {
        input: Var,
        std: Vec<T>,
    },
    AvgPool2(Var),
    Channels {
        input: Var,
        start: usize,
    },
    Reshape(Var),
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward<T>,
    },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::Pool { .. } => "pool",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Scale(..) => "scale",
            Op::Log1p(_) => "log1p",
            Op::Mul(..) => "mul",
            Op::Add(..) => "add",
            Op::Sum(_) => "sum",
            Op::Concat(_) => "concat",
            Op::ChannelGate { .. } => "channel-gate",
            Op::SpatialGate { .. } => "spatial-gate",
            Op::Normalize { .. } => "normalize",
            Op::AvgPool2(_) => "avg-pool2",
            Op::Channels { .. } => "channels",
            Op::Reshape(_) => "reshape",
            Op::Custom { .. } => "custom",
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of executed operations, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A tape supports exactly one backward pass.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field(
                "ops",
                &self.nodes.iter().map(|n| n.op.name()).collect::<Vec<_>>(),
            )
            .field("backward_done", &self.backward_done)
            .finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Its `requires_grad` flag is kept.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.grad = None;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if value.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        value.requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        value.grad = None;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Cross-correlation of `[C_in, H, W]` with `[C_out, C_in, kH, kW]` plus a per-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (ci, h, wd) = x.chw()?;
        let [co, wci, kh, kw] = w.shape[..] else {
            return shape_err(format!(
                "conv weight must be [C_out, C_in, kH, kW], got {:?}",
                w.shape
            ));
        };
        if wci != ci {
            return shape_err(format!(
                "conv input has {ci} channels, weight expects {wci}"
            ));
        }
        if b.shape != [co] {
            return shape_err(format!("conv bias must be [{co}], got {:?}", b.shape));
        }
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "kernel size and stride must be positive".into(),
            ));
        }
        let out_dim = |len: usize, k: usize| -> Result<usize> {
            let span = len + 2 * padding;
            if span < k || (span - k) % stride != 0 {
                return shape_err(format!(
                    "output size ({len} + 2*{padding} - {k})/{stride} + 1 is not a positive integer"
                ));
            }
            Ok((span - k) / stride + 1)
        };
        let geom = ConvGeometry {
            in_channels: ci,
            out_channels: co,
            height: h,
            width: wd,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: out_dim(h, kh)?,
            out_w: out_dim(wd, kw)?,
        };
        let out = kernels::conv2d_forward(&x.data, &w.data, &b.data, &geom);
        let value = Tensor::new([co, geom.out_h, geom.out_w], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &[input, weight, bias],
        )
    }

    /// `weight · input + bias` for `[N]` input and `[M, N]` weight.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let [m, n] = w.shape[..] else {
            return shape_err(format!("linear weight must be [M, N], got {:?}", w.shape));
        };
        if x.len() != n || x.ndim() != 1 {
            return shape_err(format!(
                "linear input {:?} does not match weight [{m}, {n}]",
                x.shape
            ));
        }
        if b.shape != [m] {
            return shape_err(format!("linear bias must be [{m}], got {:?}", b.shape));
        }
        let out: Vec<T> = (0..m)
            .map(|i| b.data[i] + kernels::dot(&w.data[i * n..(i + 1) * n], &x.data))
            .collect();
        self.push(
            Tensor::new([m], out)?,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        )
    }

    pub fn pool(&mut self, input: Var, kind: PoolKind) -> Result<Var> {
        let x = self.value(input);
        let (c, h, w) = x.chw()?;
        if x.is_empty() {
            return shape_err("cannot pool an empty tensor");
        }
        let plane = h * w;
        let mut argmax = Vec::new();
        let value = match kind {
            PoolKind::GlobalAvg | PoolKind::ChannelAvg => {
                let inv = T::one() / T::cast(plane as f64);
                let means: Vec<T> = x
                    .data
                    .chunks_exact(plane)
                    .map(|p| kernels::sum(p) * inv)
                    .collect();
                let shape = if kind == PoolKind::GlobalAvg {
                    vec![c]
                } else {
                    vec![c, 1, 1]
                };
                Tensor::new(shape, means)?
            }
            PoolKind::ChannelMax => {
                let mut maxes = Vec::with_capacity(c);
                for (ch, p) in x.data.chunks_exact(plane).enumerate() {
                    let mut best = 0;
                    for (i, &v) in p.iter().enumerate() {
                        if v > p[best] {
                            best = i;
                        }
                    }
                    argmax.push(ch * plane + best);
                    maxes.push(p[best]);
                }
                Tensor::new([c, 1, 1], maxes)?
            }
            PoolKind::SpatialAvg => {
                let mut acc = vec![T::zero(); plane];
                for p in x.data.chunks_exact(plane) {
                    for (a, &v) in acc.iter_mut().zip(p) {
                        *a += v;
                    }
                }
                let inv = T::one() / T::cast(c as f64);
                acc.iter_mut().for_each(|a| *a *= inv);
                Tensor::new([1, h, w], acc)?
            }
            PoolKind::SpatialMax => {
                let mut best: Vec<T> = x.data[..plane].to_vec();
                argmax = (0..plane).collect();
                for ch in 1..c {
                    let p = &x.data[ch * plane..(ch + 1) * plane];
                    for (i, &v) in p.iter().enumerate() {
                        if v > best[i] {
                            best[i] = v;
                            argmax[i] = ch * plane + i;
                        }
                    }
                }
                Tensor::new([1, h, w], best)?
            }
        };
        self.push(
            value,
            Op::Pool {
                input,
                kind,
                argmax,
            },
            &[input],
        )
    }

    /// Applies a pointwise operation to one or two operands.
    pub fn elementwise(&mut self, op: Elementwise, operands: &[Var]) -> Result<Var> {
        if operands.len() != op.arity() {
            return Err(Error::InvalidArgument(format!(
                "{op:?} takes {} operand(s), got {}",
                op.arity(),
                operands.len()
            )));
        }
        match op {
            Elementwise::Relu => self.relu(operands[0]),
            Elementwise::Sigmoid => self.sigmoid(operands[0]),
            Elementwise::Mul => self.mul(operands[0], operands[1]),
            Elementwise::Add => self.add(operands[0], operands[1]),
            Elementwise::Scale(c) => self.scale(operands[0], T::cast(c)),
            Elementwise::Log1p => self.log1p(operands[0]),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self
            .value(x)
            .map(|a| if a > T::zero() { a } else { T::zero() });
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let v = self.value(x).map(|a| a * c);
        self.push(v, Op::Scale(x, c), &[x])
    }

    pub fn log1p(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.ln_1p());
        self.push(v, Op::Log1p(x), &[x])
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sa != sb {
            return shape_err(format!("operands have shapes {sa:?} and {sb:?}"));
        }
        Ok(())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p * q).collect();
        let v = Tensor::new(x.shape.clone(), data)?;
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p + q).collect();
        let v = Tensor::new(x.shape.clone(), data)?;
        self.push(v, Op::Add(a, b), &[a, b])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = kernels::sum(&self.value(x).data);
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return shape_err("mean of an empty tensor");
        }
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::cast(n as f64))
    }

    /// Concatenates `[C_i, H, W]` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        for t in &tensors {
            t.chw()?;
        }
        let v = Tensor::stack_channels(&tensors)?;
        self.push(v, Op::Concat(parts.to_vec()), parts)
    }

    /// `[C, H, W] ⊙ [C, 1, 1]` with the gate broadcast over space.
    pub fn channel_gate(&mut self, input: Var, gate: Var) -> Result<Var> {
        let (x, g) = (self.value(input), self.value(gate));
        let (c, h, w) = x.chw()?;
        if g.shape != [c, 1, 1] {
            return shape_err(format!(
                "channel gate must be [{c}, 1, 1], got {:?}",
                g.shape
            ));
        }
        let plane = h * w;
        let mut data = x.data.clone();
        for (ch, p) in data.chunks_exact_mut(plane).enumerate() {
            let s = g.data[ch];
            p.iter_mut().for_each(|v| *v *= s);
        }
        let v = Tensor::new([c, h, w], data)?;
        self.push(v, Op::ChannelGate { input, gate }, &[input, gate])
    }

    /// `[C, H, W] ⊙ [1, H, W]` with the gate broadcast over channels.
    pub fn spatial_gate(&mut self, input: Var, gate: Var) -> Result<Var> {
        let (x, g) = (self.value(input), self.value(gate));
        let (c, h, w) = x.chw()?;
        if g.shape != [1, h, w] {
            return shape_err(format!(
                "spatial gate must be [1, {h}, {w}], got {:?}",
                g.shape
            ));
        }
        let mut data = x.data.clone();
        for p in data.chunks_exact_mut(h * w) {
            for (v, &s) in p.iter_mut().zip(&g.data) {
                *v *= s;
            }
        }
        let v = Tensor::new([c, h, w], data)?;
        self.push(v, Op::SpatialGate { input, gate }, &[input, gate])
    }

    /// Per-channel `(x - mean[c]) / std[c]`.
    pub fn normalize_channels(&mut self, input: Var, mean: &[T], std: &[T]) -> Result<Var> {
        let x = self.value(input);
        let (c, h, w) = x.chw()?;
        if mean.len() != c || std.len() != c {
            return shape_err(format!(
                "normalization statistics for {} channels, input has {c}",
                mean.len()
            ));
        }
        let mut data = x.data.clone();
        for (ch, p) in data.chunks_exact_mut(h * w).enumerate() {
            p.iter_mut().for_each(|v| *v = (*v - mean[ch]) / std[ch]);
        }
        let v = Tensor::new([c, h, w], data)?;
        self.push(
            v,
            Op::Normalize {
                input,
                std: std.to_vec(),
            },
            &[input],
        )
    }

    /// Non-overlapping 2x2 mean pooling.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (c, h, w) = x.chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("2x2 pooling needs even spatial size, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::cast(0.25);
        let mut out = Vec::with_capacity(c * oh * ow);
        for p in x.data.chunks_exact(h * w) {
            for y in 0..oh {
                let r0 = &p[2 * y * w..(2 * y + 1) * w];
                let r1 = &p[(2 * y + 1) * w..(2 * y + 2) * w];
                for xx in 0..ow {
                    out.push((r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]) * quarter);
                }
            }
        }
        let v = Tensor::new([c, oh, ow], out)?;
        self.push(v, Op::AvgPool2(input), &[input])
    }

    /// Channels `start..start + count` of a `[C, H, W]` tensor.
    pub fn channels(&mut self, input: Var, start: usize, count: usize) -> Result<Var> {
        let x = self.value(input);
        let (c, h, w) = x.chw()?;
        if count == 0 || start + count > c {
            return shape_err(format!(
                "channel range {start}..{} out of bounds for {c} channels",
                start + count
            ));
        }
        let plane = h * w;
        let v = Tensor::new(
            [count, h, w],
            x.data[start * plane..(start + count) * plane].to_vec(),
        )?;
        self.push(v, Op::Channels { input, start }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let v = self
            .value(input)
            .clone()
            .with_requires_grad(false)
            .reshape(shape.to_vec())?;
        self.push(v, Op::Reshape(input), &[input])
    }

    /// Hash of every relu sign and max-pool winner on the tape. Two
    /// evaluations with equal patterns lie in the same piecewise-smooth region.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                &Op::Relu(x) => self
                    .value(x)
                    .data
                    .iter()
                    .for_each(|&v| eat(u64::from(v > T::zero()))),
                Op::Pool { argmax, .. } => argmax.iter().for_each(|&i| eat(i as u64)),
                _ => {}
            }
        }
        h
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom<F>(&mut self, inputs: &[Var], output: Tensor<T>, backward: F) -> Result<Var>
    where
        F: Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward: Box::new(backward),
            },
            inputs,
        )
    }

    /// Populates the gradient of the scalar `loss` on every reachable tensor
    /// that requires one. A tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                root.shape
            )));
        }
        self.backward_done = true;
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            self.nodes[i].value.grad = Some(g);
        }
        Ok(())
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let value = &self.nodes[v.0].value;
        if !value.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); value.len()]))
    }

    fn add_into(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: &[T]) {
        if let Some(s) = self.slot(grads, v) {
            s.iter_mut().zip(contrib).for_each(|(a, &b)| *a += b);
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                weight,
                bias,
                ref geom,
            } => {
                let need = [input, weight, bias].map(|v| self.requires_grad(v));
                let r = kernels::conv2d_backward(
                    &self.value(input).data,
                    &self.value(weight).data,
                    g,
                    geom,
                    need,
                );
                for (v, gr) in [(input, r.input), (weight, r.weight), (bias, r.bias)] {
                    if let Some(gr) = gr {
                        self.add_into(grads, v, &gr);
                    }
                }
            }
            &Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = &self.value(input).data;
                let w = &self.value(weight).data;
                let n = x.len();
                if let Some(s) = self.slot(grads, input) {
                    for (m, &gm) in g.iter().enumerate() {
                        kernels::axpy(s, gm, &w[m * n..(m + 1) * n]);
                    }
                }
                if let Some(s) = self.slot(grads, weight) {
                    for (m, &gm) in g.iter().enumerate() {
                        kernels::axpy(&mut s[m * n..(m + 1) * n], gm, x);
                    }
                }
                self.add_into(grads, bias, g);
            }
            &Op::Pool {
                input,
                kind,
                ref argmax,
            } => {
                let x = self.value(input);
                let (c, h, w) = x.chw()?;
                let plane = h * w;
                let Some(s) = self.slot(grads, input) else {
                    return Ok(());
                };
                match kind {
                    PoolKind::GlobalAvg | PoolKind::ChannelAvg => {
                        let inv = T::one() / T::cast(plane as f64);
                        for (ch, p) in s.chunks_exact_mut(plane).enumerate() {
                            let d = g[ch] * inv;
                            p.iter_mut().for_each(|v| *v += d);
                        }
                    }
                    PoolKind::SpatialAvg => {
                        let inv = T::one() / T::cast(c as f64);
                        for p in s.chunks_exact_mut(plane) {
                            for (v, &gp) in p.iter_mut().zip(g) {
                                *v += gp * inv;
                            }
                        }
                    }
                    PoolKind::ChannelMax | PoolKind::SpatialMax => {
                        for (&idx, &gp) in argmax.iter().zip(g) {
                            s[idx] += gp;
                        }
                    }
                }
            }
            &Op::Relu(x) => {
                let xv = &self.value(x).data;
                if let Some(s) = self.slot(grads, x) {
                    for ((a, &gv), &v) in s.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *a += gv;
                        }
                    }
                }
            }
            &Op::Sigmoid(x) => {
                let y = &node.value.data;
                if let Some(s) = self.slot(grads, x) {
                    for ((a, &gv), &yv) in s.iter_mut().zip(g).zip(y) {
                        *a += gv * yv * (T::one() - yv);
                    }
                }
            }
            &Op::Scale(x, c) => {
                if let Some(s) = self.slot(grads, x) {
                    kernels::axpy(s, c, g);
                }
            }
            &Op::Log1p(x) => {
                let xv = &self.value(x).data;
                if let Some(s) = self.slot(grads, x) {
                    for ((a, &gv), &v) in s.iter_mut().zip(g).zip(xv) {
                        *a += gv / (T::one() + v);
                    }
                }
            }
            &Op::Mul(a, b) => {
                let bv = &self.value(b).data;
                if let Some(s) = self.slot(grads, a) {
                    for ((t, &gv), &o) in s.iter_mut().zip(g).zip(bv) {
                        *t += gv * o;
                    }
                }
                let av = &self.value(a).data;
                if let Some(s) = self.slot(grads, b) {
                    for ((t, &gv), &o) in s.iter_mut().zip(g).zip(av) {
                        *t += gv * o;
                    }
                }
            }
            &Op::Add(a, b) => {
                self.add_into(grads, a, g);
                self.add_into(grads, b, g);
            }
            &Op::Sum(x) => {
                if let Some(s) = self.slot(grads, x) {
                    s.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.add_into(grads, p, &g[offset..offset + n]);
                    offset += n;
                }
            }
            &Op::ChannelGate { input, gate } => {
                let x = self.value(input);
                let gt = &self.value(gate).data;
                let plane = x.len() / gt.len();
                if let Some(s) = self.slot(grads, input) {
                    for (ch, (p, gp)) in s
                        .chunks_exact_mut(plane)
                        .zip(g.chunks_exact(plane))
                        .enumerate()
                    {
                        kernels::axpy(p, gt[ch], gp);
                    }
                }
                if let Some(s) = self.slot(grads, gate) {
                    for (ch, (xp, gp)) in x
                        .data
                        .chunks_exact(plane)
                        .zip(g.chunks_exact(plane))
                        .enumerate()
                    {
                        s[ch] += kernels::dot(xp, gp);
                    }
                }
            }
            &Op::SpatialGate { input, gate } => {
                let x = self.value(input);
                let gt = &self.value(gate).data;
                let plane = gt.len();
                if let Some(s) = self.slot(grads, input) {
                    for (p, gp) in s.chunks_exact_mut(plane).zip(g.chunks_exact(plane)) {
                        for ((a, &gv), &m) in p.iter_mut().zip(gp).zip(gt) {
                            *a += gv * m;
                        }
                    }
                }
                if let Some(s) = self.slot(grads, gate) {
                    for (xp, gp) in x.data.chunks_exact(plane).zip(g.chunks_exact(plane)) {
                        for ((a, &gv), &xv) in s.iter_mut().zip(gp).zip(xp) {
                            *a += gv * xv;
                        }
                    }
                }
            }
            Op::Normalize { input, std } => {
                let plane = g.len() / std.len();
                if let Some(s) = self.slot(grads, *input) {
                    for (ch, (p, gp)) in s
                        .chunks_exact_mut(plane)
                        .zip(g.chunks_exact(plane))
                        .enumerate()
                    {
                        let inv = T::one() / std[ch];
                        kernels::axpy(p, inv, gp);
                    }
                }
            }
            &Op::AvgPool2(x) => {
                let (_, h, w) = self.value(x).chw()?;
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::cast(0.25);
                if let Some(s) = self.slot(grads, x) {
                    for (p, gp) in s.chunks_exact_mut(h * w).zip(g.chunks_exact(oh * ow)) {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let d = gp[y * ow + xx] * quarter;
                                p[2 * y * w + 2 * xx] += d;
                                p[2 * y * w + 2 * xx + 1] += d;
                                p[(2 * y + 1) * w + 2 * xx] += d;
                                p[(2 * y + 1) * w + 2 * xx + 1] += d;
                            }
                        }
                    }
                }
            }
            &Op::Channels { input, start } => {
                let x = self.value(input);
                let plane = x.len() / x.shape[0];
                if let Some(s) = self.slot(grads, input) {
                    let off = start * plane;
                    s[off..off + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, &b)| *a += b);
                }
            }
            &Op::Reshape(x) => self.add_into(grads, x, g),
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let contribs = backward(&values, &node.value, g);
                if contribs.len() != inputs.len() {
                    return Err(Error::Graph(format!(
                        "custom backward returned {} gradients for {} inputs",
                        contribs.len(),
                        inputs.len()
                    )));
                }
                for (&v, c) in inputs.iter().zip(contribs) {
                    if let Some(c) = c {
                        if c.len() != self.value(v).len() {
                            return Err(Error::Graph(
                                "custom backward returned a mis-sized gradient".into(),
                            ));
                        }
                        self.add_into(grads, v, &c);
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(t(&[1, 1, 1, 1], &[2.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);
        assert_eq!(tape.value(y).shape(), &[1, 2, 2]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = tape.constant(t(&[1, 4, 5], &data));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = tape.constant(t(&[1, 1, 3, 3], &k));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn kernel_larger_than_input_uses_centre_tap() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 1, 1], &[3.0, -2.0]).with_requires_grad(true));
        let k: Vec<f64> = (0..98).map(|i| i as f64).collect();
        let w = tape.leaf(t(&[1, 2, 7, 7], &k).with_requires_grad(true));
        let b = tape.constant(t(&[1], &[0.5]));
        let y = tape.conv2d(x, w, b, 1, 3).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5 + 3.0 * 24.0 - 2.0 * 73.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[24.0, 73.0]);
        let gw = tape.grad(w).unwrap();
        assert_eq!((gw[24], gw[73]), (3.0, -2.0));
        assert_eq!(gw.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([2, 5, 5]));
        let w = tape.constant(Tensor::zeros([1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros([1]));
        assert!(matches!(tape.conv2d(x, w, b, 1, 0), Err(Error::Shape(_))));
        let w = tape.constant(Tensor::zeros([1, 2, 2, 2]));
        // (5 - 2) / 2 is not an integer
        assert!(matches!(tape.conv2d(x, w, b, 2, 0), Err(Error::Shape(_))));
        assert!(tape.conv2d(x, w, b, 1, 0).is_ok());
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let eye = tape.constant(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let zero = tape.constant(Tensor::zeros([3]));
        let y = tape.linear(x, eye, zero).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);

        let w = tape.constant(Tensor::zeros([1, 3]));
        let b = tape.constant(t(&[1], &[5.0]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0]);

        let bad = tape.constant(Tensor::zeros([2, 2]));
        assert!(tape.linear(x, bad, b).is_err());
    }

    #[test]
    fn pooling_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.pool(x, PoolKind::GlobalAvg).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
        assert_eq!(tape.value(y).shape(), &[1]);

        let two = tape.constant(t(&[2, 2, 2], &[1.0, 1.0, 1.0, 1.0, 3.0, 3.0, 3.0, 3.0]));
        let m = tape.pool(two, PoolKind::SpatialMax).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0; 4]);
        assert_eq!(tape.value(m).shape(), &[1, 2, 2]);
        assert!("median".parse::<PoolKind>().is_err());
        assert_eq!(
            "channel-max".parse::<PoolKind>().unwrap(),
            PoolKind::ChannelMax
        );
    }

    #[test]
    fn max_ties_route_to_first_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2, 2], &[5.0, 5.0, 1.0, 5.0]).with_requires_grad(true));
        let m = tape.pool(x, PoolKind::ChannelMax).unwrap();
        let s = tape.sum(m).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[-1.0, 2.5]));
        let r = tape.elementwise(Elementwise::Relu, &[x]).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.5]);
        let z = tape.constant(t(&[1], &[0.0]));
        let s = tape.elementwise("sigmoid".parse().unwrap(), &[z]).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        let sc = tape.elementwise("scale:2".parse().unwrap(), &[x]).unwrap();
        assert_eq!(tape.value(sc).data(), &[-2.0, 5.0]);
        assert!(tape.elementwise(Elementwise::Mul, &[x]).is_err());
        assert!(tape.mul(x, z).is_err());
        assert!("tanh".parse::<Elementwise>().is_err());
    }

    #[test]
    fn log1p_of_minus_one_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1], &[-1.0]));
        assert!(matches!(tape.log1p(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[1, 3], &[0.0, 0.0, 0.0]).with_requires_grad(true));
        let x = tape.constant(t(&[3], &[1.0, -2.0, 4.0]));
        let b = tape.constant(Tensor::zeros([1]));
        let z = tape.linear(x, w, b).unwrap();
        let p = tape.sigmoid(z).unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[0.25, -0.5, 1.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let y = tape.scale(x, 3.0).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Graph(_))));
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 3.0]);
        assert!(matches!(tape.backward(s), Err(Error::Graph(_))));
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.leaf(t(&[2], &[3.0, 4.0]).with_requires_grad(true));
        let p = tape.mul(a, b).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(a).is_none());
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn gates_broadcast() {
        let mut tape = Tape::new();
        let f = tape.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let cg = tape.constant(t(&[2, 1, 1], &[10.0, 100.0]));
        let y = tape.channel_gate(f, cg).unwrap();
        assert_eq!(tape.value(y).data(), &[10.0, 20.0, 300.0, 400.0]);
        let sg = tape.constant(t(&[1, 1, 2], &[0.5, 2.0]));
        let z = tape.spatial_gate(f, sg).unwrap();
        assert_eq!(tape.value(z).data(), &[0.5, 4.0, 1.5, 8.0]);
        assert!(tape.channel_gate(f, sg).is_err());
    }
}
