//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order, so node ids are
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse and accumulates `dLoss/dLeaf` into every leaf created with
//! [`Graph::leaf`]. Calling it again without [`Graph::zero_grad`] adds to the
//! existing leaf gradients.

use std::fmt;
use std::sync::Arc;

use crate::conv::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::{first_mismatch, Tensor, EPS_RECIP};

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Reciprocal,
}

/// User-supplied operation with a hand-written backward rule.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;

    /// Returns one gradient buffer per input, each shaped like that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

#[derive(Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    Relu(Var),
    Binary {
        kind: ElementwiseKind,
        a: Var,
        b: Var,
    },
    Reciprocal(Var),
    Affine {
        x: Var,
        scale: f64,
    },
    Concat(Vec<Var>),
    RepeatChannels(Var),
    Mse(Var, Var),
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        op: Arc<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Binary { kind, .. } => match kind {
                ElementwiseKind::Add => "add",
                ElementwiseKind::Sub => "sub",
                ElementwiseKind::Mul => "mul",
                ElementwiseKind::Reciprocal => "reciprocal",
            },
            Op::Reciprocal(_) => "reciprocal",
            Op::Affine { .. } => "affine",
            Op::Concat(_) => "concat_channels",
            Op::RepeatChannels(_) => "repeat_channels",
            Op::Mse(..) => "reduce_mse",
            Op::Sum(_) => "sum",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    /// Set on leaves that collect gradients.
    requires_grad: bool,
    /// True when some upstream leaf requires a gradient.
    tracked: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(
                self.nodes
                    .iter()
                    .map(|n| format!("{} {:?}", n.op.name(), n.value.shape())),
            )
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that accumulates gradients during [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Copies the value of `x` into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn value(&self, x: Var) -> &Tensor {
        &self.nodes[x.0].value
    }

    /// Accumulated gradient of a leaf created with [`Graph::leaf`].
    pub fn grad(&self, x: Var) -> Option<Tensor> {
        let node = &self.nodes[x.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Sign pattern of every relu input, in tape order.
    ///
    /// Two evaluations with equal patterns lie on the same linear piece of
    /// every relu in the graph.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                pattern.extend(self.nodes[x.0].value.data().iter().map(|&v| v > 0.0));
            }
        }
        pattern
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            tracked: requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, inputs: &[Var], value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::domain(
                "graph",
                format!("{} produced a non-finite value", op.name()),
            ));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value,
            op,
            requires_grad: false,
            tracked,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Cross-correlation of a `C_in x H x W` input with a
    /// `C_out x C_in x k x k` kernel, zero padded.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geometry = ConvGeometry::new(
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).shape(),
            stride,
            padding,
        )?;
        let out = conv::conv2d_forward(
            &geometry,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let shape = vec![
            geometry.out_channels,
            geometry.out_height(),
            geometry.out_width(),
        ];
        self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            },
            &[input, kernel, bias],
            Tensor::from_parts(shape, out),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), &[x], value)
    }

    /// Binary elementwise ops accept equal shapes or a one-element operand
    /// on either side; `Reciprocal` is unary and ignores `b`.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        if kind == ElementwiseKind::Reciprocal {
            return self.reciprocal(a);
        }
        let b = b.ok_or_else(|| Error::domain("elementwise", "binary op needs two operands"))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match kind {
            ElementwiseKind::Add => x + y,
            ElementwiseKind::Sub => x - y,
            ElementwiseKind::Mul => x * y,
            ElementwiseKind::Reciprocal => unreachable!(),
        };
        let value = if ta.shape() == tb.shape() {
            ta.zip_map(tb, f)?
        } else if tb.is_scalar() {
            let s = tb.data()[0];
            ta.map(|x| f(x, s))
        } else if ta.is_scalar() {
            let s = ta.data()[0];
            tb.map(|y| f(s, y))
        } else {
            return Err(Error::shape(
                "elementwise",
                first_mismatch(ta.shape(), tb.shape()),
                format!("{:?} or a scalar", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        };
        self.push(Op::Binary { kind, a, b }, &[a, b], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Mul, a, Some(b))
    }

    /// `1 / x`; every element must satisfy `|x| >= EPS_RECIP`.
    pub fn reciprocal(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(i) = t.data().iter().position(|v| v.abs() < EPS_RECIP) {
            return Err(Error::domain(
                "reciprocal",
                format!(
                    "|x| = {} at flat index {i} is below {EPS_RECIP}",
                    t.data()[i].abs()
                ),
            ));
        }
        let value = t.map(|v| 1.0 / v);
        self.push(Op::Reciprocal(x), &[x], value)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(Op::Affine { x, scale }, &[x], value)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat_channels", "no parts given"))?;
        let (_, h, w) = self.value(*first).chw()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            let t = self.value(*p);
            let (c, ph, pw) = t.chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("spatial extent of part {i}"),
                    format!("{h}x{w}"),
                    format!("{ph}x{pw}"),
                ));
            }
            channels += c;
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_parts(vec![channels, h, w], data);
        self.push(Op::Concat(parts.to_vec()), parts, value)
    }

    /// Broadcasts a single-channel image over `channels` channels.
    pub fn repeat_channels(&mut self, x: Var, channels: usize) -> Result<Var> {
        let value = self.value(x).repeat_channels(channels)?;
        self.push(Op::RepeatChannels(x), &[x], value)
    }

    /// Mean of squared differences, as a one-element tensor.
    pub fn reduce_mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.expect_shape("reduce_mse", t)?;
        let mse = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.numel() as f64;
        self.push(Op::Mse(pred, target), &[pred, target], Tensor::scalar(mse))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), &[x], Tensor::scalar(s))
    }

    /// Records an operation whose forward value is computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Arc<dyn CustomOp>) -> Result<Var> {
        self.push(
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
            value,
        )
    }

    /// Reverse sweep from a one-element `loss`, accumulating into leaf grads.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                "loss element count",
                1,
                self.value(loss).numel(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].tracked {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                if node.requires_grad {
                    match &mut node.grad {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => node.grad = Some(g),
                    }
                }
                continue;
            }
            for (input, contribution) in self.local_backward(id, &g) {
                if !self.nodes[input.0].tracked {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&contribution)
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for each of its inputs.
    fn local_backward(&self, id: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            } => {
                let grads = conv::conv2d_backward(geometry, val(*input), val(*kernel), g);
                vec![
                    (*input, grads.input),
                    (*kernel, grads.kernel),
                    (*bias, grads.bias),
                ]
            }
            Op::Relu(x) => {
                let dx = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Binary { kind, a, b } => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let out_len = g.len();
                let at = |t: &Tensor, i: usize| {
                    if t.numel() == out_len {
                        t.data()[i]
                    } else {
                        t.data()[0]
                    }
                };
                let (da, db): (Vec<f64>, Vec<f64>) = match kind {
                    ElementwiseKind::Add => (g.to_vec(), g.to_vec()),
                    ElementwiseKind::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    ElementwiseKind::Mul => (
                        g.iter().enumerate().map(|(i, gi)| gi * at(tb, i)).collect(),
                        g.iter().enumerate().map(|(i, gi)| gi * at(ta, i)).collect(),
                    ),
                    ElementwiseKind::Reciprocal => unreachable!(),
                };
                vec![
                    (*a, reduce_to(da, ta.numel())),
                    (*b, reduce_to(db, tb.numel())),
                ]
            }
            Op::Reciprocal(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(y, gi)| -gi * y * y)
                    .collect();
                vec![(*x, dx)]
            }
            Op::Affine { x, scale } => vec![(*x, g.iter().map(|v| scale * v).collect())],
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let n = self.nodes[p.0].value.numel();
                        let slice = g[offset..offset + n].to_vec();
                        offset += n;
                        (*p, slice)
                    })
                    .collect()
            }
            Op::RepeatChannels(x) => {
                let plane = self.nodes[x.0].value.numel();
                let mut dx = vec![0.0; plane];
                for chunk in g.chunks_exact(plane) {
                    dx.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                vec![(*x, dx)]
            }
            Op::Mse(p, t) => {
                let count = self.nodes[p.0].value.numel() as f64;
                let dp: Vec<f64> = val(*p)
                    .iter()
                    .zip(val(*t))
                    .map(|(a, b)| g[0] * 2.0 * (a - b) / count)
                    .collect();
                let dt = dp.iter().map(|v| -v).collect();
                vec![(*p, dp), (*t, dt)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.nodes[x.0].value.numel()])],
            Op::Custom { inputs, op } => {
                let tensors: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                inputs
                    .iter()
                    .copied()
                    .zip(op.backward(&tensors, &node.value, g))
                    .collect()
            }
        }
    }
}

/// Sums a broadcast gradient back down to a one-element operand.
fn reduce_to(g: Vec<f64>, len: usize) -> Vec<f64> {
    if g.len() == len {
        g
    } else {
        vec![g.iter().sum()]
    }
}
