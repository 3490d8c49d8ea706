//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Tape`] appends a node holding its forward value and,
//! when tracing is on, the parent handles needed for the backward pass. Nodes
//! are only ever appended after their parents, so the node vector is already
//! in topological order and [`Tape::backward`] is a single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{conv2d_same, conv2d_same_backward, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sum(Var),
    BroadcastTo(Var),
    Reshape(Var),
    Conv2d { x: Var, weight: Var, bias: Var },
    SoftmaxXent { logits: Var, probs: Tensor, labels: Vec<usize> },
    SquaredError { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    tracing: bool,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records operations for [`Tape::backward`].
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            tracing: true,
            nodes: Vec::new(),
        }
    }

    /// A tape that only evaluates. Values are bitwise identical to a tracing
    /// run of the same computation.
    pub fn untraced() -> Self {
        Self {
            tracing: false,
            ..Self::new()
        }
    }

    pub fn is_tracing(&self) -> bool {
        self.tracing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let op = if self.tracing { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(())
    }

    /// Forward value of a recorded variable.
    ///
    /// Panics if `v` belongs to another tape.
    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Same as [`Tape::leaf`]; reads better for values that are never
    /// differentiated (noise draws, targets, detached statistics).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>, op: Op) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = f(&self.nodes[a.index].value, &self.nodes[b.index].value)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Tensor::add, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Tensor::sub, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Tensor::mul, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(b)?;
        if self.nodes[b.index].value.data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary(a, b, Tensor::div, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Tensor::matmul, Op::MatMul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.index].value.scale(k);
        Ok(self.push(value, Op::Scale(a, k)))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.index].value.map(|v| v + k);
        Ok(self.push(value, Op::AddScalar(a)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.index].value.map(|v| v.max(0.0));
        Ok(self.push(value, Op::Relu(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.index].value.map(f64::exp);
        Ok(self.push(value, Op::Exp(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = &self.nodes[a.index].value;
        if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("log of non-positive value {bad}"),
            });
        }
        let value = x.map(f64::ln);
        Ok(self.push(value, Op::Log(a)))
    }

    /// Square root. The gradient at exactly 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = &self.nodes[a.index].value;
        if let Some(bad) = x.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("sqrt of negative value {bad}"),
            });
        }
        let value = x.map(f64::sqrt);
        Ok(self.push(value, Op::Sqrt(a)))
    }

    /// Sum over `axes`, keeping reduced axes with size 1.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.index].value.sum_axes(axes)?;
        Ok(self.push(value, Op::Sum(a)))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let axes: Vec<usize> = (0..self.nodes[a.index].value.rank()).collect();
        let s = self.sum_axes(a, &axes)?;
        self.reshape(s, [1])
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let s = self.sum_axes(a, axes)?;
        let count = self.value(a).numel() / self.value(s).numel();
        self.scale(s, 1.0 / count as f64)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = {
            self.check(a)?;
            self.value(a).numel()
        };
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Biased variance over `axes`.
    pub fn var_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let mean = self.mean_axes(a, axes)?;
        let centered = self.sub(a, mean)?;
        let sq = self.square(centered)?;
        self.mean_axes(sq, axes)
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.index].value.broadcast_to(shape)?;
        Ok(self.push(value, Op::BroadcastTo(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.index].value.reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    pub fn conv2d_same(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(weight)?;
        self.check(bias)?;
        let value = conv2d_same(
            &self.nodes[x.index].value,
            &self.nodes[weight.index].value,
            &self.nodes[bias.index].value,
        )?;
        Ok(self.push(value, Op::Conv2d { x, weight, bias }))
    }

    /// Mean softmax cross-entropy of `[B, K]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let z = &self.nodes[logits.index].value;
        let (b, k) = match z.shape() {
            [b, k] => (*b, *k),
            other => {
                return Err(Error::InvalidShape {
                    op: "softmax_cross_entropy",
                    detail: format!("expected [B, K] logits, got {other:?}"),
                })
            }
        };
        if labels.len() != b {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: z.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidShape {
                op: "softmax_cross_entropy",
                detail: format!("label {bad} out of range for {k} classes"),
            });
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &z.data()[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - max).exp() / denom;
            }
            loss += denom.ln() + max - row[labels[i]];
        }
        let probs = Tensor::new([b, k], probs)?;
        Ok(self.push(
            Tensor::scalar(loss / b as f64),
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn squared_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check(pred)?;
        self.check(target)?;
        let p = &self.nodes[pred.index].value;
        let t = &self.nodes[target.index].value;
        if p.shape() != t.shape() {
            return Err(Error::Shape {
                op: "squared_error",
                lhs: p.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        let mse = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.numel() as f64;
        Ok(self.push(Tensor::scalar(mse), Op::SquaredError { pred, target }))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check(output)?;
        if !self.tracing {
            return Err(Error::Mode("backward on an untraced tape".into()));
        }
        if self.nodes[output.index].value.numel() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                detail: format!(
                    "output must have one element, shape is {:?}",
                    self.nodes[output.index].value.shape()
                ),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.index + 1];
        grads[output.index] = Some(Tensor::ones(self.nodes[output.index].value.shape().to_vec()));

        for i in (0..=output.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.index].value;
            match &node.op {
                // Leaves keep their gradient for the caller.
                Op::Leaf => grads[i] = Some(g),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.sum_to_shape(val(*a).shape())?)?;
                    accumulate(&mut grads, *b, g.sum_to_shape(val(*b).shape())?)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.sum_to_shape(val(*a).shape())?)?;
                    accumulate(&mut grads, *b, g.scale(-1.0).sum_to_shape(val(*b).shape())?)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(val(*b))?.sum_to_shape(val(*a).shape())?;
                    let gb = g.mul(val(*a))?.sum_to_shape(val(*b).shape())?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Div(a, b) => {
                    let ga = g.div(val(*b))?.sum_to_shape(val(*a).shape())?;
                    // d(a/b)/db = -(a/b)/b
                    let gb = g
                        .mul(&node.value)?
                        .div(val(*b))?
                        .scale(-1.0)
                        .sum_to_shape(val(*b).shape())?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&val(*b).transpose()?)?;
                    let gb = val(*a).transpose()?.matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g.scale(*k))?,
                Op::AddScalar(a) => accumulate(&mut grads, *a, g)?,
                Op::Relu(a) => {
                    let ga = g.zip_map(val(*a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g.mul(&node.value)?)?,
                Op::Log(a) => accumulate(&mut grads, *a, g.div(val(*a))?)?,
                Op::Sqrt(a) => {
                    let ga = g.zip_map(&node.value, "sqrt", |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sum(a) => accumulate(&mut grads, *a, g.broadcast_to(val(*a).shape())?)?,
                Op::BroadcastTo(a) => accumulate(&mut grads, *a, g.sum_to_shape(val(*a).shape())?)?,
                Op::Reshape(a) => accumulate(&mut grads, *a, g.reshape(val(*a).shape().to_vec())?)?,
                Op::Conv2d { x, weight, bias } => {
                    let (gx, gw, gb) = conv2d_same_backward(val(*x), val(*weight), &g)?;
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *weight, gw)?;
                    accumulate(&mut grads, *bias, gb)?;
                }
                Op::SoftmaxXent { logits, probs, labels } => {
                    let b = labels.len();
                    let k = probs.shape()[1];
                    let scale = g.item()? / b as f64;
                    let mut d = probs.clone();
                    for (i, &l) in labels.iter().enumerate() {
                        d.data_mut()[i * k + l] -= 1.0;
                    }
                    accumulate(&mut grads, *logits, d.scale(scale))?;
                }
                Op::SquaredError { pred, target } => {
                    let n = val(*pred).numel() as f64;
                    let diff = val(*pred).sub(val(*target))?.scale(2.0 * g.item()? / n);
                    accumulate(&mut grads, *target, diff.scale(-1.0))?;
                    accumulate(&mut grads, *pred, diff)?;
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes[..=output.index]
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
            grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.index] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of a scalar output with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf. Leaves that do not influence the output (or were
    /// created after it) get zeros of their own shape.
    pub fn get(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape {
            return Err(Error::NotOnTape);
        }
        match self.grads.get(v.index) {
            Some(Some(g)) => Ok(g.clone()),
            Some(None) => Ok(Tensor::zeros(self.shapes[v.index].clone())),
            None => Err(Error::NotOnTape),
        }
    }
}

/// Central-difference estimate of the gradient of a scalar function.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Domain {
            op: "finite_difference_gradient",
            detail: format!("step must be positive, got {h}"),
        });
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective at element {i}")));
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// `||a - b|| / max(||a||, ||b||, floor)`, the gradient-check metric.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
