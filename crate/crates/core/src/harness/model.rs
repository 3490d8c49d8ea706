use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

/// A small classifier with insertion positions at layer boundaries.
///
/// Position 0 is the input `[B, C, H, W]`. With a conv stem, position 1 is
/// the stem output. Every hidden layer then adds one position after its
/// activation. The head has no position after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// `[C, H, W]` of one input sample.
    pub input: [usize; 3],
    /// Output channels of an optional 3x3 same-padding stem; 0 disables it.
    pub conv_channels: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input: [8, 4, 4],
            conv_channels: 0,
            hidden: vec![64, 64],
            classes: 4,
            activation: Activation::Relu,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::Config(format!("model.input has a zero dimension: {:?}", self.input)));
        }
        if self.classes < 2 {
            return Err(Error::Config("model.classes must be >= 2".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("model.hidden sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<usize> {
        (0..self.position_count()).collect()
    }

    pub fn position_count(&self) -> usize {
        1 + usize::from(self.conv_channels > 0) + self.hidden.len()
    }

    pub fn position_name(&self, position: usize) -> String {
        let conv = usize::from(self.conv_channels > 0);
        match position {
            0 => "input".into(),
            1 if conv == 1 => "stem".into(),
            p => format!("hidden{}", p - conv),
        }
    }

    /// Channel count of the features at a position.
    pub fn channels_at(&self, position: usize) -> Result<usize> {
        let conv = usize::from(self.conv_channels > 0);
        match position {
            0 => Ok(self.input[0]),
            1 if conv == 1 => Ok(self.conv_channels),
            p if p < self.position_count() => Ok(self.hidden[p - 1 - conv]),
            p => Err(Error::Config(format!("position {p} does not exist (model has {})", self.position_count()))),
        }
    }

    fn flat_len(&self) -> usize {
        let c = if self.conv_channels > 0 { self.conv_channels } else { self.input[0] };
        c * self.input[1] * self.input[2]
    }

    /// Parameter shapes in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        if self.conv_channels > 0 {
            shapes.push(vec![self.conv_channels, self.input[0], 3, 3]);
            shapes.push(vec![self.conv_channels]);
        }
        let mut width = self.flat_len();
        for &h in self.hidden.iter().chain(std::iter::once(&self.classes)) {
            shapes.push(vec![width, h]);
            shapes.push(vec![h]);
            width = h;
        }
        shapes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
}

/// Called at every insertion position during a forward pass; returns the
/// (possibly replaced) features.
pub type Hook<'a> = dyn FnMut(usize, &mut Tape, Var) -> Result<Var> + 'a;

pub struct Forward {
    pub logits: Var,
    pub params: Vec<Var>,
}

impl Model {
    /// He-normal weights, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(seed, "init");
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = shape.iter().product::<usize>() / shape[if shape.len() == 2 { 1 } else { 0 }];
                rng::standard_normal(&mut r, shape).scale((2.0 / fan_in as f64).sqrt())
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            params,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let shapes = self.spec.param_shapes();
        if shapes.len() != self.params.len() {
            return Err(Error::Dimension(shapes.len(), self.params.len()));
        }
        for (s, p) in shapes.iter().zip(&self.params) {
            if s.as_slice() != p.shape() {
                return Err(Error::Shape {
                    op: "model parameters",
                    lhs: s.clone(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn activate(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.spec.activation {
            Activation::Relu => tape.relu(x),
            Activation::Identity => Ok(x),
        }
    }

    /// Forward pass of a `[B, C, H, W]` batch. Parameters enter the tape as
    /// leaves so the caller can differentiate with respect to them.
    pub fn forward(&self, tape: &mut Tape, x: Var, hook: &mut Hook<'_>) -> Result<Forward> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1..] != self.spec.input {
            return Err(Error::Shape {
                op: "model forward",
                lhs: [&[0][..], &self.spec.input[..]].concat(),
                rhs: shape,
            });
        }
        let b = shape[0];
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut next = params.iter().copied();
        let mut position = 0;

        let mut h = hook(position, tape, x)?;
        position += 1;
        if self.spec.conv_channels > 0 {
            let (w, bias) = (next.next().unwrap(), next.next().unwrap());
            h = tape.conv2d_same(h, w, bias)?;
            h = self.activate(tape, h)?;
            h = hook(position, tape, h)?;
            position += 1;
        }
        h = tape.reshape(h, [b, self.spec.flat_len()])?;
        for _ in 0..self.spec.hidden.len() {
            let (w, bias) = (next.next().unwrap(), next.next().unwrap());
            h = tape.matmul(h, w)?;
            h = tape.add(h, bias)?;
            h = self.activate(tape, h)?;
            h = hook(position, tape, h)?;
            position += 1;
        }
        let (w, bias) = (next.next().unwrap(), next.next().unwrap());
        let logits = tape.matmul(h, w)?;
        let logits = tape.add(logits, bias)?;
        Ok(Forward { logits, params })
    }

    /// Plain inference without hooks.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::untraced();
        let input = tape.constant(x.clone());
        let out = self.forward(&mut tape, input, &mut |_, _, v| Ok(v))?;
        Ok(tape.value(out.logits).clone())
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}
