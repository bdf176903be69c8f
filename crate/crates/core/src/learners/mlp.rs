use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Fully connected network with relu between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    output: OutputActivation,
}

/// Tape handles for one [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    output: OutputActivation,
}

impl BoundMlp {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.linear(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(match self.output {
            OutputActivation::Identity => h,
            OutputActivation::Sigmoid => tape.sigmoid(h),
        })
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(widths: &[usize], output: OutputActivation, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Validation(format!(
                "layer widths need >= 2 positive entries, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| ((2.0 * rng.uniform() - 1.0) * a) as f32)
                    .collect();
                Ok(Layer {
                    weight: Tensor::matrix(fan_in, fan_out, data)?,
                    bias: Tensor::zeros(vec![fan_out]),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            output,
        })
    }

    pub fn from_layers(widths: Vec<usize>, layers: Vec<Layer>, output: OutputActivation) -> Result<Self> {
        if widths.len() != layers.len() + 1 {
            return Err(Error::Validation("layer count does not match widths".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.shape() != [widths[i], widths[i + 1]] || l.bias.shape() != [widths[i + 1]] {
                return Err(Error::Dimension(format!(
                    "layer {i}: weight {:?}, bias {:?} for widths {widths:?}",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        Ok(Self {
            widths,
            layers,
            output,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Registers parameters on `tape`; constants when `trainable` is false.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundMlp {
        let leaf = |t: &Tensor| if trainable { tape.param(t) } else { tape.constant(t) };
        BoundMlp {
            layers: self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect(),
            output: self.output,
        }
    }

    /// Wraps existing tape handles: weight then bias for each layer.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundMlp> {
        if vars.len() != 2 * self.layers.len() {
            return Err(Error::Dimension(format!(
                "{} handles for {} layers",
                vars.len(),
                self.layers.len()
            )));
        }
        Ok(BoundMlp {
            layers: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
            output: self.output,
        })
    }

    /// Forward pass without gradient tracking.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let xv = tape.constant(x);
        let y = bound.forward(&tape, xv)?;
        Ok(tape.to_tensor(y))
    }
}
