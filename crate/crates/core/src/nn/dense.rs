use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer `y = act(x·W + b)` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Config(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
            activation,
        })
    }

    /// He-style uniform fan-in initialization, zero bias.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = (6.0 / in_dim.max(1) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::new(in_dim, out_dim, weight, vec![0.0; out_dim], activation)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let rows = x.rows();
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        gemm(
            rows,
            self.in_dim,
            self.out_dim,
            x.data(),
            (self.in_dim, 1),
            &self.weight,
            (self.out_dim, 1),
            &mut out,
            true,
        );
        if self.activation == Activation::Relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Tensor::from_raw(rows, self.out_dim, out)
    }
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Activations recorded by [`DenseNet::forward_trace`]; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Tensor {
        self.acts.pop().expect("trace holds at least the input")
    }
}

/// Gradient buffers shaped like a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl NetGrads {
    pub fn weight(&self, layer: usize) -> &[f64] {
        &self.layers[layer].0
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.layers[layer].1
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random network through the given widths: relu on every hidden layer,
    /// `last` on the final one.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], last: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "need at least input and output widths, got {dims:?}"
            )));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { Activation::Relu };
                Dense::init(dims[i], dims[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "batch of shape {:?} does not match network input width {}",
                x.shape(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        Ok(Trace { acts })
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    /// Backpropagates `grad_out` (d loss / d output) through a recorded pass,
    /// adding parameter gradients into `grads`. Returns d loss / d input when
    /// `want_input_grad` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_out: &Tensor,
        grads: &mut NetGrads,
        want_input_grad: bool,
    ) -> Option<Tensor> {
        assert_eq!(trace.acts.len(), self.layers.len() + 1, "trace/net mismatch");
        assert_eq!(grads.layers.len(), self.layers.len(), "grads/net mismatch");
        let rows = grad_out.rows();
        let mut delta = grad_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.acts[idx + 1];
            let input = &trace.acts[idx];
            if layer.activation == Activation::Relu {
                for (d, &a) in delta.data_mut().iter_mut().zip(out.data()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (gw, gb) = &mut grads.layers[idx];
            // dW += xᵀ · delta
            gemm(
                layer.in_dim,
                rows,
                layer.out_dim,
                input.data(),
                (1, layer.in_dim),
                delta.data(),
                (layer.out_dim, 1),
                gw,
                true,
            );
            for row in delta.iter_rows() {
                for (b, d) in gb.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if idx == 0 && !want_input_grad {
                return None;
            }
            // dx = delta · Wᵀ
            let mut dx = vec![0.0; rows * layer.in_dim];
            gemm(
                rows,
                layer.out_dim,
                layer.in_dim,
                delta.data(),
                (layer.out_dim, 1),
                &layer.weight,
                (1, layer.out_dim),
                &mut dx,
                false,
            );
            delta = Tensor::from_raw(rows, layer.in_dim, dx);
        }
        Some(delta)
    }
}

impl ParamSet for DenseNet {
    fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl ParamSet for NetGrads {
    fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }
}
