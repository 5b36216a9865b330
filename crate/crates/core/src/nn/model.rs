use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseNet, NetGrads};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Architecture of the three-part model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Widths of the feature extractor after the input; the last entry is
    /// the feature dimension.
    pub feature_layers: Vec<usize>,
    pub num_classes: usize,
    /// Widths of the projection head after the feature dimension.
    pub projection_layers: Vec<usize>,
}

impl ModelSpec {
    pub fn feature_dim(&self) -> usize {
        *self.feature_layers.last().unwrap_or(&self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!(
                "model needs input_dim > 0 and at least 2 classes (got {} / {})",
                self.input_dim, self.num_classes
            )));
        }
        if self.feature_layers.is_empty() || self.projection_layers.is_empty() {
            return Err(Error::Config(
                "feature extractor and projection head need at least one layer".into(),
            ));
        }
        if self
            .feature_layers
            .iter()
            .chain(&self.projection_layers)
            .any(|&w| w == 0)
        {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Feature extractor `phi`, classifier head `omega` and projection head `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub phi: DenseNet,
    pub omega: DenseNet,
    pub theta: DenseNet,
}

impl ModelParams {
    pub fn new(phi: DenseNet, omega: DenseNet, theta: DenseNet) -> Result<Self> {
        if omega.input_dim() != phi.output_dim() || theta.input_dim() != phi.output_dim() {
            return Err(Error::Config(format!(
                "heads expect {} / {} inputs but features are {}-dimensional",
                omega.input_dim(),
                theta.input_dim(),
                phi.output_dim()
            )));
        }
        Ok(Self { phi, omega, theta })
    }

    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.feature_layers);
        let phi = DenseNet::init(&dims, Activation::Relu, rng)?;
        let omega = DenseNet::init(
            &[spec.feature_dim(), spec.num_classes],
            Activation::Identity,
            rng,
        )?;
        let mut head = vec![spec.feature_dim()];
        head.extend(&spec.projection_layers);
        let theta = DenseNet::init(&head, Activation::Identity, rng)?;
        Self::new(phi, omega, theta)
    }

    pub fn num_classes(&self) -> usize {
        self.omega.output_dim()
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.omega.forward(&self.phi.forward(x)?)
    }

    /// Argmax class per row (first maximum wins ties).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            phi: self.phi.zero_grads(),
            omega: self.omega.zero_grads(),
            theta: self.theta.zero_grads(),
        }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Gradients mirroring a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub phi: NetGrads,
    pub omega: NetGrads,
    pub theta: NetGrads,
}

impl ParamSet for ModelParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.phi.slices();
        v.extend(self.omega.slices());
        v.extend(self.theta.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.phi.slices_mut();
        v.extend(self.omega.slices_mut());
        v.extend(self.theta.slices_mut());
        v
    }
}

impl ParamSet for ModelGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.phi.slices();
        v.extend(self.omega.slices());
        v.extend(self.theta.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.phi.slices_mut();
        v.extend(self.omega.slices_mut());
        v.extend(self.theta.slices_mut());
        v
    }
}
