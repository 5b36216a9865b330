//! Local update rules and the per-client dispatcher.

mod local;
mod spec;

pub use local::{
    augca_no_adversarial, augca_stage_one, classification_grads, fedaug_local, fedaug_objective,
    fedaug_step, local_update_fedavg, local_update_fedmix, local_update_fedprox, local_update_moon,
    local_update_scaffold, mix_inputs, moon_objective, BatchSampler, FedAugParams, LocalResult,
    LocalTask, StepLosses,
};
pub use spec::{AlgorithmKind, AlgorithmSpec};

use crate::error::{Error, Result};
use crate::nn::{ModelGrads, ModelParams};

/// Per-client state some rules carry between rounds.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClientAux<'a> {
    pub server_control: Option<&'a ModelGrads>,
    pub client_control: Option<&'a ModelGrads>,
    /// Moon's previous local model.
    pub previous: Option<&'a ModelParams>,
}

/// Uniform label prior `1/C`.
pub fn uniform_prior(classes: usize) -> Vec<f64> {
    vec![1.0 / classes as f64; classes]
}

impl AlgorithmSpec {
    pub fn fedaug_params(&self, model_lr: f64) -> FedAugParams {
        let (lambda, mu) = self.effective_weights();
        FedAugParams {
            lambda,
            mu,
            tau1: self.tau1,
            tau2: self.tau2,
            theta_lr: self.theta_lr.unwrap_or(model_lr),
            use_projection: self.use_projection,
        }
    }
}

/// Runs the configured local rule for one client.
pub fn run_local(
    spec: &AlgorithmSpec,
    task: &LocalTask<'_>,
    global: &ModelParams,
    aux: ClientAux<'_>,
) -> Result<LocalResult> {
    match spec.kind {
        AlgorithmKind::FedAvg => local_update_fedavg(task, global),
        AlgorithmKind::FedProx => local_update_fedprox(task, global, spec.mu_prox),
        AlgorithmKind::Scaffold => {
            let (Some(c), Some(ci)) = (aux.server_control, aux.client_control) else {
                return Err(Error::Internal("scaffold needs control variates".into()));
            };
            local_update_scaffold(task, global, c, ci)
        }
        AlgorithmKind::FedMix => local_update_fedmix(task, global, spec.lambda_mix),
        AlgorithmKind::Moon => {
            let previous = aux.previous.unwrap_or(global);
            local_update_moon(task, global, previous, spec.mu_moon, spec.moon_tau)
        }
        AlgorithmKind::AugMean | AlgorithmKind::AugCa | AlgorithmKind::FedAug => {
            let prior = uniform_prior(global.num_classes());
            fedaug_local(task, global, &spec.fedaug_params(task.lr), &prior)
        }
    }
}
