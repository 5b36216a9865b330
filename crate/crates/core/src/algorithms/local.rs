//! Per-client local update rules.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_pseudo_batch, LabeledDataset, PseudoDataset};
use crate::error::{Error, Result};
use crate::nn::{
    add_scaled, ascent_step, augmean_from_logits, contrastive_embeddings, project_and_contrast,
    proximal_term, sgd_step, softmax_cross_entropy, DenseNet, ModelGrads, ModelParams, NetGrads,
    ParamSet, Tensor, Trace,
};

/// Everything a client needs to run its local steps for one round.
#[derive(Debug, Clone)]
pub struct LocalTask<'a> {
    pub train: &'a LabeledDataset,
    pub pseudo: Option<&'a PseudoDataset>,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Drives the real mini-batch schedule.
    pub batch_rng: ChaCha8Rng,
    /// Drives pseudo-batch sampling; kept apart so that adding pseudo-data
    /// never changes which real batches a client sees.
    pub pseudo_rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct LocalResult {
    pub params: ModelParams,
    /// `c_i⁺ − c_i` for SCAFFOLD, `None` otherwise.
    pub control_delta: Option<ModelGrads>,
    /// Local objective value at every step.
    pub loss_trace: Vec<f64>,
}

impl LocalResult {
    pub fn mean_loss(&self) -> f64 {
        if self.loss_trace.is_empty() {
            return 0.0;
        }
        self.loss_trace.iter().sum::<f64>() / self.loss_trace.len() as f64
    }
}

/// Mini-batches drawn without replacement, reshuffled each epoch. A partial
/// tail is dropped; datasets smaller than the batch are used whole.
#[derive(Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, rng: ChaCha8Rng) -> Result<Self> {
        if len == 0 {
            return Err(Error::Input("cannot draw batches from an empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut s = Self {
            order: (0..len).collect(),
            cursor: 0,
            batch: batch_size.min(len),
            rng,
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = &self.order[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        out
    }
}

struct Batches<'a> {
    data: &'a LabeledDataset,
    sampler: BatchSampler,
    pseudo: Option<&'a PseudoDataset>,
    pseudo_rng: ChaCha8Rng,
}

impl<'a> Batches<'a> {
    fn new(task: &LocalTask<'a>) -> Result<Self> {
        Ok(Self {
            data: task.train,
            sampler: BatchSampler::new(task.train.len(), task.batch_size, task.batch_rng.clone())?,
            pseudo: task.pseudo,
            pseudo_rng: task.pseudo_rng.clone(),
        })
    }

    fn real(&mut self) -> (Tensor, Vec<usize>) {
        let idx = self.sampler.next_batch();
        self.data.gather(idx)
    }

    fn pseudo(&mut self, rows: usize) -> Result<Tensor> {
        let pd = self
            .pseudo
            .ok_or_else(|| Error::Config("algorithm needs pseudo-data but none was built".into()))?;
        sample_pseudo_batch(pd, rows, &mut self.pseudo_rng)
    }
}

fn check_task(task: &LocalTask<'_>) -> Result<()> {
    if task.steps == 0 {
        return Err(Error::Config("local steps must be at least 1".into()));
    }
    if !(task.lr >= 0.0 && task.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be >= 0, got {}", task.lr)));
    }
    Ok(())
}

/// Cross-entropy through `omega ∘ phi`, scaled by `weight`.
struct ClassifierPass {
    loss: f64,
    phi_trace: Trace,
    grad_features: Tensor,
    omega: NetGrads,
}

fn classifier_pass(model: &ModelParams, x: &Tensor, y: &[usize], weight: f64) -> Result<ClassifierPass> {
    let phi_trace = model.phi.forward_trace(x)?;
    let omega_trace = model.omega.forward_trace(phi_trace.output())?;
    let (loss, mut dlogits) = softmax_cross_entropy(omega_trace.output(), y)?;
    if weight != 1.0 {
        dlogits.scale(weight);
    }
    let mut omega = model.omega.zero_grads();
    let grad_features = model
        .omega
        .backward(&omega_trace, &dlogits, &mut omega, true)
        .expect("input grad requested");
    Ok(ClassifierPass {
        loss: loss * weight,
        phi_trace,
        grad_features,
        omega,
    })
}

/// Gradient of the plain classification loss for `(phi, omega)`; `theta` is zero.
pub fn classification_grads(model: &ModelParams, x: &Tensor, y: &[usize]) -> Result<(f64, ModelGrads)> {
    let cp = classifier_pass(model, x, y, 1.0)?;
    let mut grads = model.zero_grads();
    grads.omega = cp.omega;
    model.phi.backward(&cp.phi_trace, &cp.grad_features, &mut grads.phi, false);
    Ok((cp.loss, grads))
}

fn descend_body(model: &mut ModelParams, grads: &ModelGrads, lr: f64) -> Result<()> {
    sgd_step(&mut model.phi, &grads.phi, lr)?;
    sgd_step(&mut model.omega, &grads.omega, lr)
}

fn finish(model: ModelParams, loss_trace: Vec<f64>) -> LocalResult {
    LocalResult {
        params: model,
        control_delta: None,
        loss_trace,
    }
}

/// `K` mini-batch SGD steps on the classification loss.
pub fn local_update_fedavg(task: &LocalTask<'_>, global: &ModelParams) -> Result<LocalResult> {
    local_update_fedprox(task, global, 0.0)
}

/// FedAvg steps plus the proximal pull `μ_prox·(w − w_global)` on `(phi, omega)`.
pub fn local_update_fedprox(task: &LocalTask<'_>, global: &ModelParams, mu_prox: f64) -> Result<LocalResult> {
    check_task(task)?;
    let mut batches = Batches::new(task)?;
    let mut model = global.clone();
    let mut trace = Vec::with_capacity(task.steps);
    for _ in 0..task.steps {
        let (x, y) = batches.real();
        let (mut loss, mut grads) = classification_grads(&model, &x, &y)?;
        if mu_prox != 0.0 {
            loss += proximal_term(&model.phi, &global.phi, mu_prox, &mut grads.phi)?;
            loss += proximal_term(&model.omega, &global.omega, mu_prox, &mut grads.omega)?;
        }
        descend_body(&mut model, &grads, task.lr)?;
        trace.push(loss);
    }
    Ok(finish(model, trace))
}

/// SCAFFOLD (option II control-variate update). Steps follow `g − c_i + c`;
/// the returned delta is `c_i⁺ − c_i` with
/// `c_i⁺ = c_i − c + (w_global − w_local)/(K·η)`.
pub fn local_update_scaffold(
    task: &LocalTask<'_>,
    global: &ModelParams,
    server_control: &ModelGrads,
    client_control: &ModelGrads,
) -> Result<LocalResult> {
    check_task(task)?;
    let mut correction = server_control.clone();
    add_scaled(&mut correction, client_control, -1.0)?;
    let mut batches = Batches::new(task)?;
    let mut model = global.clone();
    let mut trace = Vec::with_capacity(task.steps);
    for _ in 0..task.steps {
        let (x, y) = batches.real();
        let (loss, mut grads) = classification_grads(&model, &x, &y)?;
        add_scaled(&mut grads.phi, &correction.phi, 1.0)?;
        add_scaled(&mut grads.omega, &correction.omega, 1.0)?;
        descend_body(&mut model, &grads, task.lr)?;
        trace.push(loss);
    }
    let mut delta = global.zero_grads();
    if task.lr > 0.0 {
        let scale = 1.0 / (task.steps as f64 * task.lr);
        for ((d, g), w) in delta
            .slices_mut()
            .into_iter()
            .zip(global.slices())
            .zip(model.slices())
        {
            for ((d, g), w) in d.iter_mut().zip(g).zip(w) {
                *d = (g - w) * scale;
            }
        }
        add_scaled(&mut delta, server_control, -1.0)?;
    }
    Ok(LocalResult {
        params: model,
        control_delta: Some(delta),
        loss_trace: trace,
    })
}

/// `(1 − λ)·x + λ·x_pseudo`, row by row.
pub fn mix_inputs(x: &Tensor, pseudo: &Tensor, lambda_mix: f64) -> Result<Tensor> {
    if x.shape() != pseudo.shape() {
        return Err(Error::Input(format!(
            "cannot mix batches of shape {:?} and {:?}",
            x.shape(),
            pseudo.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(pseudo.data())
        .map(|(a, b)| (1.0 - lambda_mix) * a + lambda_mix * b)
        .collect();
    Tensor::matrix(x.rows(), x.cols(), data)
}

/// Simplified FedMix: classification loss on mixed inputs with the real
/// labels, weighted by `1 − λ_mix`.
pub fn local_update_fedmix(task: &LocalTask<'_>, global: &ModelParams, lambda_mix: f64) -> Result<LocalResult> {
    check_task(task)?;
    if !(0.0..=1.0).contains(&lambda_mix) {
        return Err(Error::Config(format!("lambda_mix must be in [0, 1], got {lambda_mix}")));
    }
    let mut batches = Batches::new(task)?;
    let mut model = global.clone();
    let mut trace = Vec::with_capacity(task.steps);
    for _ in 0..task.steps {
        let (x, y) = batches.real();
        let input = if lambda_mix == 0.0 {
            x
        } else {
            let xa = batches.pseudo(x.rows())?;
            mix_inputs(&x, &xa, lambda_mix)?
        };
        let cp = classifier_pass(&model, &input, &y, 1.0 - lambda_mix)?;
        let mut grads = model.zero_grads();
        grads.omega = cp.omega;
        model.phi.backward(&cp.phi_trace, &cp.grad_features, &mut grads.phi, false);
        descend_body(&mut model, &grads, task.lr)?;
        trace.push(cp.loss);
    }
    Ok(finish(model, trace))
}

/// Moon's model-contrastive term on a real batch: anchor is the current
/// local projection, positive the global model's, negative the previous
/// local model's. Returns the loss and adds `weight·∂/∂(phi, theta)` into
/// `grads`, given the local feature trace and any feature gradient
/// already accumulated.
fn moon_term(
    model: &ModelParams,
    global: &ModelParams,
    previous: &ModelParams,
    x: &Tensor,
    local_features: &Tensor,
    tau: f64,
    weight: f64,
    grads: &mut ModelGrads,
) -> Result<(f64, Tensor)> {
    let anchor = model.theta.forward_trace(local_features)?;
    let positive = global.theta.forward(&global.phi.forward(x)?)?;
    let negative = previous.theta.forward(&previous.phi.forward(x)?)?;
    let mut out = contrastive_embeddings(anchor.output(), &positive, &negative, tau, tau)?;
    out.grad_anchor.scale(weight);
    let dfeat = model
        .theta
        .backward(&anchor, &out.grad_anchor, &mut grads.theta, true)
        .expect("input grad requested");
    Ok((out.loss, dfeat))
}

/// Moon: `L_c + μ_moon·ℓ_con`. The projection head is part of the local
/// model here and is trained by descent together with `(phi, omega)`.
pub fn local_update_moon(
    task: &LocalTask<'_>,
    global: &ModelParams,
    previous: &ModelParams,
    mu_moon: f64,
    tau: f64,
) -> Result<LocalResult> {
    check_task(task)?;
    let mut batches = Batches::new(task)?;
    let mut model = global.clone();
    let mut trace = Vec::with_capacity(task.steps);
    for _ in 0..task.steps {
        let (x, y) = batches.real();
        let (loss, grads) = moon_objective(&model, global, previous, &x, &y, mu_moon, tau)?;
        descend_body(&mut model, &grads, task.lr)?;
        if mu_moon != 0.0 {
            sgd_step(&mut model.theta, &grads.theta, task.lr)?;
        }
        trace.push(loss);
    }
    Ok(finish(model, trace))
}

/// Value and gradient of Moon's local objective at `model`.
pub fn moon_objective(
    model: &ModelParams,
    global: &ModelParams,
    previous: &ModelParams,
    x: &Tensor,
    y: &[usize],
    mu_moon: f64,
    tau: f64,
) -> Result<(f64, ModelGrads)> {
    let cp = classifier_pass(model, x, y, 1.0)?;
    let mut grads = model.zero_grads();
    grads.omega = cp.omega;
    let mut dfeat = cp.grad_features;
    let mut loss = cp.loss;
    if mu_moon != 0.0 {
        let (con, extra) = moon_term(
            model,
            global,
            previous,
            x,
            cp.phi_trace.output(),
            tau,
            mu_moon,
            &mut grads,
        )?;
        loss += mu_moon * con;
        dfeat.add_scaled(&extra, 1.0);
    }
    model.phi.backward(&cp.phi_trace, &dfeat, &mut grads.phi, false);
    Ok((loss, grads))
}

/// Hyperparameters of the two-stage pseudo-data update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedAugParams {
    /// Contrastive weight λ.
    pub lambda: f64,
    /// Output-balancing weight μ.
    pub mu: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub theta_lr: f64,
    pub use_projection: bool,
}

/// Per-step values reported by [`fedaug_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub classification: f64,
    pub contrastive: f64,
    pub augmean: f64,
    pub total: f64,
}

/// Stage one: gradient ascent on the contrastive loss w.r.t. the projection
/// head only. Returns the loss before the update.
pub fn augca_stage_one(
    model: &mut ModelParams,
    frozen_phi: &DenseNet,
    x: &Tensor,
    x_pseudo: &Tensor,
    hp: &FedAugParams,
) -> Result<f64> {
    let anchor = model.phi.forward(x_pseudo)?;
    let negative = model.phi.forward(x)?;
    let positive = frozen_phi.forward(x_pseudo)?;
    let pc = project_and_contrast(
        Some(&model.theta),
        &anchor,
        &positive,
        &negative,
        (hp.tau1, hp.tau2),
        true,
        false,
    )?;
    let g = pc.theta.expect("theta grads requested");
    ascent_step(&mut model.theta, &g, hp.theta_lr)?;
    Ok(pc.loss)
}

/// Value and `(phi, omega)` gradient of `L_c + λ·L_R + μ·L_M` with the
/// projection head frozen.
pub fn fedaug_objective(
    model: &ModelParams,
    frozen_phi: &DenseNet,
    x: &Tensor,
    y: &[usize],
    x_pseudo: &Tensor,
    hp: &FedAugParams,
    prior: &[f64],
) -> Result<(StepLosses, ModelGrads)> {
    let cp = classifier_pass(model, x, y, 1.0)?;
    let mut grads = model.zero_grads();
    grads.omega = cp.omega;
    let mut dfeat_real = cp.grad_features;
    let mut losses = StepLosses {
        classification: cp.loss,
        contrastive: 0.0,
        augmean: 0.0,
        total: cp.loss,
    };
    if hp.lambda != 0.0 || hp.mu != 0.0 {
        if x_pseudo.rows() != x.rows() {
            return Err(Error::Input(format!(
                "pseudo batch has {} rows, real batch {}",
                x_pseudo.rows(),
                x.rows()
            )));
        }
        let pseudo_trace = model.phi.forward_trace(x_pseudo)?;
        let mut dfeat_pseudo = Tensor::zeros(x_pseudo.rows(), model.phi.output_dim());
        if hp.lambda != 0.0 {
            let positive = frozen_phi.forward(x_pseudo)?;
            let head = hp.use_projection.then_some(&model.theta);
            let pc = project_and_contrast(
                head,
                pseudo_trace.output(),
                &positive,
                cp.phi_trace.output(),
                (hp.tau1, hp.tau2),
                false,
                true,
            )?;
            losses.contrastive = pc.loss;
            losses.total += hp.lambda * pc.loss;
            let ga = pc.grad_anchor_features.expect("feature grads requested");
            let gn = pc.grad_negative_features.expect("feature grads requested");
            dfeat_pseudo.add_scaled(&ga, hp.lambda);
            dfeat_real.add_scaled(&gn, hp.lambda);
        }
        if hp.mu != 0.0 {
            let omega_trace = model.omega.forward_trace(pseudo_trace.output())?;
            let (lm, mut dlogits) = augmean_from_logits(omega_trace.output(), prior)?;
            dlogits.scale(hp.mu);
            let d = model
                .omega
                .backward(&omega_trace, &dlogits, &mut grads.omega, true)
                .expect("input grad requested");
            dfeat_pseudo.add_scaled(&d, 1.0);
            losses.augmean = lm;
            losses.total += hp.mu * lm;
        }
        model.phi.backward(&pseudo_trace, &dfeat_pseudo, &mut grads.phi, false);
    }
    model.phi.backward(&cp.phi_trace, &dfeat_real, &mut grads.phi, false);
    Ok((losses, grads))
}

/// One full local step: stage one updates only `theta` (by ascent, skipped
/// when λ = 0 or without projection), stage two only `(phi, omega)`.
#[allow(clippy::too_many_arguments)]
pub fn fedaug_step(
    model: &mut ModelParams,
    frozen_phi: &DenseNet,
    x: &Tensor,
    y: &[usize],
    x_pseudo: &Tensor,
    hp: &FedAugParams,
    prior: &[f64],
    lr: f64,
) -> Result<StepLosses> {
    if hp.lambda != 0.0 && hp.use_projection {
        augca_stage_one(model, frozen_phi, x, x_pseudo, hp)?;
    }
    let (losses, grads) = fedaug_objective(model, frozen_phi, x, y, x_pseudo, hp, prior)?;
    descend_body(model, &grads, lr)?;
    Ok(losses)
}

/// Local update of FedAug. The broadcast global feature extractor is frozen
/// for the whole round and serves as the positive branch.
pub fn fedaug_local(
    task: &LocalTask<'_>,
    global: &ModelParams,
    hp: &FedAugParams,
    prior: &[f64],
) -> Result<LocalResult> {
    check_task(task)?;
    let mut batches = Batches::new(task)?;
    let mut model = global.clone();
    let frozen = &global.phi;
    let needs_pseudo = hp.lambda != 0.0 || hp.mu != 0.0;
    let mut trace = Vec::with_capacity(task.steps);
    for _ in 0..task.steps {
        let (x, y) = batches.real();
        let xa = if needs_pseudo {
            batches.pseudo(x.rows())?
        } else {
            Tensor::zeros(0, x.cols())
        };
        let losses = fedaug_step(&mut model, frozen, &x, &y, &xa, hp, prior, task.lr)?;
        trace.push(losses.total);
    }
    Ok(finish(model, trace))
}

/// Contrastive ablation without the adversarial head: similarities on raw
/// features, no AugMean term, `theta` untouched.
pub fn augca_no_adversarial(
    task: &LocalTask<'_>,
    global: &ModelParams,
    lambda: f64,
    tau1: f64,
    tau2: f64,
    prior: &[f64],
) -> Result<LocalResult> {
    let hp = FedAugParams {
        lambda,
        mu: 0.0,
        tau1,
        tau2,
        theta_lr: task.lr,
        use_projection: false,
    };
    fedaug_local(task, global, &hp, prior)
}
