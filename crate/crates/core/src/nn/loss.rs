//! Loss functions with hand-derived gradients.
//!
//! All batch losses are means over rows; returned gradients already carry
//! the `1/B` factor.

use super::dense::{DenseNet, NetGrads};
use super::model::{ModelGrads, ModelParams};
use super::params::{check_compatible, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;
/// Added to vector norms in cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean cross-entropy of `logits` against class indices.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, classes) = (logits.rows(), logits.cols());
    if labels.len() != rows {
        return Err(Error::Input(format!(
            "{} labels for {rows} logit rows",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if rows == 0 {
        return Ok((0.0, logits.clone()));
    }
    let scale = 1.0 / rows as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - row[y];
        for v in row.iter_mut() {
            *v = (*v - log_norm).exp() * scale;
        }
        row[y] -= scale;
    }
    Ok((loss * scale, grad))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine similarity of unequal lengths");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / ((norm(a) + NORM_EPS) * (norm(b) + NORM_EPS))
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Adds `scale * d sim(a, b) / d a` into `out`.
fn add_cosine_grad(a: &[f64], b: &[f64], sim: f64, scale: f64, out: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    let denom = (na + NORM_EPS) * (nb + NORM_EPS);
    let radial = if na > 0.0 {
        sim / (na * (na + NORM_EPS))
    } else {
        0.0
    };
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o += scale * (y / denom - radial * x);
    }
}

/// Loss value and gradients of the two-pair contrastive objective.
#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grad_anchor: Tensor,
    pub grad_positive: Tensor,
    pub grad_negative: Tensor,
}

/// Mean over rows `k` of
/// `-log(e^{s⁺/τ₁} / (e^{s⁺/τ₁} + e^{s⁻/τ₂}))` where
/// `s⁺ = sim(anchor_k, positive_k)` and `s⁻ = sim(anchor_k, negative_k)`.
pub fn contrastive_embeddings(
    anchor: &Tensor,
    positive: &Tensor,
    negative: &Tensor,
    tau1: f64,
    tau2: f64,
) -> Result<ContrastiveOutput> {
    if !(tau1 > 0.0 && tau2 > 0.0) {
        return Err(Error::Input(format!(
            "temperatures must be positive, got {tau1} and {tau2}"
        )));
    }
    if anchor.shape() != positive.shape() || anchor.shape() != negative.shape() {
        return Err(Error::Input(format!(
            "contrastive batches differ in shape: {:?} / {:?} / {:?}",
            anchor.shape(),
            positive.shape(),
            negative.shape()
        )));
    }
    let rows = anchor.rows();
    if rows == 0 {
        return Err(Error::Input("contrastive loss of an empty batch".into()));
    }
    let cols = anchor.cols();
    let scale = 1.0 / rows as f64;
    let mut ga = Tensor::zeros(rows, cols);
    let mut gp = Tensor::zeros(rows, cols);
    let mut gn = Tensor::zeros(rows, cols);
    let mut loss = 0.0;
    for k in 0..rows {
        let (a, p, n) = (anchor.row(k), positive.row(k), negative.row(k));
        let s_pos = cosine_similarity(a, p);
        let s_neg = cosine_similarity(a, n);
        let u = s_neg / tau2 - s_pos / tau1;
        loss += softplus(u);
        let w = sigmoid(u) * scale;
        let (d_pos, d_neg) = (-w / tau1, w / tau2);
        add_cosine_grad(a, p, s_pos, d_pos, ga.row_mut(k));
        add_cosine_grad(a, n, s_neg, d_neg, ga.row_mut(k));
        add_cosine_grad(p, a, s_pos, d_pos, gp.row_mut(k));
        add_cosine_grad(n, a, s_neg, d_neg, gn.row_mut(k));
    }
    Ok(ContrastiveOutput {
        loss: loss * scale,
        grad_anchor: ga,
        grad_positive: gp,
        grad_negative: gn,
    })
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Result of projecting three feature batches through a shared head and
/// scoring them with [`contrastive_embeddings`].
#[derive(Debug, Clone)]
pub struct ProjectedContrast {
    pub loss: f64,
    /// Head gradients (summed over all three branches), when requested.
    pub theta: Option<NetGrads>,
    /// d loss / d anchor features, when requested.
    pub grad_anchor_features: Option<Tensor>,
    /// d loss / d negative features, when requested.
    pub grad_negative_features: Option<Tensor>,
}

/// Contrastive loss on `P(features, θ)`, or on the raw features when
/// `theta` is `None`. The positive branch is treated as constant input.
pub fn project_and_contrast(
    theta: Option<&DenseNet>,
    anchor: &Tensor,
    positive: &Tensor,
    negative: &Tensor,
    (tau1, tau2): (f64, f64),
    want_theta: bool,
    want_features: bool,
) -> Result<ProjectedContrast> {
    let Some(head) = theta else {
        let out = contrastive_embeddings(anchor, positive, negative, tau1, tau2)?;
        return Ok(ProjectedContrast {
            loss: out.loss,
            theta: None,
            grad_anchor_features: want_features.then_some(out.grad_anchor),
            grad_negative_features: want_features.then_some(out.grad_negative),
        });
    };
    let ta = head.forward_trace(anchor)?;
    let tp = head.forward_trace(positive)?;
    let tn = head.forward_trace(negative)?;
    let out = contrastive_embeddings(ta.output(), tp.output(), tn.output(), tau1, tau2)?;
    let mut grads = head.zero_grads();
    // Head gradients are accumulated even when only feature gradients are
    // wanted; backward needs a sink for them.
    let ga = head.backward(&ta, &out.grad_anchor, &mut grads, want_features);
    let gn = head.backward(&tn, &out.grad_negative, &mut grads, want_features);
    if want_theta {
        head.backward(&tp, &out.grad_positive, &mut grads, false);
    }
    Ok(ProjectedContrast {
        loss: out.loss,
        theta: want_theta.then_some(grads),
        grad_anchor_features: ga,
        grad_negative_features: gn,
    })
}

/// Gradients of [`contrastive_loss`].
#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub loss: f64,
    /// Gradient for the local feature extractor.
    pub phi: NetGrads,
    /// Gradient for the projection head (absent without projection).
    pub theta: Option<NetGrads>,
}

/// Pseudo-data contrastive loss: anchor `P(F_local(x_pseudo))`, positive
/// `P(F_global(x_pseudo))`, negative `P(F_local(x_real))`, paired by row.
/// The global extractor is frozen.
pub fn contrastive_loss(
    phi_local: &DenseNet,
    phi_global: &DenseNet,
    theta: Option<&DenseNet>,
    x_real: &Tensor,
    x_pseudo: &Tensor,
    tau1: f64,
    tau2: f64,
) -> Result<ContrastiveGrads> {
    if x_real.rows() != x_pseudo.rows() {
        return Err(Error::Input(format!(
            "real batch has {} rows but pseudo batch has {}",
            x_real.rows(),
            x_pseudo.rows()
        )));
    }
    let anchor = phi_local.forward_trace(x_pseudo)?;
    let negative = phi_local.forward_trace(x_real)?;
    let positive = phi_global.forward(x_pseudo)?;
    let pc = project_and_contrast(
        theta,
        anchor.output(),
        &positive,
        negative.output(),
        (tau1, tau2),
        true,
        true,
    )?;
    let mut phi = phi_local.zero_grads();
    if let Some(g) = &pc.grad_anchor_features {
        phi_local.backward(&anchor, g, &mut phi, false);
    }
    if let Some(g) = &pc.grad_negative_features {
        phi_local.backward(&negative, g, &mut phi, false);
    }
    Ok(ContrastiveGrads {
        loss: pc.loss,
        phi,
        theta: pc.theta,
    })
}

pub fn check_prior(prior: &[f64], classes: usize) -> Result<()> {
    if prior.len() != classes {
        return Err(Error::Input(format!(
            "prior has {} entries for {classes} classes",
            prior.len()
        )));
    }
    let sum: f64 = prior.iter().sum();
    if prior.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "prior must be a distribution (sum {sum})"
        )));
    }
    Ok(())
}

/// Cross-entropy between the batch-mean softmax output and `prior`,
/// with gradient w.r.t. the logits.
pub fn augmean_from_logits(logits: &Tensor, prior: &[f64]) -> Result<(f64, Tensor)> {
    let rows = logits.rows();
    if rows == 0 {
        return Err(Error::Input("AugMean loss of an empty pseudo batch".into()));
    }
    check_prior(prior, logits.cols())?;
    let probs = softmax_rows(logits);
    let mut mean = vec![0.0; logits.cols()];
    for row in probs.iter_rows() {
        for (m, p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    let inv = 1.0 / rows as f64;
    mean.iter_mut().for_each(|m| *m *= inv);

    let mut loss = 0.0;
    let mut d_mean = vec![0.0; mean.len()];
    for ((d, &m), &y) in d_mean.iter_mut().zip(&mean).zip(prior) {
        if m > LOG_FLOOR {
            loss -= y * m.ln();
            *d = -y / m * inv;
        } else {
            loss -= y * LOG_FLOOR.ln();
        }
    }
    // softmax backward: dz = p ⊙ (g − ⟨p, g⟩), with g = d_mean for every row
    let mut grad = probs;
    for r in 0..rows {
        let row = grad.row_mut(r);
        let dot: f64 = row.iter().zip(&d_mean).map(|(p, g)| p * g).sum();
        for (p, g) in row.iter_mut().zip(&d_mean) {
            *p *= g - dot;
        }
    }
    Ok((loss, grad))
}

/// AugMean loss of a whole model on a pseudo batch; `theta` gradients are zero.
pub fn augmean_loss(model: &ModelParams, x_pseudo: &Tensor, prior: &[f64]) -> Result<(f64, ModelGrads)> {
    if x_pseudo.rows() == 0 {
        return Err(Error::Input("AugMean loss of an empty pseudo batch".into()));
    }
    let ft = model.phi.forward_trace(x_pseudo)?;
    let ot = model.omega.forward_trace(ft.output())?;
    let (loss, dlogits) = augmean_from_logits(ot.output(), prior)?;
    let mut grads = model.zero_grads();
    let dfeat = model
        .omega
        .backward(&ot, &dlogits, &mut grads.omega, true)
        .expect("input grad requested");
    model.phi.backward(&ft, &dfeat, &mut grads.phi, false);
    Ok((loss, grads))
}

/// `(μ/2)·‖w − anchor‖²`, adding `μ·(w − anchor)` into `grads`.
pub fn proximal_term<P, G>(params: &P, anchor: &P, mu: f64, grads: &mut G) -> Result<f64>
where
    P: ParamSet + ?Sized,
    G: ParamSet + ?Sized,
{
    check_compatible(params, anchor)?;
    check_compatible(params, grads)?;
    let mut sq = 0.0;
    for ((w, a), g) in params
        .slices()
        .into_iter()
        .zip(anchor.slices())
        .zip(grads.slices_mut())
    {
        for ((w, a), g) in w.iter().zip(a).zip(g.iter_mut()) {
            let d = w - a;
            sq += d * d;
            *g += mu * d;
        }
    }
    Ok(0.5 * mu * sq)
}
