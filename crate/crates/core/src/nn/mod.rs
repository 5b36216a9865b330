//! Dense-network engine: tensors, layers, the three-part model, losses with
//! analytic gradients, update rules and a finite-difference checker.

mod dense;
mod gradcheck;
mod loss;
mod model;
mod params;
mod tensor;

pub use dense::{Activation, Dense, DenseNet, NetGrads, Trace};
pub use gradcheck::{finite_diff_check, GradCheckReport, MAGNITUDE_FLOOR};
pub use loss::{
    augmean_from_logits, augmean_loss, check_prior, contrastive_embeddings, contrastive_loss,
    cosine_similarity, project_and_contrast, proximal_term, softmax_cross_entropy, softmax_rows,
    ContrastiveGrads, ContrastiveOutput, ProjectedContrast, LOG_FLOOR, NORM_EPS,
};
pub use model::{ModelGrads, ModelParams, ModelSpec};
pub use params::{add_scaled, ascent_step, sgd_step, weighted_average_params, ParamSet};
pub use tensor::Tensor;

/// Features `F(x)` of a batch.
pub fn forward_features(phi: &DenseNet, x: &Tensor) -> crate::Result<Tensor> {
    phi.forward(x)
}
