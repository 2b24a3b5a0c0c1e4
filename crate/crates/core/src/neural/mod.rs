//! Attention-gated combination network.
//!
//! A mixture encoder and a shared beam-output encoder produce queries and keys;
//! their scaled dot product, softmaxed across beams, gives the per-bin
//! combination weights. The network runs twice: the first weights drive one
//! distortionless update of every beam, the second pass combines the updated
//! outputs. Training runs through a small tape-based reverse-mode engine
//! ([`Graph`]) in `f64`.

mod checkpoint;
mod gradcheck;
mod graph;
mod lstm;
mod model;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::grad_check;
pub use graph::{Grads, Graph, Var, SI_SDR_CLAMP_DB};
pub use model::{
    eipd_features, CombinationNet, EntropyTarget, ItemResult, LossOptions, ModelConfig, NetOutput, Params, RefineGradient,
    TrainItem,
    BEAM_INPUTS, MIX_INPUTS,
};
pub use tensor::Tensor;
pub use train::{load_samples, train, train_samples, validate, Adam, EpochLog, Sample, TrainConfig, TrainOutcome};

use crate::{Error, Result};

/// Negative SI-SDR in dB, clamped to `[-60, 60]`.
pub fn si_sdr_loss(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let (sdr, _) = graph::si_sdr_parts(estimate, reference);
    Ok(-sdr.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

/// Mean of `-alpha ln(max(alpha, eps))` over every weight of the field.
pub fn entropy_loss(alpha: &crate::WeightField, eps: f64) -> f64 {
    alpha.mean_entropy(eps)
}

#[cfg(test)]
mod tests;
