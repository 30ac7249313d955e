use ndarray::{Array1, Array2};

use super::PipelineError;
use crate::attention::AttentionTensors;
use crate::LatentTensor;

/// Extra inputs for one denoising branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    /// Encoded image channels concatenated to the noisy latent.
    pub concat_channels: LatentTensor,
    /// Opaque prompt vector, passed through untouched.
    pub prompt_embedding: Array1<f64>,
}

impl ConditioningBundle {
    pub fn new(concat_channels: LatentTensor, prompt_embedding: Array1<f64>) -> Self {
        Self {
            concat_channels,
            prompt_embedding,
        }
    }
}

/// A self-attention layer exposed to hooks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub id: String,
    pub heads: usize,
    /// Per-head width.
    pub head_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    /// Position in the schedule, 0 = noisiest.
    pub index: usize,
    /// Training timestep.
    pub timestep: usize,
    pub alpha_cumprod: f64,
}

/// Computes the output of every self-attention layer of every branch.
///
/// `branches[b]` holds branch `b`'s multi-head `n × (heads·head_dim)`
/// tensors; the hook returns one output of the same shape per branch.
pub trait AttentionHook {
    fn attend(
        &mut self,
        layer: &LayerInfo,
        step: &StepContext,
        branches: &[AttentionTensors],
    ) -> Result<Vec<Array2<f64>>, PipelineError>;
}

/// Noise predictor. Branches are evaluated together so hooks can mix
/// same-step attention tensors across them.
pub trait Denoiser {
    fn layers(&self) -> Vec<LayerInfo>;

    /// One prediction per latent; `conds[i]` conditions `latents[i]`.
    fn predict(
        &self,
        latents: &[LatentTensor],
        step: &StepContext,
        conds: &[ConditioningBundle],
        hook: &mut dyn AttentionHook,
    ) -> Result<Vec<LatentTensor>, PipelineError>;
}
