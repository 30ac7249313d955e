//! DDIM scheduling, inversion and the two-stage try-on workflow, written
//! against the abstract [`Denoiser`] trait.

mod codec;
mod denoiser;
mod hooks;
mod schedule;
mod toy;
mod tryon;

use std::fmt;

use thiserror::Error;

use crate::attention::AttentionError;
use crate::geometry::GeometryError;
use crate::spectral::SpectralError;
use crate::tensor::TensorError;

pub use codec::{
    agnostic_image, concat_conditioning, decode_latent, downsample_mask, encode_image, LATENT_CHANNELS, LATENT_STRIDE,
};
pub use denoiser::{AttentionHook, ConditioningBundle, Denoiser, LayerInfo, StepContext};
pub use hooks::{CbsHook, ExtendedAttentionHook, LayerSelection, RecordingHook, SelfAttentionHook, TapRecord};
pub use schedule::{
    ddim_invert, ddim_invert_with, ddim_sample, ddim_sample_branches, make_ddim_schedule, AlphaProfile, DdimSchedule,
    InversionOptions, TRAIN_STEPS,
};
pub use toy::{LinearDenoiser, ToyConvDenoiser, ToyInpaintDenoiser, ZeroDenoiser};
pub use tryon::{
    compose_garment_infused, generate_pseudo_person, generate_pseudo_person_with, morph_garment, run_tryon,
    BodyAnalyzer, FixedAnalysis, GarmentSource, NoiseInit, PersonInputs, TryOnConfig, TryOnInputs, TryOnOutput,
};

/// Pipeline stage, used to attribute errors in [`run_tryon`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Relocate,
    PseudoPerson,
    BodyAnalysis,
    Morph,
    Compose,
    Encode,
    Inversion,
    SpectralInjection,
    Inpainting,
    Decode,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Relocate => "relocate",
            Stage::PseudoPerson => "pseudo-person",
            Stage::BodyAnalysis => "body-analysis",
            Stage::Morph => "morph",
            Stage::Compose => "compose",
            Stage::Encode => "encode",
            Stage::Inversion => "inversion",
            Stage::SpectralInjection => "spectral-injection",
            Stage::Inpainting => "inpainting",
            Stage::Decode => "decode",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("num_steps must be >= 1, got {0}")]
    InvalidSteps(usize),
    #[error("invalid alpha profile: {0}")]
    InvalidProfile(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("hook mismatch: {0}")]
    HookMismatch(String),
    #[error("denoiser failure: {0}")]
    Denoiser(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<PipelineError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }
}
