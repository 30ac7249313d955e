use log::info;
use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use super::codec::concat_conditioning;
use super::{
    agnostic_image, ddim_invert_with, ddim_sample_branches, decode_latent, encode_image, make_ddim_schedule,
    AlphaProfile, AtStage, AttentionHook, CbsHook, ConditioningBundle, Denoiser, ExtendedAttentionHook,
    InversionOptions, LayerSelection, PipelineError, SelfAttentionHook, Stage, LATENT_CHANNELS, LATENT_STRIDE,
};
use crate::geometry::{
    build_region_boxes, estimate_homography, piecewise_warp, region_masks, relocate_garment, BinaryMask,
    GarmentCategory, GeometryError, Image, RegionSpec, RegionStatus, SegmentationMap, Skeleton, WarpResult,
    DEFAULT_CONFIDENCE_THRESHOLD,
};
use crate::spectral::spectral_pose_inject;
use crate::LatentTensor;

/// How the inpainting stage's initial noise is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseInit {
    /// Low band from the inverted person latent, high band fresh.
    #[default]
    Spectral,
    /// Inverted person latent only.
    Inversion,
    /// Fresh Gaussian noise only.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TryOnConfig {
    pub tau: f64,
    pub num_steps: usize,
    pub category: GarmentCategory,
    pub confidence_threshold: f64,
    pub box_padding: f64,
    /// Layers that receive attention modulation; `None` means all.
    pub hook_layers: Option<Vec<String>>,
    pub random_seed: u64,
    pub noise_init: NoiseInit,
    /// Person K,V injection while generating the pseudo person.
    pub pseudo_injection: bool,
    /// Boundary stitching during inpainting.
    pub stitching: bool,
}

impl Default for TryOnConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            num_steps: 50,
            category: GarmentCategory::Upper,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            box_padding: 0.0,
            hook_layers: None,
            random_seed: 0,
            noise_init: NoiseInit::Spectral,
            pseudo_injection: true,
            stitching: true,
        }
    }
}

impl TryOnConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.tau.is_nan() || self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(PipelineError::InvalidConfig("tau must be positive".into()));
        }
        if self.num_steps == 0 {
            return Err(PipelineError::InvalidSteps(0));
        }
        if !(0.0..1.0).contains(&self.confidence_threshold) {
            return Err(PipelineError::InvalidConfig(format!(
                "confidence threshold {} outside [0, 1)",
                self.confidence_threshold
            )));
        }
        if self.box_padding.is_nan() || self.box_padding < 0.0 || !self.box_padding.is_finite() {
            return Err(PipelineError::InvalidConfig("box padding must be >= 0".into()));
        }
        Ok(())
    }

    pub fn region_spec(&self) -> RegionSpec {
        RegionSpec::for_category(self.category).with_box_padding(self.box_padding)
    }

    pub fn layer_selection(&self) -> LayerSelection {
        match &self.hook_layers {
            None => LayerSelection::All,
            Some(ids) => LayerSelection::Only(ids.clone()),
        }
    }

    fn modulated(&self, enabled: bool) -> LayerSelection {
        if enabled {
            self.layer_selection()
        } else {
            LayerSelection::None
        }
    }
}

/// Pose and part parsing of an image, e.g. from an external estimator.
pub trait BodyAnalyzer {
    fn analyze(&self, image: &Image) -> Result<(Skeleton, SegmentationMap), PipelineError>;
}

/// Returns a precomputed analysis, checking only that sizes agree.
#[derive(Debug, Clone)]
pub struct FixedAnalysis {
    pub skeleton: Skeleton,
    pub parsing: SegmentationMap,
}

impl BodyAnalyzer for FixedAnalysis {
    fn analyze(&self, image: &Image) -> Result<(Skeleton, SegmentationMap), PipelineError> {
        let size = (image.dim().0, image.dim().1);
        for got in [self.skeleton.image_size(), self.parsing.dims()] {
            if got != size {
                return Err(GeometryError::DimensionMismatch { expected: size, got }.into());
            }
        }
        Ok((self.skeleton.clone(), self.parsing.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct PersonInputs {
    pub image: Image,
    pub skeleton: Skeleton,
    pub parsing: SegmentationMap,
    /// Region to repaint.
    pub agnostic_mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub enum GarmentSource {
    /// Flat garment photo; a pseudo person wearing it is generated first.
    Shop { image: Image, mask: BinaryMask },
    /// Garment already worn by someone in `image`.
    Worn {
        image: Image,
        skeleton: Skeleton,
        parsing: SegmentationMap,
    },
}

#[derive(Debug, Clone)]
pub struct TryOnInputs {
    pub person: PersonInputs,
    pub garment: GarmentSource,
    pub prompt_embedding: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct TryOnOutput {
    pub image: Image,
    pub pseudo_person: Option<Image>,
    pub warp: WarpResult,
    pub garment_infused: Image,
    pub initial_noise: LatentTensor,
}

fn invert_mask(mask: &BinaryMask) -> BinaryMask {
    mask.mapv(|m| !m)
}

fn latent_dims(image: &Image) -> (usize, usize, usize) {
    (
        LATENT_CHANNELS,
        image.dim().0 / LATENT_STRIDE,
        image.dim().1 / LATENT_STRIDE,
    )
}

fn same_size(image: &Image, mask: &BinaryMask) -> Result<(), PipelineError> {
    let size = (image.dim().0, image.dim().1);
    if mask.dim() != size {
        return Err(GeometryError::DimensionMismatch {
            expected: size,
            got: mask.dim(),
        }
        .into());
    }
    Ok(())
}

/// Denoises a garment-conditioned branch and an agnostic-person branch from
/// shared noise, injecting the person branch's keys and values into the
/// garment branch. Returns the decoded garment branch.
///
/// The garment must already sit in the person's frame (see
/// [`relocate_garment`]).
#[allow(clippy::too_many_arguments)]
pub fn generate_pseudo_person(
    garment_image: &Image,
    garment_mask: &BinaryMask,
    person_agnostic_image: &Image,
    agnostic_mask: &BinaryMask,
    denoiser: &dyn Denoiser,
    config: &TryOnConfig,
    prompt_embedding: &Array1<f64>,
) -> Result<Image, PipelineError> {
    let selection = config.modulated(config.pseudo_injection);
    selection.validate(&denoiser.layers())?;
    generate_pseudo_person_with(
        garment_image,
        garment_mask,
        person_agnostic_image,
        agnostic_mask,
        denoiser,
        config,
        prompt_embedding,
        &mut ExtendedAttentionHook::new(selection),
    )
}

/// [`generate_pseudo_person`] with a caller-supplied two-branch hook.
#[allow(clippy::too_many_arguments)]
pub fn generate_pseudo_person_with(
    garment_image: &Image,
    garment_mask: &BinaryMask,
    person_agnostic_image: &Image,
    agnostic_mask: &BinaryMask,
    denoiser: &dyn Denoiser,
    config: &TryOnConfig,
    prompt_embedding: &Array1<f64>,
    hook: &mut dyn AttentionHook,
) -> Result<Image, PipelineError> {
    config.validate()?;
    same_size(garment_image, garment_mask)?;
    same_size(person_agnostic_image, agnostic_mask)?;
    if garment_image.dim() != person_agnostic_image.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: (person_agnostic_image.dim().0, person_agnostic_image.dim().1),
            got: (garment_image.dim().0, garment_image.dim().1),
        }
        .into());
    }
    let conds = [
        ConditioningBundle::new(
            concat_conditioning(garment_image, &invert_mask(garment_mask))?,
            prompt_embedding.clone(),
        ),
        ConditioningBundle::new(
            concat_conditioning(person_agnostic_image, agnostic_mask)?,
            prompt_embedding.clone(),
        ),
    ];
    let schedule = make_ddim_schedule(config.num_steps, &AlphaProfile::default())?;
    let noise = LatentTensor::seeded_normal(latent_dims(garment_image), config.random_seed);
    let out = ddim_sample_branches(&[noise.clone(), noise], denoiser, &schedule, &conds, hook)?;
    decode_latent(&out[0])
}

/// Fits one homography per region from source to target box corners and
/// warps the source image piecewise into the target frame.
pub fn morph_garment(
    pseudo_person_image: &Image,
    pseudo_skeleton: &Skeleton,
    pseudo_parsing: &SegmentationMap,
    target_skeleton: &Skeleton,
    target_parsing: &SegmentationMap,
    config: &TryOnConfig,
) -> Result<WarpResult, PipelineError> {
    config.validate()?;
    let spec = config.region_spec();
    let src_size = (pseudo_person_image.dim().0, pseudo_person_image.dim().1);
    if pseudo_skeleton.image_size() != src_size {
        return Err(GeometryError::DimensionMismatch {
            expected: src_size,
            got: pseudo_skeleton.image_size(),
        }
        .into());
    }
    let out_size = target_parsing.dims();
    if target_skeleton.image_size() != out_size {
        return Err(GeometryError::DimensionMismatch {
            expected: out_size,
            got: target_skeleton.image_size(),
        }
        .into());
    }
    let src_boxes = build_region_boxes(pseudo_skeleton, &spec, config.confidence_threshold)?;
    let dst_boxes = build_region_boxes(target_skeleton, &spec, config.confidence_threshold)?;
    let masks = region_masks(pseudo_parsing, &src_boxes, &spec)?;

    let mut used = Vec::new();
    let mut homographies = Vec::new();
    let mut skipped = Vec::new();
    for region in &spec.regions {
        let (Some(src), Some(dst)) = (src_boxes.get(region.id), dst_boxes.get(region.id)) else {
            skipped.push((region.id, RegionStatus::Absent));
            continue;
        };
        match estimate_homography(&src.corners(), &dst.corners()) {
            Ok(h) => {
                homographies.push((region.id, h));
                if let Some(m) = masks.iter().find(|m| m.region_id == region.id) {
                    used.push(m.clone());
                }
            }
            Err(e) => {
                info!("region {} skipped: {e}", region.id);
                skipped.push((region.id, RegionStatus::Degenerate));
            }
        }
    }
    if used.is_empty() {
        return Err(GeometryError::AllRegionsAbsent.into());
    }
    let mut result = piecewise_warp(pseudo_person_image, &used, &homographies, out_size)?;
    result.per_region_status.extend(skipped);
    result.per_region_status.sort_by_key(|&(id, _)| id);
    Ok(result)
}

/// Agnostic image where the warp left no coverage, warped garment elsewhere.
pub fn compose_garment_infused(agnostic_image: &Image, warp: &WarpResult) -> Result<Image, PipelineError> {
    if agnostic_image.dim() != warp.image.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: (agnostic_image.dim().0, agnostic_image.dim().1),
            got: (warp.image.dim().0, warp.image.dim().1),
        }
        .into());
    }
    Ok(Array3::from_shape_fn(agnostic_image.dim(), |(y, x, c)| {
        if warp.coverage[(y, x)] {
            warp.image[(y, x, c)]
        } else {
            agnostic_image[(y, x, c)]
        }
    }))
}

/// Pixels the region spec's part labels cover.
fn worn_garment_mask(parsing: &SegmentationMap, spec: &RegionSpec) -> BinaryMask {
    let labels: Vec<u8> = spec
        .regions
        .iter()
        .flat_map(|r| r.part_labels.iter().copied())
        .collect();
    parsing.labels().mapv(|l| labels.contains(&l))
}

/// The full chain: optional pseudo-person generation, morphing,
/// composition, inversion with spectral noise fusion, then dual-branch
/// inpainting with boundary stitching. Errors carry the failing stage.
pub fn run_tryon(
    inputs: &TryOnInputs,
    denoiser: &dyn Denoiser,
    analyzer: &dyn BodyAnalyzer,
    config: &TryOnConfig,
) -> Result<TryOnOutput, PipelineError> {
    config.validate()?;
    config.layer_selection().validate(&denoiser.layers())?;
    let person = &inputs.person;
    let prompt = &inputs.prompt_embedding;
    same_size(&person.image, &person.agnostic_mask).at(Stage::Compose)?;
    let agnostic = agnostic_image(&person.image, &person.agnostic_mask).at(Stage::Compose)?;

    let (source, src_skeleton, src_parsing, garment, garment_mask, pseudo) = match &inputs.garment {
        GarmentSource::Shop { image, mask } => {
            let (g, gm) = relocate_garment(image, mask, &person.agnostic_mask).at(Stage::Relocate)?;
            info!("generating pseudo person");
            let pseudo = generate_pseudo_person(&g, &gm, &agnostic, &person.agnostic_mask, denoiser, config, prompt)
                .at(Stage::PseudoPerson)?;
            let (sk, parse) = analyzer.analyze(&pseudo).at(Stage::BodyAnalysis)?;
            (pseudo.clone(), sk, parse, g, gm, Some(pseudo))
        }
        GarmentSource::Worn {
            image,
            skeleton,
            parsing,
        } => {
            let worn_mask = worn_garment_mask(parsing, &config.region_spec());
            let (g, gm) = relocate_garment(image, &worn_mask, &person.agnostic_mask).at(Stage::Relocate)?;
            (image.clone(), skeleton.clone(), parsing.clone(), g, gm, None)
        }
    };

    info!("morphing garment");
    let warp = morph_garment(
        &source,
        &src_skeleton,
        &src_parsing,
        &person.skeleton,
        &person.parsing,
        config,
    )
    .at(Stage::Morph)?;
    let garment_infused = compose_garment_infused(&agnostic, &warp).at(Stage::Compose)?;

    let z0 = encode_image(&person.image).at(Stage::Encode)?;
    let person_cond = ConditioningBundle::new(
        concat_conditioning(&garment_infused, &person.agnostic_mask).at(Stage::Encode)?,
        prompt.clone(),
    );
    let garment_cond = ConditioningBundle::new(
        concat_conditioning(&garment, &invert_mask(&garment_mask)).at(Stage::Encode)?,
        prompt.clone(),
    );
    let schedule = make_ddim_schedule(config.num_steps, &AlphaProfile::default())?;

    let fresh = LatentTensor::seeded_normal(z0.dims(), config.random_seed.wrapping_add(1));
    let initial_noise = match config.noise_init {
        NoiseInit::Fresh => fresh,
        init => {
            info!("inverting person latent");
            let z_inv = ddim_invert_with(
                &z0,
                denoiser,
                &schedule,
                &person_cond,
                &mut SelfAttentionHook,
                InversionOptions::default(),
            )
            .at(Stage::Inversion)?;
            if init == NoiseInit::Spectral {
                spectral_pose_inject(&z_inv, &fresh, config.tau).at(Stage::SpectralInjection)?
            } else {
                z_inv
            }
        }
    };

    info!("inpainting");
    let (_, lh, lw) = z0.dims();
    let mut hook = CbsHook::new(config.modulated(config.stitching), garment_mask.clone(), (lh, lw));
    let out = ddim_sample_branches(
        &[initial_noise.clone(), initial_noise.clone()],
        denoiser,
        &schedule,
        &[person_cond, garment_cond],
        &mut hook,
    )
    .at(Stage::Inpainting)?;

    let decoded = decode_latent(&out[0]).at(Stage::Decode)?;
    let image = Array3::from_shape_fn(person.image.dim(), |(y, x, c)| {
        if person.agnostic_mask[(y, x)] {
            decoded[(y, x, c)]
        } else {
            person.image[(y, x, c)]
        }
    });
    Ok(TryOnOutput {
        image,
        pseudo_person: pseudo,
        warp,
        garment_infused,
        initial_noise,
    })
}
