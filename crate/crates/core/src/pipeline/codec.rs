//! Desk-scale image/latent codec: 8× average pooling into 4 channels and
//! nearest upsampling back.

use ndarray::{concatenate, Array3, Axis};

use super::PipelineError;
use crate::geometry::{BinaryMask, Image};
use crate::LatentTensor;

pub const LATENT_STRIDE: usize = 8;
pub const LATENT_CHANNELS: usize = 4;

fn latent_size(h: usize, w: usize) -> Result<(usize, usize), PipelineError> {
    if h == 0 || w == 0 || !h.is_multiple_of(LATENT_STRIDE) || !w.is_multiple_of(LATENT_STRIDE) {
        return Err(PipelineError::ShapeMismatch(format!(
            "image {h}x{w} is not a positive multiple of {LATENT_STRIDE}"
        )));
    }
    Ok((h / LATENT_STRIDE, w / LATENT_STRIDE))
}

/// RGB in [0,1] → channels (r, g, b, luma), each mapped to [-1, 1] and
/// averaged over 8×8 blocks.
pub fn encode_image(image: &Image) -> Result<LatentTensor, PipelineError> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(PipelineError::ShapeMismatch(format!("expected 3 channels, got {c}")));
    }
    let (lh, lw) = latent_size(h, w)?;
    let area = (LATENT_STRIDE * LATENT_STRIDE) as f64;
    let mut out = Array3::zeros((LATENT_CHANNELS, lh, lw));
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (image[(y, x, 0)], image[(y, x, 1)], image[(y, x, 2)]);
            let luma = 0.299 * r + 0.587 * g + 0.114 * b;
            for (ch, v) in [r, g, b, luma].into_iter().enumerate() {
                out[(ch, y / LATENT_STRIDE, x / LATENT_STRIDE)] += (2.0 * v - 1.0) / area;
            }
        }
    }
    Ok(LatentTensor::new(out)?)
}

/// Inverse of [`encode_image`] up to block averaging; output clamped to [0,1].
pub fn decode_latent(latent: &LatentTensor) -> Result<Image, PipelineError> {
    let (c, lh, lw) = latent.dims();
    if c < 3 {
        return Err(PipelineError::ShapeMismatch(format!("latent has {c} channels")));
    }
    let z = latent.data();
    Ok(Array3::from_shape_fn(
        (lh * LATENT_STRIDE, lw * LATENT_STRIDE, 3),
        |(y, x, ch)| ((z[(ch, y / LATENT_STRIDE, x / LATENT_STRIDE)] + 1.0) / 2.0).clamp(0.0, 1.0),
    ))
}

/// Fraction of set pixels per 8×8 block, as a 1-channel latent.
pub fn downsample_mask(mask: &BinaryMask) -> Result<LatentTensor, PipelineError> {
    let (h, w) = mask.dim();
    let (lh, lw) = latent_size(h, w)?;
    let area = (LATENT_STRIDE * LATENT_STRIDE) as f64;
    let mut out = Array3::zeros((1, lh, lw));
    for ((y, x), &m) in mask.indexed_iter() {
        if m {
            out[(0, y / LATENT_STRIDE, x / LATENT_STRIDE)] += 1.0 / area;
        }
    }
    Ok(LatentTensor::new(out)?)
}

/// Encoded image followed by its pooled mask: the 5-channel concat input.
pub fn concat_conditioning(image: &Image, mask: &BinaryMask) -> Result<LatentTensor, PipelineError> {
    if image.dim().0 != mask.dim().0 || image.dim().1 != mask.dim().1 {
        return Err(PipelineError::ShapeMismatch(format!(
            "image {:?} vs mask {:?}",
            image.dim(),
            mask.dim()
        )));
    }
    let img = encode_image(image)?;
    let m = downsample_mask(mask)?;
    let data = concatenate(Axis(0), &[img.data().view(), m.data().view()])
        .map_err(|e| PipelineError::ShapeMismatch(e.to_string()))?;
    Ok(LatentTensor::new(data)?)
}

/// Person image with the masked region set to mid-gray.
pub fn agnostic_image(image: &Image, mask: &BinaryMask) -> Result<Image, PipelineError> {
    let (h, w, _) = image.dim();
    if mask.dim() != (h, w) {
        return Err(PipelineError::ShapeMismatch(format!(
            "image {h}x{w} vs mask {:?}",
            mask.dim()
        )));
    }
    let mut out = image.clone();
    for ((y, x), &m) in mask.indexed_iter() {
        if m {
            for c in 0..3 {
                out[(y, x, c)] = 0.5;
            }
        }
    }
    Ok(out)
}
