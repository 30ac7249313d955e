//! Frequency-domain fusion of an inversion latent with fresh noise.
//!
//! Both latents are transformed per channel with an unnormalized 2-D DFT and
//! shifted so DC sits at `(⌊H/2⌋, ⌊W/2⌋)`. A Gaussian low-pass mask keeps
//! the low band of the inversion latent and takes the rest from the random
//! latent; the inverse transform carries the `1/(H·W)` factor.

use ndarray::{Array2, Array3, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;
use thiserror::Error;

pub use crate::tensor::LatentTensor;

/// Largest tolerated ‖imag‖ / ‖real‖ after the inverse transform.
pub const MAX_IMAGINARY_RATIO: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("tau must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("imaginary residual {ratio:e} of the real-part norm exceeds {MAX_IMAGINARY_RATIO:e}")]
    ExcessiveImaginaryResidual { ratio: f64 },
    #[error("spectrum contains non-finite values")]
    NonFinite,
    #[error("mask is {mask:?} but spectrum is {spectrum:?}")]
    MaskShapeMismatch {
        mask: (usize, usize),
        spectrum: (usize, usize),
    },
}

/// Centered complex spectrum, C×H×W.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    data: Array3<Complex64>,
}

impl Spectrum {
    pub fn new(data: Array3<Complex64>) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Index of the DC bin after centering.
    pub fn center(&self) -> (usize, usize) {
        let (_, h, w) = self.dims();
        (h / 2, w / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMask {
    weights: Array2<f64>,
    tau: f64,
}

impl GaussianMask {
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Mask of all-equal weights; handy for the fusion limits.
    pub fn uniform(height: usize, width: usize, value: f64) -> Self {
        Self {
            weights: Array2::from_elem((height, width), value.clamp(0.0, 1.0)),
            tau: f64::NAN,
        }
    }
}

/// Normalized frequency of centered bin `index` along an axis of length `n`,
/// in cycles per sample, range `[-0.5, 0.5)`.
pub fn normalized_frequency(index: usize, n: usize) -> f64 {
    (index as f64 - (n / 2) as f64) / n as f64
}

pub fn gaussian_lowpass_mask(height: usize, width: usize, tau: f64) -> Result<GaussianMask, SpectralError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(SpectralError::NonPositiveTau(tau));
    }
    let two_tau_sq = 2.0 * tau * tau;
    let weights = Array2::from_shape_fn((height, width), |(u, v)| {
        let fu = normalized_frequency(u, height);
        let fv = normalized_frequency(v, width);
        (-(fu * fu + fv * fv) / two_tau_sq).exp()
    });
    Ok(GaussianMask { weights, tau })
}

struct Plan2d {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

impl Plan2d {
    fn new(height: usize, width: usize, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        if inverse {
            Self {
                rows: planner.plan_fft_inverse(width),
                cols: planner.plan_fft_inverse(height),
            }
        } else {
            Self {
                rows: planner.plan_fft_forward(width),
                cols: planner.plan_fft_forward(height),
            }
        }
    }

    /// In-place 2-D transform of a row-major H×W plane.
    fn run(&self, plane: &mut [Complex64], height: usize, width: usize) {
        for row in plane.chunks_exact_mut(width) {
            self.rows.process(row);
        }
        let mut column = vec![Complex64::default(); height];
        for x in 0..width {
            for y in 0..height {
                column[y] = plane[y * width + x];
            }
            self.cols.process(&mut column);
            for y in 0..height {
                plane[y * width + x] = column[y];
            }
        }
    }
}

/// Moves bin (r, c) to ((r + sh) mod H, (c + sw) mod W).
fn roll(plane: &[Complex64], height: usize, width: usize, sh: usize, sw: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); plane.len()];
    for r in 0..height {
        for c in 0..width {
            out[((r + sh) % height) * width + (c + sw) % width] = plane[r * width + c];
        }
    }
    out
}

pub fn fft_centered(latent: &LatentTensor) -> Spectrum {
    let (channels, h, w) = latent.dims();
    let plan = Plan2d::new(h, w, false);
    let mut data = Array3::<Complex64>::zeros((channels, h, w));
    for (src, mut dst) in latent.data().axis_iter(Axis(0)).zip(data.axis_iter_mut(Axis(0))) {
        let mut plane: Vec<Complex64> = src.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        plan.run(&mut plane, h, w);
        let shifted = roll(&plane, h, w, h / 2, w / 2);
        for (d, s) in dst.iter_mut().zip(shifted) {
            *d = s;
        }
    }
    Spectrum { data }
}

/// Inverse shift and inverse transform. The imaginary part is dropped once it
/// is confirmed negligible.
pub fn ifft_centered(spectrum: &Spectrum) -> Result<LatentTensor, SpectralError> {
    let (channels, h, w) = spectrum.dims();
    let plan = Plan2d::new(h, w, true);
    let norm = 1.0 / (h * w) as f64;
    let mut out = Array3::<f64>::zeros((channels, h, w));
    let mut real_sq = 0.0;
    let mut imag_sq = 0.0;
    for (src, mut dst) in spectrum.data.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let plane: Vec<Complex64> = src.iter().copied().collect();
        let mut plane = roll(&plane, h, w, h.div_ceil(2), w.div_ceil(2));
        plan.run(&mut plane, h, w);
        for (d, s) in dst.iter_mut().zip(plane) {
            let v = s * norm;
            real_sq += v.re * v.re;
            imag_sq += v.im * v.im;
            *d = v.re;
        }
    }
    let ratio = if real_sq > 0.0 {
        (imag_sq / real_sq).sqrt()
    } else if imag_sq > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    if ratio.is_nan() {
        return Err(SpectralError::NonFinite);
    }
    if ratio > MAX_IMAGINARY_RATIO {
        return Err(SpectralError::ExcessiveImaginaryResidual { ratio });
    }
    LatentTensor::new(out).map_err(|_| SpectralError::NonFinite)
}

/// `mask ⊙ f_inv + (1 − mask) ⊙ f_rand`, mask broadcast over channels.
pub fn fuse_spectra(f_inv: &Spectrum, f_rand: &Spectrum, mask: &GaussianMask) -> Result<Spectrum, SpectralError> {
    if f_inv.dims() != f_rand.dims() {
        return Err(SpectralError::ShapeMismatch(f_inv.dims(), f_rand.dims()));
    }
    let (channels, h, w) = f_inv.dims();
    if mask.weights.dim() != (h, w) {
        return Err(SpectralError::MaskShapeMismatch {
            mask: mask.weights.dim(),
            spectrum: (h, w),
        });
    }
    let data = Array3::from_shape_fn((channels, h, w), |(c, u, v)| {
        let (a, b) = (f_inv.data[(c, u, v)], f_rand.data[(c, u, v)]);
        if a == b {
            // g·a + (1−g)·a can round away from a
            return a;
        }
        let g = mask.weights[(u, v)];
        a * g + b * (1.0 - g)
    });
    Ok(Spectrum { data })
}

/// Keeps the low band of `z_inv` and the high band of `z_rand`.
pub fn spectral_pose_inject(
    z_inv: &LatentTensor,
    z_rand: &LatentTensor,
    tau: f64,
) -> Result<LatentTensor, SpectralError> {
    if z_inv.dims() != z_rand.dims() {
        return Err(SpectralError::ShapeMismatch(z_inv.dims(), z_rand.dims()));
    }
    let (_, h, w) = z_inv.dims();
    let mask = gaussian_lowpass_mask(h, w, tau)?;
    let fused = fuse_spectra(&fft_centered(z_inv), &fft_centered(z_rand), &mask)?;
    ifft_centered(&fused)
}
