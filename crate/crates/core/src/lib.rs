//! Kernels for training-free virtual try-on.
//!
//! * [`geometry`]: skeleton/parsing-driven region correspondence, homography
//!   fitting and piecewise perspective garment warping.
//! * [`spectral`]: frequency-domain fusion of inversion noise with fresh noise.
//! * [`attention`]: the attention-modulation operators used during generation.
//! * [`pipeline`]: DDIM scheduling, inversion and the two-stage try-on flow
//!   against an abstract [`pipeline::Denoiser`].
//! * [`io`]: tensor interchange, keypoint, mask and image files.

pub mod attention;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod spectral;
pub mod synthetic;
mod tensor;

pub use tensor::{LatentTensor, TensorError};
