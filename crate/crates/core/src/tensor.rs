use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor dimensions must be positive, got {0:?}")]
    EmptyDims((usize, usize, usize)),
    #[error("tensor contains non-finite values")]
    NonFinite,
}

/// Real C×H×W latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    data: Array3<f64>,
}

impl LatentTensor {
    pub fn new(data: Array3<f64>) -> Result<Self, TensorError> {
        let dims = data.dim();
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(TensorError::EmptyDims(dims));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self::new(Array3::zeros(dims)).expect("zeros with positive dims")
    }

    pub fn constant(dims: (usize, usize, usize), value: f64) -> Self {
        Self::new(Array3::from_elem(dims, value)).expect("finite constant")
    }

    /// I.i.d. standard normal entries.
    pub fn random_normal<R: Rng + ?Sized>(dims: (usize, usize, usize), rng: &mut R) -> Self {
        let data = Array3::from_shape_simple_fn(dims, || rng.sample::<f64, _>(StandardNormal));
        Self::new(data).expect("normal samples are finite")
    }

    /// Standard normal entries from a ChaCha8 stream seeded with `seed`.
    pub fn seeded_normal(dims: (usize, usize, usize), seed: u64) -> Self {
        Self::random_normal(dims, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    /// (channels, height, width)
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: &self.data * factor,
        }
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> f64 {
        assert_eq!(self.dims(), other.dims(), "shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
