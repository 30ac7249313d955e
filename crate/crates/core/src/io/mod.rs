//! File formats: the `VTNK` tensor container, pose keypoint documents,
//! 8-bit PNG masks/images/parsings, and the backend exchange layout.

mod exchange;
mod keypoints;
mod raster;
mod tensor;

use std::path::PathBuf;

use thiserror::Error;

pub use exchange::{
    injection_file_name, read_attention_tensors, read_injection, read_manifest, tensor_file_name,
    write_attention_tensors, write_injection, write_manifest, LayerEntry, Projection, SessionManifest, MANIFEST_FILE,
    NOISE_PREDICTION_FILE,
};
pub use keypoints::{parse_keypoints, read_keypoints, write_keypoints};
pub use raster::{read_image, read_mask, read_parsing, write_image, write_mask, write_parsing, MASK_THRESHOLD};
pub use tensor::{
    decode_tensor, encode_tensor, read_interchange, read_prompt_embedding, read_tensor, write_interchange,
    write_prompt_embedding, write_tensor, InterchangeTensor, DTYPE_F32, MAGIC, VERSION,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, expected \"VTNK\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("expected rank {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("tensor too large to encode: {0}")]
    TooLarge(String),
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("person {person}: expected 75 keypoint numbers, got {got}")]
    WrongKeypointCount { person: usize, got: usize },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown layer '{0}'")]
    UnknownLayer(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Tensor(#[from] crate::TensorError),
    #[error(transparent)]
    Attention(#[from] crate::attention::AttentionError),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_owned(),
        source,
    }
}
