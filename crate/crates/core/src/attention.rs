//! Attention-modulation operators.
//!
//! All operators act on a single head: `n×d` query/key/value matrices with
//! logits scaled by `1/√d`. Splitting and merging heads is the caller's job.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::geometry::BinaryMask;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("attention tensors must be non-empty and finite")]
    InvalidTensors,
    #[error("cannot pool a {from:?} mask to {to:?}")]
    InvalidTarget { from: (usize, usize), to: (usize, usize) },
}

/// Query, key and value for one head, each `n×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

impl AttentionTensors {
    pub fn new(q: Array2<f64>, k: Array2<f64>, v: Array2<f64>) -> Result<Self, AttentionError> {
        let (n, d) = q.dim();
        if n == 0 || d == 0 {
            return Err(AttentionError::InvalidTensors);
        }
        if k.dim() != (n, d) || v.dim() != (n, d) {
            return Err(AttentionError::DimMismatch(format!(
                "q {:?}, k {:?}, v {:?}",
                q.dim(),
                k.dim(),
                v.dim()
            )));
        }
        if q.iter().chain(k.iter()).chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(AttentionError::InvalidTensors);
        }
        Ok(Self { q, k, v })
    }

    pub fn tokens(&self) -> usize {
        self.q.nrows()
    }

    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    /// Default logit scale `1/√d`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.dim() as f64).sqrt()
    }
}

/// Per-token gate in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMask {
    weights: Array1<f64>,
}

impl TokenMask {
    pub fn new(weights: Array1<f64>) -> Result<Self, AttentionError> {
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(AttentionError::InvalidTensors);
        }
        Ok(Self { weights })
    }

    pub fn ones(n: usize) -> Self {
        Self {
            weights: Array1::ones(n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            weights: Array1::zeros(n),
        }
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Row-stochastic attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub weights: Array2<f64>,
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn check_dim(a: usize, b: usize, what: &str) -> Result<(), AttentionError> {
    if a != b {
        return Err(AttentionError::DimMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

fn logits(q: ArrayView2<f64>, keys: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    q.dot(&keys.t()) * scale
}

/// `Softmax(Q_c [K_c ∥ K_p]ᵀ · scale) [V_c ∥ V_p]`.
pub fn extended_attention_with_scale(
    garment: &AttentionTensors,
    person_k: ArrayView2<f64>,
    person_v: ArrayView2<f64>,
    scale: f64,
) -> Result<Array2<f64>, AttentionError> {
    check_dim(person_k.ncols(), garment.dim(), "person key width")?;
    check_dim(person_v.ncols(), garment.dim(), "person value width")?;
    check_dim(person_k.nrows(), person_v.nrows(), "person token count")?;
    let keys = concatenate(Axis(0), &[garment.k.view(), person_k]).expect("widths checked");
    let values = concatenate(Axis(0), &[garment.v.view(), person_v]).expect("widths checked");
    let weights = softmax_rows(&logits(garment.q.view(), keys.view(), scale));
    Ok(weights.dot(&values))
}

/// Garment self-attention extended with the person branch's keys and values.
pub fn extended_attention(
    garment: &AttentionTensors,
    person_k: ArrayView2<f64>,
    person_v: ArrayView2<f64>,
) -> Result<Array2<f64>, AttentionError> {
    extended_attention_with_scale(garment, person_k, person_v, garment.scale())
}

/// Plain `Softmax(QKᵀ/√d) V`.
pub fn self_attention(t: &AttentionTensors) -> Array2<f64> {
    softmax_rows(&logits(t.q.view(), t.k.view(), t.scale())).dot(&t.v)
}

pub fn cbs_person_path_with_scale(
    person: &AttentionTensors,
    garment: &AttentionTensors,
    mask: &TokenMask,
    scale: f64,
) -> Result<Array2<f64>, AttentionError> {
    check_dim(garment.dim(), person.dim(), "head dim")?;
    check_dim(mask.len(), garment.tokens(), "token mask length")?;
    let gated = &garment.v * &mask.weights.view().insert_axis(Axis(1));
    extended_attention_with_scale(person, garment.k.view(), gated.view(), scale)
}

/// Person-path stitching: the garment-infused branch also attends to the
/// garment branch, whose values are gated by the downsampled garment mask.
pub fn cbs_person_path(
    person: &AttentionTensors,
    garment: &AttentionTensors,
    mask: &TokenMask,
) -> Result<Array2<f64>, AttentionError> {
    cbs_person_path_with_scale(person, garment, mask, person.scale())
}

/// The full `n×2n` map `Softmax(Q_c [K_c ∥ K_p′]ᵀ · scale)`.
pub fn cbs_garment_attention_map(
    garment: &AttentionTensors,
    person_keys: ArrayView2<f64>,
    scale: f64,
) -> Result<AttentionMap, AttentionError> {
    check_dim(person_keys.ncols(), garment.dim(), "person key width")?;
    check_dim(person_keys.nrows(), garment.tokens(), "token count")?;
    let keys = concatenate(Axis(0), &[garment.k.view(), person_keys]).expect("widths checked");
    Ok(AttentionMap {
        weights: softmax_rows(&logits(garment.q.view(), keys.view(), scale)),
    })
}

pub fn cbs_garment_path_with_scale(
    garment: &AttentionTensors,
    person_keys: ArrayView2<f64>,
    scale: f64,
) -> Result<Array2<f64>, AttentionError> {
    let map = cbs_garment_attention_map(garment, person_keys, scale)?;
    let n = garment.tokens();
    // First n columns only; deliberately not renormalized.
    Ok(map.weights.slice(s![.., ..n]).dot(&garment.v))
}

/// Garment-path stitching: the garment branch's keys compete with the
/// person branch's keys, but only the garment's own values are read.
pub fn cbs_garment_path(
    garment: &AttentionTensors,
    person_keys: ArrayView2<f64>,
) -> Result<Array2<f64>, AttentionError> {
    cbs_garment_path_with_scale(garment, person_keys, garment.scale())
}

/// Splits `n×(h·d)` into `h` column blocks of width `d`.
pub fn split_heads(x: &Array2<f64>, heads: usize) -> Result<Vec<Array2<f64>>, AttentionError> {
    if heads == 0 || !x.ncols().is_multiple_of(heads) {
        return Err(AttentionError::DimMismatch(format!(
            "{} columns across {heads} heads",
            x.ncols()
        )));
    }
    let d = x.ncols() / heads;
    Ok((0..heads)
        .map(|h| x.slice(s![.., h * d..(h + 1) * d]).to_owned())
        .collect())
}

pub fn merge_heads(heads: &[Array2<f64>]) -> Result<Array2<f64>, AttentionError> {
    let views: Vec<_> = heads.iter().map(|h| h.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| AttentionError::DimMismatch(e.to_string()))
}

/// Area-average pooling of a binary mask to `target = (h, w)`, flattened
/// row-major. Non-integer ratios use fractional pixel overlaps.
pub fn downsample_token_mask(mask_image: &BinaryMask, target: (usize, usize)) -> Result<TokenMask, AttentionError> {
    let (mh, mw) = mask_image.dim();
    let (th, tw) = target;
    if th == 0 || tw == 0 || th > mh || tw > mw {
        return Err(AttentionError::InvalidTarget {
            from: (mh, mw),
            to: target,
        });
    }
    let spans = |n_src: usize, n_dst: usize, i: usize| -> Vec<(usize, f64)> {
        let step = n_src as f64 / n_dst as f64;
        let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
        (a.floor() as usize..(b.ceil() as usize).min(n_src))
            .filter_map(|p| {
                let overlap = (b.min(p as f64 + 1.0) - a.max(p as f64)).max(0.0);
                (overlap > 0.0).then_some((p, overlap))
            })
            .collect()
    };
    let mut weights = Array1::zeros(th * tw);
    for i in 0..th {
        let ys = spans(mh, th, i);
        for j in 0..tw {
            let xs = spans(mw, tw, j);
            let (mut on, mut area) = (0.0, 0.0);
            for &(y, wy) in &ys {
                for &(x, wx) in &xs {
                    area += wy * wx;
                    if mask_image[(y, x)] {
                        on += wy * wx;
                    }
                }
            }
            weights[i * tw + j] = (on / area).clamp(0.0, 1.0);
        }
    }
    Ok(TokenMask { weights })
}
