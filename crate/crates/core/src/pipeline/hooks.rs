use ndarray::Array2;

use super::{AttentionHook, LayerInfo, PipelineError, StepContext};
use crate::attention::{
    cbs_garment_path, cbs_person_path, downsample_token_mask, extended_attention, merge_heads, self_attention,
    split_heads, AttentionTensors, TokenMask,
};
use crate::geometry::BinaryMask;

/// Which layers a modulating hook acts on. Other layers run plain
/// self-attention.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerSelection {
    #[default]
    All,
    Only(Vec<String>),
    None,
}

impl LayerSelection {
    pub fn contains(&self, id: &str) -> bool {
        match self {
            LayerSelection::All => true,
            LayerSelection::Only(ids) => ids.iter().any(|l| l == id),
            LayerSelection::None => false,
        }
    }

    /// Fails on names the denoiser does not expose.
    pub fn validate(&self, layers: &[LayerInfo]) -> Result<(), PipelineError> {
        if let LayerSelection::Only(ids) = self {
            for id in ids {
                if !layers.iter().any(|l| &l.id == id) {
                    return Err(PipelineError::HookMismatch(format!("unknown layer '{id}'")));
                }
            }
        }
        Ok(())
    }
}

fn heads_of(t: &AttentionTensors, layer: &LayerInfo) -> Result<Vec<AttentionTensors>, PipelineError> {
    if t.dim() != layer.heads * layer.head_dim {
        return Err(PipelineError::HookMismatch(format!(
            "layer {} expects width {}, got {}",
            layer.id,
            layer.heads * layer.head_dim,
            t.dim()
        )));
    }
    let (q, k, v) = (
        split_heads(&t.q, layer.heads)?,
        split_heads(&t.k, layer.heads)?,
        split_heads(&t.v, layer.heads)?,
    );
    q.into_iter()
        .zip(k)
        .zip(v)
        .map(|((q, k), v)| AttentionTensors::new(q, k, v).map_err(Into::into))
        .collect()
}

fn plain(t: &AttentionTensors, layer: &LayerInfo) -> Result<Array2<f64>, PipelineError> {
    let outs: Vec<_> = heads_of(t, layer)?.iter().map(self_attention).collect();
    Ok(merge_heads(&outs)?)
}

fn expect_pair<'a>(
    layer: &LayerInfo,
    branches: &'a [AttentionTensors],
) -> Result<(&'a AttentionTensors, &'a AttentionTensors), PipelineError> {
    match branches {
        [a, b] if a.q.dim() == b.q.dim() => Ok((a, b)),
        [a, b] => Err(PipelineError::HookMismatch(format!(
            "layer {}: branch shapes {:?} and {:?}",
            layer.id,
            a.q.dim(),
            b.q.dim()
        ))),
        _ => Err(PipelineError::HookMismatch(format!(
            "layer {}: expected 2 branches, got {}",
            layer.id,
            branches.len()
        ))),
    }
}

/// Per-branch multi-head self-attention; the unmodified denoiser.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelfAttentionHook;

impl AttentionHook for SelfAttentionHook {
    fn attend(
        &mut self,
        layer: &LayerInfo,
        _step: &StepContext,
        branches: &[AttentionTensors],
    ) -> Result<Vec<Array2<f64>>, PipelineError> {
        branches.iter().map(|t| plain(t, layer)).collect()
    }
}

/// Pseudo-person generation: branch 0 (garment) attends over its own and
/// branch 1's (person) keys and values. Branch 1 is left unmodified.
#[derive(Debug, Clone, Default)]
pub struct ExtendedAttentionHook {
    pub selection: LayerSelection,
}

impl ExtendedAttentionHook {
    pub fn new(selection: LayerSelection) -> Self {
        Self { selection }
    }
}

impl AttentionHook for ExtendedAttentionHook {
    fn attend(
        &mut self,
        layer: &LayerInfo,
        _step: &StepContext,
        branches: &[AttentionTensors],
    ) -> Result<Vec<Array2<f64>>, PipelineError> {
        let (garment, person) = expect_pair(layer, branches)?;
        if !self.selection.contains(&layer.id) {
            return Ok(vec![plain(garment, layer)?, plain(person, layer)?]);
        }
        let g = heads_of(garment, layer)?;
        let p = heads_of(person, layer)?;
        let outs = g
            .iter()
            .zip(&p)
            .map(|(g, p)| extended_attention(g, p.k.view(), p.v.view()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(vec![merge_heads(&outs)?, plain(person, layer)?])
    }
}

/// Bidirectional stitching for the inpainting stage. Branch 0 is the
/// garment-infused person branch, branch 1 the garment branch.
#[derive(Debug, Clone)]
pub struct CbsHook {
    pub selection: LayerSelection,
    garment_mask: BinaryMask,
    latent_size: (usize, usize),
}

impl CbsHook {
    /// `garment_mask` is at any resolution with the latent's aspect; it is
    /// pooled to each layer's token grid on use.
    pub fn new(selection: LayerSelection, garment_mask: BinaryMask, latent_size: (usize, usize)) -> Self {
        Self {
            selection,
            garment_mask,
            latent_size,
        }
    }

    fn token_mask(&self, layer: &LayerInfo, tokens: usize) -> Result<TokenMask, PipelineError> {
        let (h, w) = self.latent_size;
        let grid = tokens_grid(h, w, tokens).ok_or_else(|| {
            PipelineError::HookMismatch(format!("layer {}: {tokens} tokens for a {h}x{w} latent", layer.id))
        })?;
        Ok(downsample_token_mask(&self.garment_mask, grid)?)
    }
}

/// The `(h/s, w/s)` grid with `tokens` cells, for an integer stride `s`.
fn tokens_grid(h: usize, w: usize, tokens: usize) -> Option<(usize, usize)> {
    (1..=h.max(w))
        .map(|s| (h / s, w / s))
        .find(|&(gh, gw)| gh * gw == tokens)
}

impl AttentionHook for CbsHook {
    fn attend(
        &mut self,
        layer: &LayerInfo,
        _step: &StepContext,
        branches: &[AttentionTensors],
    ) -> Result<Vec<Array2<f64>>, PipelineError> {
        let (person, garment) = expect_pair(layer, branches)?;
        if !self.selection.contains(&layer.id) {
            return Ok(vec![plain(person, layer)?, plain(garment, layer)?]);
        }
        let mask = self.token_mask(layer, person.tokens())?;
        let p = heads_of(person, layer)?;
        let g = heads_of(garment, layer)?;
        let mut person_out = Vec::with_capacity(p.len());
        let mut garment_out = Vec::with_capacity(p.len());
        for (p, g) in p.iter().zip(&g) {
            person_out.push(cbs_person_path(p, g, &mask)?);
            garment_out.push(cbs_garment_path(g, p.k.view())?);
        }
        Ok(vec![merge_heads(&person_out)?, merge_heads(&garment_out)?])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapRecord {
    pub layer: String,
    pub step: usize,
    pub inputs: Vec<AttentionTensors>,
    pub outputs: Vec<Array2<f64>>,
}

/// Wraps a hook and records every call.
pub struct RecordingHook<H> {
    pub inner: H,
    pub records: Vec<TapRecord>,
}

impl<H: AttentionHook> RecordingHook<H> {
    pub fn new(inner: H) -> Self {
        Self {
            inner,
            records: Vec::new(),
        }
    }
}

impl<H: AttentionHook> AttentionHook for RecordingHook<H> {
    fn attend(
        &mut self,
        layer: &LayerInfo,
        step: &StepContext,
        branches: &[AttentionTensors],
    ) -> Result<Vec<Array2<f64>>, PipelineError> {
        let outputs = self.inner.attend(layer, step, branches)?;
        self.records.push(TapRecord {
            layer: layer.id.clone(),
            step: step.index,
            inputs: branches.to_vec(),
            outputs: outputs.clone(),
        });
        Ok(outputs)
    }
}
