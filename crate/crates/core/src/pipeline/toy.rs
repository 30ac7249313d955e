//! Small deterministic denoisers for tests and desk-scale runs.

use ndarray::{s, Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{AttentionHook, ConditioningBundle, Denoiser, LayerInfo, PipelineError, StepContext};
use crate::attention::AttentionTensors;
use crate::LatentTensor;

fn check_inputs(latents: &[LatentTensor], conds: &[ConditioningBundle]) -> Result<(), PipelineError> {
    if latents.len() != conds.len() {
        return Err(PipelineError::ShapeMismatch(format!(
            "{} latents, {} conditioning bundles",
            latents.len(),
            conds.len()
        )));
    }
    Ok(())
}

fn check_cond(latent: &LatentTensor, cond: &ConditioningBundle, channels: usize) -> Result<(), PipelineError> {
    let (_, h, w) = latent.dims();
    let (cc, ch, cw) = cond.concat_channels.dims();
    if (cc, ch, cw) != (channels, h, w) {
        return Err(PipelineError::ShapeMismatch(format!(
            "conditioning {:?}, expected ({channels}, {h}, {w})",
            (cc, ch, cw)
        )));
    }
    Ok(())
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn layers(&self) -> Vec<LayerInfo> {
        Vec::new()
    }

    fn predict(
        &self,
        latents: &[LatentTensor],
        _step: &StepContext,
        conds: &[ConditioningBundle],
        _hook: &mut dyn AttentionHook,
    ) -> Result<Vec<LatentTensor>, PipelineError> {
        check_inputs(latents, conds)?;
        Ok(latents.iter().map(|x| LatentTensor::zeros(x.dims())).collect())
    }
}

/// Predicts `factor · x`.
#[derive(Debug, Clone, Copy)]
pub struct LinearDenoiser {
    factor: f64,
}

impl LinearDenoiser {
    pub fn new(factor: f64) -> Self {
        Self { factor }
    }
}

impl Denoiser for LinearDenoiser {
    fn layers(&self) -> Vec<LayerInfo> {
        Vec::new()
    }

    fn predict(
        &self,
        latents: &[LatentTensor],
        _step: &StepContext,
        conds: &[ConditioningBundle],
        _hook: &mut dyn AttentionHook,
    ) -> Result<Vec<LatentTensor>, PipelineError> {
        check_inputs(latents, conds)?;
        Ok(latents.iter().map(|x| x.scaled(self.factor)).collect())
    }
}

/// Zero-padded 3×3 convolution; `weights` is `[out][in][3][3]` flattened.
fn conv3x3(input: &Array3<f64>, weights: &[f64], out_ch: usize, bias: &[f64]) -> Array3<f64> {
    let (in_ch, h, w) = input.dim();
    let mut out = Array3::zeros((out_ch, h, w));
    for o in 0..out_ch {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o];
                for i in 0..in_ch {
                    for dy in 0..3 {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let sx = x as isize + dx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            acc += weights[((o * in_ch + i) * 3 + dy) * 3 + dx] * input[(i, sy as usize, sx as usize)];
                        }
                    }
                }
                out[(o, y, x)] = acc;
            }
        }
    }
    out
}

/// Random weights rescaled so every row and column of the unrolled
/// operator has absolute sum `bound`; by Schur's test the operator norm is
/// then at most `bound`.
fn bounded_conv_weights(rng: &mut ChaCha8Rng, out_ch: usize, in_ch: usize, bound: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..out_ch * in_ch * 9).map(|_| rng.sample(StandardNormal)).collect();
    let row_max = (0..out_ch)
        .map(|o| {
            w[o * in_ch * 9..(o + 1) * in_ch * 9]
                .iter()
                .map(|v: &f64| v.abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let col_max = (0..in_ch)
        .map(|i| {
            (0..out_ch)
                .map(|o| {
                    w[(o * in_ch + i) * 9..(o * in_ch + i + 1) * 9]
                        .iter()
                        .map(|v| v.abs())
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let scale = bound / row_max.max(col_max);
    w.iter_mut().for_each(|v| *v *= scale);
    w
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, n), || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Channels-first feature map to `(h·w) × c` tokens, row-major.
fn to_tokens(f: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = f.dim();
    Array2::from_shape_fn((h * w, c), |(t, ch)| f[(ch, t / w, t % w)])
}

fn from_tokens(t: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((t.ncols(), h, w), |(ch, y, x)| t[(y * w + x, ch)])
}

struct ToyAttention {
    info: LayerInfo,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
}

/// Fixed-seed two-layer convolutional noise predictor with residual
/// self-attention layers between the convolutions. Each convolution has
/// operator norm at most 0.45, so the map is a contraction in the latent
/// for small attention gains.
pub struct ToyConvDenoiser {
    latent_channels: usize,
    cond_channels: usize,
    hidden: usize,
    conv1: Vec<f64>,
    bias1: Vec<f64>,
    conv2: Vec<f64>,
    bias2: Vec<f64>,
    attention: Vec<ToyAttention>,
}

impl ToyConvDenoiser {
    const HIDDEN: usize = 8;
    const HEADS: usize = 2;
    const ATTENTION_GAIN: f64 = 0.1;

    pub fn new(latent_channels: usize, cond_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = Self::HIDDEN;
        let conv1 = bounded_conv_weights(&mut rng, hidden, latent_channels + cond_channels, 0.45);
        let bias1 = (0..hidden)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let conv2 = bounded_conv_weights(&mut rng, latent_channels, hidden, 0.45);
        let bias2 = (0..latent_channels)
            .map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let scale = 1.0 / (hidden as f64).sqrt();
        let attention = ["attn-1", "attn-2"]
            .iter()
            .map(|id| ToyAttention {
                info: LayerInfo {
                    id: (*id).to_owned(),
                    heads: Self::HEADS,
                    head_dim: hidden / Self::HEADS,
                },
                wq: random_matrix(&mut rng, hidden, scale),
                wk: random_matrix(&mut rng, hidden, scale),
                wv: random_matrix(&mut rng, hidden, scale),
                wo: random_matrix(&mut rng, hidden, scale * Self::ATTENTION_GAIN),
            })
            .collect();
        Self {
            latent_channels,
            cond_channels,
            hidden,
            conv1,
            bias1,
            conv2,
            bias2,
            attention,
        }
    }
}

impl Denoiser for ToyConvDenoiser {
    fn layers(&self) -> Vec<LayerInfo> {
        self.attention.iter().map(|a| a.info.clone()).collect()
    }

    fn predict(
        &self,
        latents: &[LatentTensor],
        step: &StepContext,
        conds: &[ConditioningBundle],
        hook: &mut dyn AttentionHook,
    ) -> Result<Vec<LatentTensor>, PipelineError> {
        check_inputs(latents, conds)?;
        let phase = step.timestep as f64 / 1000.0;
        let mut hidden = Vec::with_capacity(latents.len());
        for (x, cond) in latents.iter().zip(conds) {
            if x.dims().0 != self.latent_channels {
                return Err(PipelineError::ShapeMismatch(format!(
                    "latent has {} channels, denoiser expects {}",
                    x.dims().0,
                    self.latent_channels
                )));
            }
            check_cond(x, cond, self.cond_channels)?;
            let input = ndarray::concatenate(ndarray::Axis(0), &[x.data().view(), cond.concat_channels.data().view()])
                .expect("spatial dims checked");
            let mut h = conv3x3(&input, &self.conv1, self.hidden, &self.bias1);
            for (c, mut plane) in h.outer_iter_mut().enumerate() {
                let t_embed = 0.1 * (phase * (c + 1) as f64).sin();
                plane.mapv_inplace(|v| (v + t_embed).tanh());
            }
            hidden.push(h);
        }
        for layer in &self.attention {
            let tokens: Vec<Array2<f64>> = hidden.iter().map(to_tokens).collect();
            let tensors = tokens
                .iter()
                .map(|t| AttentionTensors::new(t.dot(&layer.wq), t.dot(&layer.wk), t.dot(&layer.wv)))
                .collect::<Result<Vec<_>, _>>()?;
            let outs = hook.attend(&layer.info, step, &tensors)?;
            if outs.len() != hidden.len() {
                return Err(PipelineError::HookMismatch(format!(
                    "layer {}: {} outputs for {} branches",
                    layer.info.id,
                    outs.len(),
                    hidden.len()
                )));
            }
            for ((h, t), o) in hidden.iter_mut().zip(&tokens).zip(&outs) {
                if o.dim() != t.dim() {
                    return Err(PipelineError::HookMismatch(format!(
                        "layer {}: output {:?}, expected {:?}",
                        layer.info.id,
                        o.dim(),
                        t.dim()
                    )));
                }
                let (_, hh, ww) = h.dim();
                *h = from_tokens(&(t + &o.dot(&layer.wo)), hh, ww);
            }
        }
        hidden
            .iter()
            .map(|h| LatentTensor::new(conv3x3(h, &self.conv2, self.latent_channels, &self.bias2)).map_err(Into::into))
            .collect()
    }
}

/// Attention-driven inpainting toy in ideal-denoiser form: it predicts the
/// noise that would map `x` to a clean estimate `x̂₀` built from the
/// conditioning image.
///
/// Conditioning is the 4-channel encoded image plus a 1-channel inpaint
/// mask. Outside the mask `x̂₀` is the conditioning image; inside it is the
/// output of one self-attention layer whose values are the conditioning
/// tokens, so masked tokens are filled with a similarity-weighted average
/// of image content. Head 0 matches on content only, head 1 on content
/// plus the current latent.
pub struct ToyInpaintDenoiser {
    info: LayerInfo,
    sharpness: f64,
    latent_gain: f64,
}

impl ToyInpaintDenoiser {
    pub const CHANNELS: usize = 4;

    pub fn new(sharpness: f64, latent_gain: f64) -> Self {
        Self {
            info: LayerInfo {
                id: "stitch".into(),
                heads: 2,
                head_dim: Self::CHANNELS,
            },
            sharpness,
            latent_gain,
        }
    }
}

impl Default for ToyInpaintDenoiser {
    fn default() -> Self {
        Self::new(4.0, 0.05)
    }
}

impl Denoiser for ToyInpaintDenoiser {
    fn layers(&self) -> Vec<LayerInfo> {
        vec![self.info.clone()]
    }

    fn predict(
        &self,
        latents: &[LatentTensor],
        step: &StepContext,
        conds: &[ConditioningBundle],
        hook: &mut dyn AttentionHook,
    ) -> Result<Vec<LatentTensor>, PipelineError> {
        check_inputs(latents, conds)?;
        let c_n = Self::CHANNELS;
        let a = step.alpha_cumprod;
        let mut tensors = Vec::with_capacity(latents.len());
        let mut content = Vec::with_capacity(latents.len());
        for (x, cond) in latents.iter().zip(conds) {
            if x.dims().0 != c_n {
                return Err(PipelineError::ShapeMismatch(format!(
                    "latent has {} channels",
                    x.dims().0
                )));
            }
            check_cond(x, cond, c_n + 1)?;
            let c = to_tokens(&cond.concat_channels.data().slice(s![..c_n, .., ..]).to_owned());
            let xt = to_tokens(x.data());
            let n = c.nrows();
            let mut q = Array2::zeros((n, 2 * c_n));
            let mut v = Array2::zeros((n, 2 * c_n));
            q.slice_mut(s![.., ..c_n]).assign(&(&c * self.sharpness));
            q.slice_mut(s![.., c_n..])
                .assign(&((&c + &(&xt * (self.latent_gain * a.sqrt()))) * self.sharpness));
            v.slice_mut(s![.., ..c_n]).assign(&c);
            v.slice_mut(s![.., c_n..]).assign(&c);
            tensors.push(AttentionTensors::new(q.clone(), q, v)?);
            content.push(c);
        }
        let outs = hook.attend(&self.info, step, &tensors)?;
        if outs.len() != latents.len() {
            return Err(PipelineError::HookMismatch(format!(
                "{} outputs for {} branches",
                outs.len(),
                latents.len()
            )));
        }
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        latents
            .iter()
            .zip(conds)
            .zip(content.iter().zip(&outs))
            .map(|((x, cond), (c, o))| {
                let (_, h, w) = x.dims();
                if o.dim() != (h * w, 2 * c_n) {
                    return Err(PipelineError::HookMismatch(format!("output {:?}", o.dim())));
                }
                let filled = (&o.slice(s![.., ..c_n]) + &o.slice(s![.., c_n..])) * 0.5;
                let mask: Array1<f64> = cond
                    .concat_channels
                    .data()
                    .slice(s![c_n, .., ..])
                    .iter()
                    .copied()
                    .collect();
                let m = mask.insert_axis(ndarray::Axis(1));
                let x0 = c * &(1.0 - &m) + &(&filled * &m);
                let x0 = from_tokens(&x0, h, w);
                LatentTensor::new((x.data() - &(x0 * sa)) / sn).map_err(Into::into)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{RecordingHook, SelfAttentionHook};

    fn ctx(alpha: f64) -> StepContext {
        StepContext {
            index: 0,
            timestep: 500,
            alpha_cumprod: alpha,
        }
    }

    #[test]
    fn conv_weights_have_bounded_sums() {
        let w = bounded_conv_weights(&mut ChaCha8Rng::seed_from_u64(1), 3, 5, 0.45);
        for o in 0..3 {
            assert!(w[o * 45..(o + 1) * 45].iter().map(|v| v.abs()).sum::<f64>() <= 0.45 + 1e-12);
        }
    }

    #[test]
    fn toy_conv_is_deterministic_and_contractive() {
        let den = ToyConvDenoiser::new(4, 5, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cond = ConditioningBundle::new(LatentTensor::random_normal((5, 5, 6), &mut rng), Array1::zeros(2));
        let x = LatentTensor::random_normal((4, 5, 6), &mut rng);
        let y = LatentTensor::random_normal((4, 5, 6), &mut rng);
        let c2 = [cond.clone(), cond];
        let e = den
            .predict(&[x.clone(), y.clone()], &ctx(0.5), &c2, &mut SelfAttentionHook)
            .unwrap();
        let e2 = den
            .predict(&[x.clone(), y.clone()], &ctx(0.5), &c2, &mut SelfAttentionHook)
            .unwrap();
        assert_eq!(e, e2);
        let diff = LatentTensor::new(e[0].data() - e[1].data()).unwrap();
        let input = LatentTensor::new(x.data() - y.data()).unwrap();
        assert!(diff.norm() < input.norm());
        assert_eq!(e[0].dims(), x.dims());
    }

    #[test]
    fn toy_conv_fires_hooks_per_layer() {
        let den = ToyConvDenoiser::new(4, 5, 9);
        let cond = ConditioningBundle::new(LatentTensor::zeros((5, 2, 3)), Array1::zeros(2));
        let mut rec = RecordingHook::new(SelfAttentionHook);
        den.predict(
            &[LatentTensor::zeros((4, 2, 3))],
            &ctx(0.5),
            std::slice::from_ref(&cond),
            &mut rec,
        )
        .unwrap();
        let ids: Vec<_> = rec.records.iter().map(|r| r.layer.as_str()).collect();
        assert_eq!(ids, ["attn-1", "attn-2"]);
        assert_eq!(rec.records[0].inputs[0].q.dim(), (6, 8));
        let bad = ConditioningBundle::new(LatentTensor::zeros((3, 2, 3)), Array1::zeros(2));
        assert!(den
            .predict(&[LatentTensor::zeros((4, 2, 3))], &ctx(0.5), &[bad], &mut rec)
            .is_err());
    }

    #[test]
    fn inpaint_toy_keeps_unmasked_content() {
        let den = ToyInpaintDenoiser::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut concat = LatentTensor::random_normal((5, 3, 3), &mut rng).into_data();
        concat.slice_mut(s![4, .., ..]).fill(0.0);
        let cond = ConditioningBundle::new(LatentTensor::new(concat.clone()).unwrap(), Array1::zeros(1));
        let x = LatentTensor::random_normal((4, 3, 3), &mut rng);
        let a: f64 = 0.3;
        let eps = den
            .predict(std::slice::from_ref(&x), &ctx(a), &[cond], &mut SelfAttentionHook)
            .unwrap();
        // with no mask, x̂₀ is the conditioning image exactly
        let x0 = (x.data() - &(eps[0].data() * (1.0 - a).sqrt())) / a.sqrt();
        let diff = (&x0 - &concat.slice(s![..4, .., ..]))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12);
    }
}
