use log::debug;
use ndarray::Array3;

use super::{AttentionHook, ConditioningBundle, Denoiser, PipelineError, SelfAttentionHook, StepContext};
use crate::LatentTensor;

/// Length of the training diffusion profile.
pub const TRAIN_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaProfile {
    /// Betas linearly spaced from `start` to `end` over `steps`.
    LinearBetas { start: f64, end: f64, steps: usize },
    /// Explicit cumulative alpha products, strictly decreasing in (0, 1].
    Custom(Vec<f64>),
}

impl Default for AlphaProfile {
    fn default() -> Self {
        AlphaProfile::LinearBetas {
            start: 1e-4,
            end: 2e-2,
            steps: TRAIN_STEPS,
        }
    }
}

impl AlphaProfile {
    fn alphas_cumprod(&self) -> Result<Vec<f64>, PipelineError> {
        let alphas = match self {
            AlphaProfile::LinearBetas { start, end, steps } => {
                let steps = *steps;
                if steps == 0 || !(0.0 < *start && start <= end && *end < 1.0) {
                    return Err(PipelineError::InvalidProfile(format!(
                        "betas {start}..{end} over {steps} steps"
                    )));
                }
                let mut acc = 1.0;
                (0..steps)
                    .map(|i| {
                        let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                        acc *= 1.0 - (start + (end - start) * frac);
                        acc
                    })
                    .collect()
            }
            AlphaProfile::Custom(a) => a.clone(),
        };
        if alphas.is_empty() {
            return Err(PipelineError::InvalidProfile("empty profile".into()));
        }
        if alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(PipelineError::InvalidProfile("alphas must lie in (0, 1]".into()));
        }
        if alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(PipelineError::InvalidProfile("alphas must strictly decrease".into()));
        }
        Ok(alphas)
    }
}

/// Deterministic (η = 0) DDIM sub-schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DdimSchedule {
    /// Full training profile.
    pub alphas_cumprod: Vec<f64>,
    /// Descending training timesteps visited by the sampler.
    pub timesteps: Vec<usize>,
}

impl DdimSchedule {
    pub fn num_steps(&self) -> usize {
        self.timesteps.len()
    }

    pub fn context(&self, index: usize) -> StepContext {
        let timestep = self.timesteps[index];
        StepContext {
            index,
            timestep,
            alpha_cumprod: self.alphas_cumprod[timestep],
        }
    }

    /// Alpha the sampler lands on after step `index`; 1 after the last.
    pub fn alpha_prev(&self, index: usize) -> f64 {
        self.timesteps.get(index + 1).map_or(1.0, |&t| self.alphas_cumprod[t])
    }

    /// Alpha of the noisiest visited timestep.
    pub fn alpha_terminal(&self) -> f64 {
        self.alphas_cumprod[self.timesteps[0]]
    }
}

/// Trailing spacing: step `k` of `n` visits `(k+1)·T/n − 1`, so the first
/// sampler step always starts from the last training timestep.
pub fn make_ddim_schedule(num_steps: usize, profile: &AlphaProfile) -> Result<DdimSchedule, PipelineError> {
    let alphas_cumprod = profile.alphas_cumprod()?;
    let train = alphas_cumprod.len();
    if num_steps == 0 || num_steps > train {
        return Err(PipelineError::InvalidSteps(num_steps));
    }
    let timesteps = (0..num_steps).rev().map(|k| (k + 1) * train / num_steps - 1).collect();
    Ok(DdimSchedule {
        alphas_cumprod,
        timesteps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionOptions {
    /// Fixed-point refinements per step; 0 is the classic single-evaluation
    /// inversion.
    pub refine_iterations: usize,
    pub tolerance: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            refine_iterations: 50,
            tolerance: 1e-12,
        }
    }
}

impl InversionOptions {
    pub fn naive() -> Self {
        Self {
            refine_iterations: 0,
            tolerance: 0.0,
        }
    }
}

fn check_branches(latents: &[LatentTensor], conds: &[ConditioningBundle]) -> Result<(), PipelineError> {
    if latents.len() != conds.len() {
        return Err(PipelineError::ShapeMismatch(format!(
            "{} latents but {} conditioning bundles",
            latents.len(),
            conds.len()
        )));
    }
    Ok(())
}

fn predict(
    denoiser: &dyn Denoiser,
    latents: &[LatentTensor],
    step: &StepContext,
    conds: &[ConditioningBundle],
    hook: &mut dyn AttentionHook,
) -> Result<Vec<LatentTensor>, PipelineError> {
    let eps = denoiser.predict(latents, step, conds, hook)?;
    if eps.len() != latents.len() {
        return Err(PipelineError::Denoiser(format!(
            "{} predictions for {} latents",
            eps.len(),
            latents.len()
        )));
    }
    for (e, x) in eps.iter().zip(latents) {
        if e.dims() != x.dims() {
            return Err(PipelineError::Denoiser(format!(
                "prediction {:?} for latent {:?}",
                e.dims(),
                x.dims()
            )));
        }
    }
    Ok(eps)
}

/// Moves `x` from alpha `a_from` to `a_to` along the direction `eps`.
fn ddim_move(x: &Array3<f64>, eps: &Array3<f64>, a_from: f64, a_to: f64) -> Array3<f64> {
    let (sf, nf) = (a_from.sqrt(), (1.0 - a_from).sqrt());
    let (st, nt) = (a_to.sqrt(), (1.0 - a_to).sqrt());
    let mut out = x.clone();
    out.zip_mut_with(eps, |xv, &e| {
        let x0 = (*xv - nf * e) / sf;
        *xv = st * x0 + nt * e;
    });
    out
}

/// Lockstep sampling of several branches through one hook.
pub fn ddim_sample_branches(
    initial: &[LatentTensor],
    denoiser: &dyn Denoiser,
    schedule: &DdimSchedule,
    conds: &[ConditioningBundle],
    hook: &mut dyn AttentionHook,
) -> Result<Vec<LatentTensor>, PipelineError> {
    check_branches(initial, conds)?;
    let mut xs = initial.to_vec();
    for k in 0..schedule.num_steps() {
        let ctx = schedule.context(k);
        let eps = predict(denoiser, &xs, &ctx, conds, hook)?;
        let a_prev = schedule.alpha_prev(k);
        xs = xs
            .iter()
            .zip(&eps)
            .map(|(x, e)| LatentTensor::new(ddim_move(x.data(), e.data(), ctx.alpha_cumprod, a_prev)))
            .collect::<Result<_, _>>()?;
        debug!("ddim step {k} t={} done", ctx.timestep);
    }
    Ok(xs)
}

/// Single-branch sampling with plain self-attention.
pub fn ddim_sample(
    initial_noise: &LatentTensor,
    denoiser: &dyn Denoiser,
    schedule: &DdimSchedule,
    conditioning: &ConditioningBundle,
) -> Result<LatentTensor, PipelineError> {
    let mut out = ddim_sample_branches(
        std::slice::from_ref(initial_noise),
        denoiser,
        schedule,
        std::slice::from_ref(conditioning),
        &mut SelfAttentionHook,
    )?;
    Ok(out.remove(0))
}

/// Maps a clean latent to the noise latent that [`ddim_sample`] turns back
/// into it.
pub fn ddim_invert(
    latent0: &LatentTensor,
    denoiser: &dyn Denoiser,
    schedule: &DdimSchedule,
    conditioning: &ConditioningBundle,
) -> Result<LatentTensor, PipelineError> {
    ddim_invert_with(
        latent0,
        denoiser,
        schedule,
        conditioning,
        &mut SelfAttentionHook,
        InversionOptions::default(),
    )
}

/// Each step solves `x_t = move(x_prev, ε(x_t))` by fixed-point iteration,
/// starting from the classic guess `ε(x_prev)`.
pub fn ddim_invert_with(
    latent0: &LatentTensor,
    denoiser: &dyn Denoiser,
    schedule: &DdimSchedule,
    conditioning: &ConditioningBundle,
    hook: &mut dyn AttentionHook,
    options: InversionOptions,
) -> Result<LatentTensor, PipelineError> {
    let conds = std::slice::from_ref(conditioning);
    let mut x_prev = latent0.clone();
    for k in (0..schedule.num_steps()).rev() {
        let ctx = schedule.context(k);
        let a_prev = schedule.alpha_prev(k);
        let eps = predict(denoiser, std::slice::from_ref(&x_prev), &ctx, conds, hook)?.remove(0);
        let mut x = LatentTensor::new(ddim_move(x_prev.data(), eps.data(), a_prev, ctx.alpha_cumprod))?;
        for _ in 0..options.refine_iterations {
            let eps = predict(denoiser, std::slice::from_ref(&x), &ctx, conds, hook)?.remove(0);
            let next = LatentTensor::new(ddim_move(x_prev.data(), eps.data(), a_prev, ctx.alpha_cumprod))?;
            let delta = next.max_abs_diff(&x);
            x = next;
            if delta <= options.tolerance {
                break;
            }
        }
        x_prev = x;
    }
    Ok(x_prev)
}
