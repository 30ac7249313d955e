use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use ndarray::Array1;
use vtnk_core::geometry::{relocate_garment, GarmentCategory, Image, Skeleton};
use vtnk_core::io::{
    read_image, read_interchange, read_keypoints, read_mask, read_parsing, read_prompt_embedding, read_tensor,
    write_image, write_mask, write_tensor, IoError,
};
use vtnk_core::pipeline::{
    agnostic_image, generate_pseudo_person, morph_garment, run_tryon, Denoiser, FixedAnalysis, GarmentSource,
    PersonInputs, PipelineError, ToyConvDenoiser, ToyInpaintDenoiser, TryOnConfig, TryOnInputs, ZeroDenoiser,
    LATENT_CHANNELS,
};
use vtnk_core::spectral::{spectral_pose_inject, SpectralError};
use vtnk_core::LatentTensor;

use crate::config::{DenoiserKind, GarmentFiles, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable / malformed input files.
    Input(String),
    /// Output could not be written, or a stage failed for reasons the
    /// inputs do not explain.
    Internal(String),
}

impl CliError {
    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Internal(m) => m,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn output(e: IoError) -> CliError {
    CliError::Internal(e.to_string())
}

fn root_cause(e: &PipelineError) -> &PipelineError {
    match e {
        PipelineError::Stage { source, .. } => root_cause(source),
        other => other,
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let internal = match root_cause(&e) {
            PipelineError::Denoiser(_) | PipelineError::Attention(_) | PipelineError::Tensor(_) => true,
            PipelineError::Spectral(s) => !matches!(s, SpectralError::NonPositiveTau(_)),
            _ => false,
        };
        if internal {
            CliError::Internal(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        PipelineError::Spectral(e).into()
    }
}

#[derive(Debug, Parser)]
#[command(name = "vtnk", version, about = "Training-free virtual try-on kernels")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Warp a person's garment regions onto a target pose.
    Morph(MorphArgs),
    /// Fuse the low band of an inverted latent with fresh seeded noise.
    Spi(SpiArgs),
    /// Generate a pseudo person wearing a shop garment.
    Pseudo(PseudoArgs),
    /// Run the full try-on from a config file.
    Tryon(TryonArgs),
    /// Print the shape and value statistics of a tensor file.
    Inspect(InspectArgs),
}

fn parse_category(s: &str) -> Result<GarmentCategory, String> {
    GarmentCategory::parse(s)
        .ok_or_else(|| format!("unknown category {s:?} (upper, lower, dress-upper-section, dress-lower-section)"))
}

#[derive(Debug, Args)]
struct MorphArgs {
    #[arg(long)]
    pseudo_img: PathBuf,
    #[arg(long)]
    pseudo_pose: PathBuf,
    #[arg(long)]
    pseudo_parse: PathBuf,
    #[arg(long)]
    target_pose: PathBuf,
    #[arg(long)]
    target_parse: PathBuf,
    #[arg(long, value_parser = parse_category)]
    category: GarmentCategory,
    #[arg(long)]
    out: PathBuf,
    /// Also write the covered-pixel mask.
    #[arg(long)]
    coverage_out: Option<PathBuf>,
    /// Minimum keypoint confidence.
    #[arg(long, default_value_t = 0.3)]
    threshold: f64,
    /// Pixels added to each side of every region box.
    #[arg(long, default_value_t = 0.0)]
    box_padding: f64,
}

#[derive(Debug, Args)]
struct SpiArgs {
    /// Inverted latent, C×H×W.
    #[arg(long)]
    inv_noise: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Low-pass cutoff as a normalized frequency radius.
    #[arg(long, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PseudoArgs {
    #[arg(long)]
    garment: PathBuf,
    #[arg(long)]
    garment_mask: PathBuf,
    /// Person image; the masked region is blanked before use.
    #[arg(long)]
    agnostic: PathBuf,
    #[arg(long)]
    agnostic_mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Rank-1 prompt embedding tensor.
    #[arg(long)]
    prompt: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DenoiserKind::ToyConv)]
    denoiser: DenoiserKind,
    #[arg(long, default_value_t = 0)]
    denoiser_seed: u64,
    /// Skip person key/value injection.
    #[arg(long)]
    no_injection: bool,
}

#[derive(Debug, Args)]
struct TryonArgs {
    /// TOML run description.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generated pseudo person (shop garments only).
    #[arg(long)]
    pseudo_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_parser = parse_category)]
    category: Option<GarmentCategory>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    file: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Morph(a) => morph(a),
        Command::Spi(a) => spi(a),
        Command::Pseudo(a) => pseudo(a),
        Command::Tryon(a) => tryon(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn first_skeleton(path: &Path, size: (usize, usize)) -> Result<Skeleton, CliError> {
    read_keypoints(path, size)
        .map_err(input)?
        .into_iter()
        .next()
        .ok_or_else(|| CliError::Input(format!("{}: no person in pose file", path.display())))
}

fn size_of(image: &Image) -> (usize, usize) {
    (image.dim().0, image.dim().1)
}

fn build_denoiser(kind: DenoiserKind, seed: u64) -> Box<dyn Denoiser> {
    match kind {
        DenoiserKind::ToyConv => Box::new(ToyConvDenoiser::new(LATENT_CHANNELS, LATENT_CHANNELS + 1, seed)),
        DenoiserKind::ToyInpaint => Box::new(ToyInpaintDenoiser::default()),
        DenoiserKind::Zero => Box::new(ZeroDenoiser),
    }
}

fn read_prompt(path: Option<&Path>) -> Result<Array1<f64>, CliError> {
    match path {
        Some(p) => read_prompt_embedding(p).map_err(input),
        None => Ok(Array1::zeros(0)),
    }
}

fn morph(a: MorphArgs) -> Result<(), CliError> {
    let image = read_image(&a.pseudo_img).map_err(input)?;
    let skeleton = first_skeleton(&a.pseudo_pose, size_of(&image))?;
    let parsing = read_parsing(&a.pseudo_parse).map_err(input)?;
    let target_parsing = read_parsing(&a.target_parse).map_err(input)?;
    let target = first_skeleton(&a.target_pose, target_parsing.dims())?;
    let config = TryOnConfig {
        category: a.category,
        confidence_threshold: a.threshold,
        box_padding: a.box_padding,
        ..TryOnConfig::default()
    };
    let warp = morph_garment(&image, &skeleton, &parsing, &target, &target_parsing, &config)?;
    for (id, status) in &warp.per_region_status {
        info!("region {id}: {status:?}");
    }
    write_image(&a.out, &warp.image).map_err(output)?;
    if let Some(p) = &a.coverage_out {
        write_mask(p, &warp.coverage).map_err(output)?;
    }
    Ok(())
}

fn spi(a: SpiArgs) -> Result<(), CliError> {
    if a.tau.is_nan() || a.tau <= 0.0 {
        return Err(CliError::Input("tau must be positive".into()));
    }
    let z_inv = read_tensor(&a.inv_noise).map_err(input)?;
    let fresh = LatentTensor::seeded_normal(z_inv.dims(), a.seed);
    let fused = spectral_pose_inject(&z_inv, &fresh, a.tau)?;
    write_tensor(&a.out, &fused).map_err(output)
}

fn pseudo(a: PseudoArgs) -> Result<(), CliError> {
    let garment = read_image(&a.garment).map_err(input)?;
    let garment_mask = read_mask(&a.garment_mask).map_err(input)?;
    let person = read_image(&a.agnostic).map_err(input)?;
    let agnostic_mask = read_mask(&a.agnostic_mask).map_err(input)?;
    let prompt = read_prompt(a.prompt.as_deref())?;
    let config = TryOnConfig {
        num_steps: a.steps,
        random_seed: a.seed,
        pseudo_injection: !a.no_injection,
        ..TryOnConfig::default()
    };
    config.validate()?;
    let agnostic = agnostic_image(&person, &agnostic_mask)?;
    let (g, gm) = relocate_garment(&garment, &garment_mask, &agnostic_mask).map_err(input)?;
    let denoiser = build_denoiser(a.denoiser, a.denoiser_seed);
    let image = generate_pseudo_person(&g, &gm, &agnostic, &agnostic_mask, denoiser.as_ref(), &config, &prompt)?;
    write_image(&a.out, &image).map_err(output)
}

fn tryon(a: TryonArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| CliError::Input(format!("{}: {e}", a.config.display())))?;
    let mut run = RunConfig::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", a.config.display())))?;
    run.rebase(a.config.parent().unwrap_or(Path::new(".")));
    let mut config = run.params.clone();
    if let Some(seed) = a.seed {
        config.random_seed = seed;
    }
    if let Some(tau) = a.tau {
        config.tau = tau;
    }
    if let Some(steps) = a.steps {
        config.num_steps = steps;
    }
    if let Some(category) = a.category {
        config.category = category;
    }
    config.validate()?;

    let i = &run.inputs;
    let image = read_image(&i.person).map_err(input)?;
    let person = PersonInputs {
        skeleton: first_skeleton(&i.person_pose, size_of(&image))?,
        parsing: read_parsing(&i.person_parse).map_err(input)?,
        agnostic_mask: read_mask(&i.agnostic_mask).map_err(input)?,
        image,
    };
    let (garment, analysis) = match run.garment().map_err(CliError::Input)? {
        GarmentFiles::Shop {
            image,
            mask,
            pseudo_pose,
            pseudo_parse,
        } => {
            // the pseudo person shares the person's frame
            let analysis = FixedAnalysis {
                skeleton: first_skeleton(&pseudo_pose, size_of(&person.image))?,
                parsing: read_parsing(&pseudo_parse).map_err(input)?,
            };
            let source = GarmentSource::Shop {
                image: read_image(&image).map_err(input)?,
                mask: read_mask(&mask).map_err(input)?,
            };
            (source, Some(analysis))
        }
        GarmentFiles::Worn { image, pose, parse } => {
            let image = read_image(&image).map_err(input)?;
            let source = GarmentSource::Worn {
                skeleton: first_skeleton(&pose, size_of(&image))?,
                parsing: read_parsing(&parse).map_err(input)?,
                image,
            };
            (source, None)
        }
    };
    let inputs = TryOnInputs {
        person,
        garment,
        prompt_embedding: read_prompt(i.prompt.as_deref())?,
    };
    // worn garments never reach the analyzer
    let analyzer = analysis.unwrap_or_else(|| FixedAnalysis {
        skeleton: inputs.person.skeleton.clone(),
        parsing: inputs.person.parsing.clone(),
    });
    let denoiser = build_denoiser(run.denoiser, run.denoiser_seed);
    let out = run_tryon(&inputs, denoiser.as_ref(), &analyzer, &config)?;
    for (id, status) in &out.warp.per_region_status {
        info!("region {id}: {status:?}");
    }
    write_image(&a.out, &out.image).map_err(output)?;
    if let Some(p) = &a.pseudo_out {
        let pseudo = out
            .pseudo_person
            .as_ref()
            .ok_or_else(|| CliError::Input("--pseudo-out needs a shop garment".into()))?;
        write_image(p, pseudo).map_err(output)?;
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let t = read_interchange(&a.file).map_err(input)?;
    let dims = t.dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
    let mut line = format!("dims={dims} dtype=f32");
    if !t.data.is_empty() {
        let n = t.data.len() as f64;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &v in &t.data {
            let v = v as f64;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        let mean = sum / n;
        let var = t.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        line += &format!(" min={min:.6} max={max:.6} mean={mean:.6} std={:.6}", var.sqrt());
    }
    println!("{line}");
    Ok(())
}
