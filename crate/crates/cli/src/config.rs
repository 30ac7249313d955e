//! `tryon` config file.
//!
//! ```toml
//! denoiser = "toy-inpaint"        # toy-conv | toy-inpaint | zero
//! denoiser_seed = 7
//!
//! [inputs]                        # paths relative to this file
//! person = "person.png"
//! person_pose = "person.json"
//! person_parse = "person_parse.png"
//! agnostic_mask = "agnostic.png"
//! prompt = "prompt.vtnk"          # optional rank-1 tensor
//!
//! # shop garment ...
//! garment = "garment.png"
//! garment_mask = "garment_mask.png"
//! pseudo_pose = "pseudo.json"     # pose of the generated pseudo person
//! pseudo_parse = "pseudo_parse.png"
//! # ... or a garment worn by someone
//! worn = "model.png"
//! worn_pose = "model.json"
//! worn_parse = "model_parse.png"
//!
//! [params]                        # any TryOnConfig field
//! tau = 0.1
//! num_steps = 50
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vtnk_core::pipeline::TryOnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    #[default]
    ToyConv,
    ToyInpaint,
    Zero,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub denoiser: DenoiserKind,
    #[serde(default)]
    pub denoiser_seed: u64,
    pub inputs: Inputs,
    #[serde(default)]
    pub params: TryOnConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub person: PathBuf,
    pub person_pose: PathBuf,
    pub person_parse: PathBuf,
    pub agnostic_mask: PathBuf,
    pub prompt: Option<PathBuf>,
    pub garment: Option<PathBuf>,
    pub garment_mask: Option<PathBuf>,
    pub pseudo_pose: Option<PathBuf>,
    pub pseudo_parse: Option<PathBuf>,
    pub worn: Option<PathBuf>,
    pub worn_pose: Option<PathBuf>,
    pub worn_parse: Option<PathBuf>,
}

pub enum GarmentFiles {
    Shop {
        image: PathBuf,
        mask: PathBuf,
        pseudo_pose: PathBuf,
        pseudo_parse: PathBuf,
    },
    Worn {
        image: PathBuf,
        pose: PathBuf,
        parse: PathBuf,
    },
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_owned())
    }

    /// Resolves relative input paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let i = &mut self.inputs;
        for p in [
            &mut i.person,
            &mut i.person_pose,
            &mut i.person_parse,
            &mut i.agnostic_mask,
        ] {
            *p = base.join(&*p);
        }
        for p in [
            &mut i.prompt,
            &mut i.garment,
            &mut i.garment_mask,
            &mut i.pseudo_pose,
            &mut i.pseudo_parse,
            &mut i.worn,
            &mut i.worn_pose,
            &mut i.worn_parse,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
    }

    pub fn garment(&self) -> Result<GarmentFiles, String> {
        let i = &self.inputs;
        let shop = [&i.garment, &i.garment_mask, &i.pseudo_pose, &i.pseudo_parse];
        let worn = [&i.worn, &i.worn_pose, &i.worn_parse];
        let any_shop = shop.iter().any(|p| p.is_some());
        let any_worn = worn.iter().any(|p| p.is_some());
        match (any_shop, any_worn) {
            (true, true) => Err("inputs name both a shop garment and a worn garment".into()),
            (false, false) => Err("inputs name no garment".into()),
            (true, false) => match shop.map(Clone::clone) {
                [Some(image), Some(mask), Some(pseudo_pose), Some(pseudo_parse)] => Ok(GarmentFiles::Shop {
                    image,
                    mask,
                    pseudo_pose,
                    pseudo_parse,
                }),
                _ => Err("shop garment needs garment, garment_mask, pseudo_pose and pseudo_parse".into()),
            },
            (false, true) => match worn.map(Clone::clone) {
                [Some(image), Some(pose), Some(parse)] => Ok(GarmentFiles::Worn { image, pose, parse }),
                _ => Err("worn garment needs worn, worn_pose and worn_parse".into()),
            },
        }
    }
}
