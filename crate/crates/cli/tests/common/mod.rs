#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vtnk_core::io::{write_image, write_keypoints, write_mask, write_parsing, write_prompt_embedding};
use vtnk_core::synthetic::{dilate, render_figure, FigureParams, Scene};

pub const SIZE: (usize, usize) = (96, 64);

pub fn vtnk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtnk"))
        .args(args)
        .env_remove("VTNK_LOG")
        .output()
        .expect("spawn vtnk")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn target_params() -> FigureParams {
    FigureParams::fitted(SIZE.0, SIZE.1)
}

pub fn source_params() -> FigureParams {
    let mut p = target_params();
    p.elbow = (0.16 * SIZE.1 as f64, 0.08 * SIZE.0 as f64);
    p.wrist = (0.26 * SIZE.1 as f64, 0.14 * SIZE.0 as f64);
    p
}

/// Synthetic person and garment files written to one directory.
pub struct Fixtures {
    pub dir: PathBuf,
    pub target: Scene,
    pub source: Scene,
}

impl Fixtures {
    pub fn write(dir: &Path) -> Self {
        let target = render_figure(SIZE, &target_params());
        let source = render_figure(SIZE, &source_params());
        let p = |name: &str| dir.join(name);
        for (prefix, scene) in [("person", &target), ("model", &source)] {
            write_image(&p(&format!("{prefix}.png")), &scene.image).unwrap();
            write_keypoints(&p(&format!("{prefix}.json")), std::slice::from_ref(&scene.skeleton)).unwrap();
            write_parsing(&p(&format!("{prefix}_parse.png")), &scene.parsing).unwrap();
        }
        write_mask(&p("agnostic.png"), &dilate(&target.garment_mask, 2)).unwrap();
        let mut flat = source.image.clone();
        for ((y, x), &m) in source.garment_mask.indexed_iter() {
            if !m {
                for c in 0..3 {
                    flat[(y, x, c)] = 1.0;
                }
            }
        }
        write_image(&p("garment.png"), &flat).unwrap();
        write_mask(&p("garment_mask.png"), &source.garment_mask).unwrap();
        write_prompt_embedding(&p("prompt.vtnk"), &ndarray::Array1::linspace(-1.0, 1.0, 8)).unwrap();
        Self {
            dir: dir.to_owned(),
            target,
            source,
        }
    }

    pub fn path(&self, name: &str) -> String {
        self.dir.join(name).to_string_lossy().into_owned()
    }

    /// Writes `name` as a try-on config over these fixtures.
    pub fn config(&self, name: &str, denoiser: &str, shop: bool, params: &str) -> String {
        let garment = if shop {
            "garment = \"garment.png\"\ngarment_mask = \"garment_mask.png\"\n\
             pseudo_pose = \"model.json\"\npseudo_parse = \"model_parse.png\"\n"
        } else {
            "worn = \"model.png\"\nworn_pose = \"model.json\"\nworn_parse = \"model_parse.png\"\n"
        };
        let text = format!(
            "denoiser = \"{denoiser}\"\ndenoiser_seed = 3\n\n[inputs]\nperson = \"person.png\"\n\
             person_pose = \"person.json\"\nperson_parse = \"person_parse.png\"\n\
             agnostic_mask = \"agnostic.png\"\nprompt = \"prompt.vtnk\"\n{garment}\n[params]\n{params}\n"
        );
        std::fs::write(self.dir.join(name), text).unwrap();
        self.path(name)
    }
}

/// In-memory worn-garment inputs over the same synthetic figures.
pub fn worn_inputs() -> (vtnk_core::pipeline::TryOnInputs, vtnk_core::pipeline::FixedAnalysis) {
    use vtnk_core::pipeline::{FixedAnalysis, GarmentSource, PersonInputs, TryOnInputs};
    let target = render_figure(SIZE, &target_params());
    let source = render_figure(SIZE, &source_params());
    let inputs = TryOnInputs {
        person: PersonInputs {
            image: target.image.clone(),
            skeleton: target.skeleton.clone(),
            parsing: target.parsing.clone(),
            agnostic_mask: dilate(&target.garment_mask, 2),
        },
        garment: GarmentSource::Worn {
            image: source.image.clone(),
            skeleton: source.skeleton.clone(),
            parsing: source.parsing.clone(),
        },
        prompt_embedding: ndarray::Array1::linspace(-1.0, 1.0, 8),
    };
    let analyzer = FixedAnalysis {
        skeleton: source.skeleton,
        parsing: source.parsing,
    };
    (inputs, analyzer)
}
