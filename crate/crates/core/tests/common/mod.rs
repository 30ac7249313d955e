#![allow(dead_code)]

use ndarray::Array1;
use vtnk_core::pipeline::{FixedAnalysis, GarmentSource, PersonInputs, TryOnInputs};
use vtnk_core::synthetic::{dilate, render_figure, FigureParams, Scene};

pub const SIZE: (usize, usize) = (96, 64);

pub fn target_params() -> FigureParams {
    FigureParams::fitted(SIZE.0, SIZE.1)
}

/// Same body, arms raised: warping it onto the target bends the sleeves.
pub fn source_params() -> FigureParams {
    let mut p = target_params();
    p.elbow = (0.16 * SIZE.1 as f64, 0.08 * SIZE.0 as f64);
    p.wrist = (0.26 * SIZE.1 as f64, 0.14 * SIZE.0 as f64);
    p
}

pub fn person(scene: &Scene) -> PersonInputs {
    PersonInputs {
        image: scene.image.clone(),
        skeleton: scene.skeleton.clone(),
        parsing: scene.parsing.clone(),
        agnostic_mask: dilate(&scene.garment_mask, 2),
    }
}

/// Worn-garment inputs plus an analyzer describing the source figure.
pub fn worn_inputs() -> (TryOnInputs, FixedAnalysis) {
    let target = render_figure(SIZE, &target_params());
    let src = render_figure(SIZE, &source_params());
    let inputs = TryOnInputs {
        person: person(&target),
        garment: GarmentSource::Worn {
            image: src.image.clone(),
            skeleton: src.skeleton.clone(),
            parsing: src.parsing.clone(),
        },
        prompt_embedding: Array1::linspace(-1.0, 1.0, 8),
    };
    let analyzer = FixedAnalysis {
        skeleton: src.skeleton,
        parsing: src.parsing,
    };
    (inputs, analyzer)
}

/// Shop-garment inputs: the garment photo is the source figure's garment
/// on a white background, and the analyzer reports the source pose.
pub fn shop_inputs() -> (TryOnInputs, FixedAnalysis) {
    let (mut inputs, analyzer) = worn_inputs();
    let src = render_figure(SIZE, &source_params());
    let mut flat = src.image.clone();
    for ((y, x), &m) in src.garment_mask.indexed_iter() {
        if !m {
            for c in 0..3 {
                flat[(y, x, c)] = 1.0;
            }
        }
    }
    inputs.garment = GarmentSource::Shop {
        image: flat,
        mask: src.garment_mask,
    };
    (inputs, analyzer)
}
