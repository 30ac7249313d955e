use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, ImageReader, RgbImage};
use ndarray::{Array2, Array3};

use super::{io_err, IoError};
use crate::geometry::{BinaryMask, Image, SegmentationMap};

/// Gray levels at or above this are mask-on.
pub const MASK_THRESHOLD: u8 = 128;

fn decode(path: &Path) -> Result<DynamicImage, IoError> {
    ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?
        .decode()
        .map_err(|e| match e {
            image::ImageError::Unsupported(u) => IoError::UnsupportedFormat(u.to_string()),
            image::ImageError::IoError(source) => IoError::Io {
                path: path.to_owned(),
                source,
            },
            other => IoError::Decode(other.to_string()),
        })
}

fn color_name(img: &DynamicImage) -> String {
    format!("{:?}", img.color())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save(path: &Path, img: DynamicImage) -> Result<(), IoError> {
    img.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(source) => IoError::Io {
            path: path.to_owned(),
            source,
        },
        other => IoError::Decode(other.to_string()),
    })
}

fn gray(path: &Path) -> Result<GrayImage, IoError> {
    match decode(path)? {
        DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(IoError::UnsupportedFormat(format!(
            "expected 8-bit grayscale, got {}",
            color_name(&other)
        ))),
    }
}

/// 8-bit RGB → `H×W×3` in [0,1].
pub fn read_image(path: &Path) -> Result<Image, IoError> {
    let rgb = match decode(path)? {
        DynamicImage::ImageRgb8(rgb) => rgb,
        other => {
            return Err(IoError::UnsupportedFormat(format!(
                "expected 8-bit RGB, got {}",
                color_name(&other)
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    Ok(Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    }))
}

/// Values are clamped to [0,1] and rounded to 8 bits.
pub fn write_image(path: &Path, image: &Image) -> Result<(), IoError> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(IoError::ShapeMismatch(format!("expected 3 channels, got {c}")));
    }
    let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = |ch| to_u8(image[(y as usize, x as usize, ch)]);
        image::Rgb([p(0), p(1), p(2)])
    });
    save(path, DynamicImage::ImageRgb8(rgb))
}

/// 8-bit grayscale, thresholded at [`MASK_THRESHOLD`].
pub fn read_mask(path: &Path) -> Result<BinaryMask, IoError> {
    let g = gray(path)?;
    let (w, h) = g.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        g.get_pixel(x as u32, y as u32)[0] >= MASK_THRESHOLD
    }))
}

/// Set pixels are 255, others 0.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), IoError> {
    let (h, w) = mask.dim();
    let g = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[(y as usize, x as usize)] { 255 } else { 0 }])
    });
    save(path, DynamicImage::ImageLuma8(g))
}

/// 8-bit grayscale whose gray levels are part labels; the default legend
/// applies.
pub fn read_parsing(path: &Path) -> Result<SegmentationMap, IoError> {
    let g = gray(path)?;
    let (w, h) = g.dimensions();
    let labels = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| g.get_pixel(x as u32, y as u32)[0]);
    Ok(SegmentationMap::with_default_legend(labels)?)
}

pub fn write_parsing(path: &Path, parsing: &SegmentationMap) -> Result<(), IoError> {
    let labels = parsing.labels();
    let (h, w) = labels.dim();
    let g = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([labels[(y as usize, x as usize)]])
    });
    save(path, DynamicImage::ImageLuma8(g))
}
