use ndarray::{Array2, Array3};
use rayon::prelude::*;

use super::{BinaryMask, BoundingBox, GeometryError, Homography, Image, Point, RegionMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionStatus {
    Ok,
    /// The region's homography could not be estimated or inverted; nothing
    /// was written.
    Degenerate,
    /// The region lacks keypoints in the source or target skeleton.
    Absent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: Image,
    pub coverage: BinaryMask,
    pub per_region_status: Vec<(u32, RegionStatus)>,
}

impl WarpResult {
    /// Coverage union of two results; where both cover a pixel, `other` wins.
    pub fn merge(mut self, other: &WarpResult) -> Result<Self, GeometryError> {
        if self.coverage.dim() != other.coverage.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.coverage.dim(),
                got: other.coverage.dim(),
            });
        }
        let (h, w) = self.coverage.dim();
        for y in 0..h {
            for x in 0..w {
                if other.coverage[(y, x)] {
                    self.coverage[(y, x)] = true;
                    for c in 0..3 {
                        self.image[(y, x, c)] = other.image[(y, x, c)];
                    }
                }
            }
        }
        self.per_region_status.extend(other.per_region_status.iter().copied());
        Ok(self)
    }
}

/// Inverse-maps every output pixel through each region's homography and
/// bilinearly samples the source restricted to that region's mask.
///
/// Regions are applied in `masks` order; later regions overwrite earlier
/// ones where they overlap. Pixels no region reaches stay 0 and uncovered.
pub fn piecewise_warp(
    image: &Image,
    masks: &[RegionMask],
    homographies: &[(u32, Homography)],
    out_size: (usize, usize),
) -> Result<WarpResult, GeometryError> {
    let (h, w, channels) = image.dim();
    if channels != 3 {
        return Err(GeometryError::DimensionMismatch {
            expected: (h, 3),
            got: (h, channels),
        });
    }
    for m in masks {
        if m.mask.dim() != (h, w) {
            return Err(GeometryError::DimensionMismatch {
                expected: (h, w),
                got: m.mask.dim(),
            });
        }
    }
    let jobs = masks
        .iter()
        .map(|m| {
            homographies
                .iter()
                .find(|(id, _)| *id == m.region_id)
                .map(|(_, hom)| (m, *hom))
                .ok_or(GeometryError::MissingHomography(m.region_id))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let layers: Vec<(u32, Option<Vec<Sample>>)> = jobs
        .par_iter()
        .map(|(m, hom)| match hom.inverse() {
            Ok(inv) => (m.region_id, Some(warp_region(image, &m.mask, hom, &inv, out_size))),
            Err(_) => (m.region_id, None),
        })
        .collect();

    let mut out = Array3::zeros((out_size.0, out_size.1, 3));
    let mut coverage = Array2::from_elem(out_size, false);
    let mut status = Vec::with_capacity(layers.len());
    for (region_id, layer) in layers {
        match layer {
            Some(pixels) => {
                for (y, x, rgb) in pixels {
                    coverage[(y, x)] = true;
                    for c in 0..3 {
                        out[(y, x, c)] = rgb[c];
                    }
                }
                status.push((region_id, RegionStatus::Ok));
            }
            None => {
                log::debug!("region {region_id}: non-invertible homography, skipped");
                status.push((region_id, RegionStatus::Degenerate));
            }
        }
    }
    Ok(WarpResult {
        image: out,
        coverage,
        per_region_status: status,
    })
}

/// Output pixel `(y, x)` and its colour.
type Sample = (usize, usize, [f64; 3]);

fn warp_region(
    image: &Image,
    mask: &BinaryMask,
    forward: &Homography,
    inverse: &Homography,
    out_size: (usize, usize),
) -> Vec<Sample> {
    let Some((y0, y1, x0, x1)) = output_window(mask, forward, out_size) else {
        return Vec::new();
    };
    let mut pixels = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let Some(q) = inverse.apply(Point::new(x as f64, y as f64)) else {
                continue;
            };
            if let Some(rgb) = sample_masked(image, mask, q.x, q.y) {
                pixels.push((y, x, rgb));
            }
        }
    }
    pixels
}

/// Output rows/cols that the forward image of the mask's bounding box can
/// reach. Falls back to the whole canvas when the box straddles the horizon.
fn output_window(
    mask: &BinaryMask,
    forward: &Homography,
    out_size: (usize, usize),
) -> Option<(usize, usize, usize, usize)> {
    let bbox = mask_bbox(mask)?;
    let full = Some((0, out_size.0, 0, out_size.1));
    let expanded = BoundingBox::new(bbox.x_min - 1.0, bbox.y_min - 1.0, bbox.x_max + 1.0, bbox.y_max + 1.0);
    let m = forward.matrix();
    let mut xs = Vec::with_capacity(4);
    let mut ys = Vec::with_capacity(4);
    for c in expanded.corners() {
        let wz = m[(2, 0)] * c.x + m[(2, 1)] * c.y + m[(2, 2)];
        if wz <= 1e-9 {
            return full;
        }
        let p = forward.apply(c)?;
        xs.push(p.x);
        ys.push(p.y);
    }
    let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let hi = |v: &[f64], n: usize| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
        (m.max(0.0) as usize).min(n)
    };
    Some((lo(&ys), hi(&ys, out_size.0), lo(&xs), hi(&xs, out_size.1)))
}

/// Bilinear sample at (qx, qy) using only masked neighbours. The nearest
/// source pixel must itself be masked.
fn sample_masked(image: &Image, mask: &BinaryMask, qx: f64, qy: f64) -> Option<[f64; 3]> {
    let (h, w) = mask.dim();
    let (nx, ny) = (qx.round(), qy.round());
    if nx < 0.0 || ny < 0.0 || nx >= w as f64 || ny >= h as f64 {
        return None;
    }
    if !mask[(ny as usize, nx as usize)] {
        return None;
    }
    let (fx0, fy0) = (qx.floor(), qy.floor());
    let (tx, ty) = (qx - fx0, qy - fy0);
    let mut acc = [0.0; 3];
    let mut total = 0.0;
    for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
        for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
            let weight = wx * wy;
            if weight == 0.0 {
                continue;
            }
            let (sx, sy) = (fx0 + dx, fy0 + dy);
            if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let (sx, sy) = (sx as usize, sy as usize);
            if !mask[(sy, sx)] {
                continue;
            }
            for (c, a) in acc.iter_mut().enumerate() {
                *a += weight * image[(sy, sx, c)];
            }
            total += weight;
        }
    }
    if total <= 0.0 {
        return None;
    }
    Some(acc.map(|a| (a / total).clamp(0.0, 1.0)))
}

/// Tight pixel bounding box of the set pixels; `None` for an empty mask.
pub fn mask_bbox(mask: &BinaryMask) -> Option<BoundingBox> {
    let mut bbox: Option<BoundingBox> = None;
    for ((y, x), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        let (x, y) = (x as f64, y as f64);
        bbox = Some(match bbox {
            None => BoundingBox::new(x, y, x, y),
            Some(b) => BoundingBox::new(b.x_min.min(x), b.y_min.min(y), b.x_max.max(x), b.y_max.max(y)),
        });
    }
    bbox
}

/// Scales (aspect-preserving) and translates the garment so its mask box
/// fits centered inside the agnostic mask's box. Output canvas matches the
/// agnostic mask.
pub fn relocate_garment(
    garment_image: &Image,
    garment_mask: &BinaryMask,
    agnostic_mask: &BinaryMask,
) -> Result<(Image, BinaryMask), GeometryError> {
    let (gh, gw, _) = garment_image.dim();
    if garment_mask.dim() != (gh, gw) {
        return Err(GeometryError::DimensionMismatch {
            expected: (gh, gw),
            got: garment_mask.dim(),
        });
    }
    let src = mask_bbox(garment_mask).ok_or(GeometryError::EmptyMask)?;
    let dst = mask_bbox(agnostic_mask).ok_or(GeometryError::EmptyMask)?;
    // pixel extents, so a single-pixel box has size 1
    let scale = ((dst.width() + 1.0) / (src.width() + 1.0)).min((dst.height() + 1.0) / (src.height() + 1.0));
    let src_c = ((src.x_min + src.x_max) / 2.0, (src.y_min + src.y_max) / 2.0);
    let dst_c = ((dst.x_min + dst.x_max) / 2.0, (dst.y_min + dst.y_max) / 2.0);

    let (oh, ow) = agnostic_mask.dim();
    let mut image = Array3::zeros((oh, ow, 3));
    let mut coverage = Array2::<f64>::zeros((oh, ow));
    let full = Array2::from_elem((gh, gw), true);
    for y in 0..oh {
        for x in 0..ow {
            let qx = src_c.0 + (x as f64 - dst_c.0) / scale;
            let qy = src_c.1 + (y as f64 - dst_c.1) / scale;
            coverage[(y, x)] = footprint_coverage(garment_mask, qx, qy, 0.5 / scale);
            if let Some(rgb) = sample_masked(garment_image, &full, qx, qy) {
                for c in 0..3 {
                    image[(y, x, c)] = rgb[c];
                }
            }
        }
    }
    // Pixels at least half covered. A garment thinner than half an output
    // pixel would vanish entirely; keep any touched pixel in that case.
    let mut mask = coverage.mapv(|c| c >= 0.5);
    if !mask.iter().any(|&m| m) {
        mask = coverage.mapv(|c| c > 0.0);
    }
    Ok((image, mask))
}

/// Fraction of the square footprint of half-size `radius` around (qx, qy)
/// covered by set pixels. Below half a pixel this is a nearest lookup.
fn footprint_coverage(mask: &BinaryMask, qx: f64, qy: f64, radius: f64) -> f64 {
    let (h, w) = mask.dim();
    if radius <= 0.5 {
        let (nx, ny) = (qx.round(), qy.round());
        let inside = nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64;
        return if inside && mask[(ny as usize, nx as usize)] {
            1.0
        } else {
            0.0
        };
    }
    // per-axis overlap of [q - r, q + r] with pixel i's [i - 0.5, i + 0.5]
    let overlaps = |q: f64, n: usize| -> Vec<(usize, f64)> {
        let lo = ((q - radius + 0.5).floor().max(0.0)) as usize;
        let hi = ((q + radius + 0.5).floor()).min(n as f64 - 1.0);
        if hi < 0.0 {
            return Vec::new();
        }
        (lo..=hi as usize)
            .filter_map(|i| {
                let a = (i as f64 - 0.5).max(q - radius);
                let b = (i as f64 + 0.5).min(q + radius);
                (b > a).then_some((i, b - a))
            })
            .collect()
    };
    let xs = overlaps(qx, w);
    let ys = overlaps(qy, h);
    let mut covered = 0.0;
    for &(y, wy) in &ys {
        for &(x, wx) in &xs {
            if mask[(y, x)] {
                covered += wx * wy;
            }
        }
    }
    covered / (4.0 * radius * radius)
}
