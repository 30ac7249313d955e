//! Procedural stick-figure scenes with exact keypoints and part parsing,
//! for tests, demos and CLI fixtures.

use ndarray::{Array2, Array3};

use crate::geometry::{body25, parts, BinaryMask, Image, Keypoint, SegmentationMap, Skeleton, NUM_KEYPOINTS};

/// Figure layout in pixels. Offsets of elbows and wrists are for the
/// figure's left side (image right) and mirrored for the right side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureParams {
    pub center_x: f64,
    pub neck_y: f64,
    pub shoulder_half: f64,
    pub hip_y: f64,
    pub hip_half: f64,
    pub elbow: (f64, f64),
    pub wrist: (f64, f64),
    pub knee_dy: f64,
    pub ankle_dy: f64,
    pub limb_width: f64,
    /// Stripe period of the garment texture.
    pub stripe_period: f64,
}

impl FigureParams {
    /// A figure filling most of an `h × w` canvas.
    pub fn fitted(h: usize, w: usize) -> Self {
        let (h, w) = (h as f64, w as f64);
        Self {
            center_x: w / 2.0,
            neck_y: 0.22 * h,
            shoulder_half: 0.16 * w,
            hip_y: 0.55 * h,
            hip_half: 0.1 * w,
            elbow: (0.1 * w, 0.14 * h),
            wrist: (0.14 * w, 0.28 * h),
            knee_dy: 0.18 * h,
            ankle_dy: 0.36 * h,
            limb_width: (0.06 * w).max(3.0),
            stripe_period: (0.12 * w).max(4.0),
        }
    }

    pub fn keypoints(&self) -> Vec<(usize, f64, f64)> {
        use body25::*;
        let c = self.center_x;
        let (ex, ey) = self.elbow;
        let (wx, wy) = self.wrist;
        let (sl, sr) = (c + self.shoulder_half, c - self.shoulder_half);
        let (hl, hr) = (c + self.hip_half, c - self.hip_half);
        vec![
            (NOSE, c, self.neck_y - 0.5 * self.shoulder_half),
            (NECK, c, self.neck_y),
            (R_SHOULDER, sr, self.neck_y),
            (R_ELBOW, sr - ex, self.neck_y + ey),
            (R_WRIST, sr - wx, self.neck_y + wy),
            (L_SHOULDER, sl, self.neck_y),
            (L_ELBOW, sl + ex, self.neck_y + ey),
            (L_WRIST, sl + wx, self.neck_y + wy),
            (MID_HIP, c, self.hip_y),
            (R_HIP, hr, self.hip_y),
            (R_KNEE, hr - 1.0, self.hip_y + self.knee_dy),
            (R_ANKLE, hr - 2.0, self.hip_y + self.ankle_dy),
            (L_HIP, hl, self.hip_y),
            (L_KNEE, hl + 1.0, self.hip_y + self.knee_dy),
            (L_ANKLE, hl + 2.0, self.hip_y + self.ankle_dy),
        ]
    }
}

/// A rendered figure.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Image,
    pub skeleton: Skeleton,
    pub parsing: SegmentationMap,
    /// Torso and arm pixels: the upper garment.
    pub garment_mask: BinaryMask,
}

const UPPER_LABELS: [u8; 5] = [
    parts::TORSO,
    parts::LEFT_UPPER_ARM,
    parts::RIGHT_UPPER_ARM,
    parts::LEFT_LOWER_ARM,
    parts::RIGHT_LOWER_ARM,
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Diagonal stripes in figure coordinates, so a garment moves with its body.
pub fn garment_color(params: &FigureParams, x: f64, y: f64) -> [f64; 3] {
    let u = (x - params.center_x + y - params.neck_y) / params.stripe_period;
    let s = (2.0 * std::f64::consts::PI * u).sin();
    [0.5 + 0.35 * s, 0.35 + 0.1 * s, 0.6 - 0.3 * s]
}

pub fn render_figure(size: (usize, usize), params: &FigureParams) -> Scene {
    let (h, w) = size;
    let kp = params.keypoints();
    let at = |i: usize| {
        let &(_, x, y) = kp.iter().find(|(k, _, _)| *k == i).expect("keypoint listed");
        (x, y)
    };
    use body25::*;
    let half = params.limb_width / 2.0;
    let limbs = [
        (R_HIP, R_KNEE, parts::RIGHT_UPPER_LEG),
        (L_HIP, L_KNEE, parts::LEFT_UPPER_LEG),
        (R_KNEE, R_ANKLE, parts::RIGHT_LOWER_LEG),
        (L_KNEE, L_ANKLE, parts::LEFT_LOWER_LEG),
        (R_SHOULDER, R_ELBOW, parts::RIGHT_UPPER_ARM),
        (L_SHOULDER, L_ELBOW, parts::LEFT_UPPER_ARM),
        (R_ELBOW, R_WRIST, parts::RIGHT_LOWER_ARM),
        (L_ELBOW, L_WRIST, parts::LEFT_LOWER_ARM),
    ];
    let hip_band = 0.15 * (params.hip_y - params.neck_y);
    let mut labels = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let p = (x as f64, y as f64);
            let mut label = parts::BACKGROUND;
            if segment_distance(p, at(NOSE), at(NOSE)) <= 1.2 * half + 1.0 {
                label = parts::HEAD;
            }
            for &(a, b, l) in &limbs {
                if segment_distance(p, at(a), at(b)) <= half {
                    label = l;
                }
            }
            for (k, l) in [
                (R_ANKLE, parts::FEET),
                (L_ANKLE, parts::FEET),
                (R_WRIST, parts::HANDS),
                (L_WRIST, parts::HANDS),
            ] {
                if segment_distance(p, at(k), at(k)) <= half * 0.9 {
                    label = l;
                }
            }
            // torso: trapezoid from shoulder line to hip line
            let ty = p.1 - params.neck_y;
            let span = params.hip_y - params.neck_y;
            if ty >= 0.0 && ty <= span {
                let t = ty / span;
                let halfw = params.shoulder_half + t * (params.hip_half - params.shoulder_half);
                if (p.0 - params.center_x).abs() <= halfw {
                    label = if ty > span - hip_band { parts::HIP } else { parts::TORSO };
                }
            }
            labels[(y, x)] = label;
        }
    }
    let mut image = Array3::from_elem((h, w, 3), 0.9);
    for ((y, x), &l) in labels.indexed_iter() {
        let rgb = match l {
            parts::BACKGROUND => continue,
            parts::HEAD | parts::HANDS => [0.85, 0.65, 0.5],
            parts::FEET => [0.2, 0.15, 0.1],
            l if UPPER_LABELS.contains(&l) => garment_color(params, x as f64, y as f64),
            _ => [0.2, 0.25, 0.45],
        };
        for c in 0..3 {
            image[(y, x, c)] = rgb[c];
        }
    }
    let mut kps = vec![Keypoint::invalid(); NUM_KEYPOINTS];
    for &(i, x, y) in &kp {
        kps[i] = Keypoint::new(x, y, 0.9);
    }
    let skeleton = Skeleton::new(kps, size).expect("finite keypoints");
    let garment_mask = labels.mapv(|l| UPPER_LABELS.contains(&l));
    let parsing = SegmentationMap::with_default_legend(labels).expect("default labels");
    Scene {
        image,
        skeleton,
        parsing,
        garment_mask,
    }
}

/// Set pixels grown by `radius` (Chebyshev).
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
        (y0..=y1).any(|yy| (x0..=x1).any(|xx| mask[(yy, xx)]))
    })
}

/// Pixels within `radius` of a boundary between two different upper-garment
/// part labels.
pub fn seam_band(parsing: &SegmentationMap, radius: usize) -> BinaryMask {
    let labels = parsing.labels();
    let (h, w) = labels.dim();
    let garment = |l: u8| UPPER_LABELS.contains(&l);
    let mut boundary = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let l = labels[(y, x)];
            if !garment(l) {
                continue;
            }
            let right = x + 1 < w && garment(labels[(y, x + 1)]) && labels[(y, x + 1)] != l;
            let down = y + 1 < h && garment(labels[(y + 1, x)]) && labels[(y + 1, x)] != l;
            if right || down {
                boundary[(y, x)] = true;
            }
        }
    }
    let garment_px = labels.mapv(garment);
    let grown = dilate(&boundary, radius);
    Array2::from_shape_fn((h, w), |i| grown[i] && garment_px[i])
}

/// Mean per-channel variance of `image` over `mask`.
pub fn masked_variance(image: &Image, mask: &BinaryMask) -> f64 {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for c in 0..3 {
        let vals: Vec<f64> = mask
            .indexed_iter()
            .filter(|(_, &m)| m)
            .map(|((y, x), _)| image[(y, x, c)])
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        total += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    }
    total / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_region_boxes, GarmentCategory, RegionSpec};

    #[test]
    fn figure_has_all_upper_regions() {
        let scene = render_figure((96, 64), &FigureParams::fitted(96, 64));
        let spec = RegionSpec::for_category(GarmentCategory::Upper);
        let boxes = build_region_boxes(&scene.skeleton, &spec, 0.3).unwrap();
        assert_eq!(boxes.boxes.len(), 5);
        for label in UPPER_LABELS {
            assert!(scene.parsing.labels().iter().any(|&l| l == label), "label {label}");
        }
        let spec = RegionSpec::for_category(GarmentCategory::Lower);
        assert_eq!(build_region_boxes(&scene.skeleton, &spec, 0.3).unwrap().boxes.len(), 5);
        assert!(seam_band(&scene.parsing, 1).iter().any(|&b| b));
    }

    #[test]
    fn variance_of_constant_is_zero() {
        let img = Array3::from_elem((4, 4, 3), 0.3);
        let m = Array2::from_elem((4, 4), true);
        assert!(masked_variance(&img, &m).abs() < 1e-15);
        let mut d = Array2::from_elem((5, 5), false);
        d[(2, 2)] = true;
        assert_eq!(dilate(&d, 1).iter().filter(|&&b| b).count(), 9);
    }
}
