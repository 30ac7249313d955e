use serde::{Deserialize, Serialize};

use super::{parts, GeometryError};

pub const NUM_KEYPOINTS: usize = 25;

/// Keypoints below this confidence are ignored when building region boxes.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.3;

/// BODY_25 keypoint indices.
pub mod body25 {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const MID_HIP: usize = 8;
    pub const R_HIP: usize = 9;
    pub const R_KNEE: usize = 10;
    pub const R_ANKLE: usize = 11;
    pub const L_HIP: usize = 12;
    pub const L_KNEE: usize = 13;
    pub const L_ANKLE: usize = 14;
    pub const R_EYE: usize = 15;
    pub const L_EYE: usize = 16;
    pub const R_EAR: usize = 17;
    pub const L_EAR: usize = 18;
    pub const L_BIG_TOE: usize = 19;
    pub const L_SMALL_TOE: usize = 20;
    pub const L_HEEL: usize = 21;
    pub const R_BIG_TOE: usize = 22;
    pub const R_SMALL_TOE: usize = 23;
    pub const R_HEEL: usize = 24;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }

    pub fn invalid() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.confidence > 0.0
    }
}

/// A 25-keypoint body pose bound to the image it was detected on.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    keypoints: Vec<Keypoint>,
    /// (height, width) in pixels.
    image_size: (usize, usize),
}

impl Skeleton {
    /// Validates the keypoints and flags any that fall outside the image by
    /// zeroing their confidence.
    pub fn new(keypoints: Vec<Keypoint>, image_size: (usize, usize)) -> Result<Self, GeometryError> {
        if keypoints.len() != NUM_KEYPOINTS {
            return Err(GeometryError::WrongKeypointCount {
                expected: NUM_KEYPOINTS,
                got: keypoints.len(),
            });
        }
        let (height, width) = image_size;
        let mut keypoints = keypoints;
        for (index, kp) in keypoints.iter_mut().enumerate() {
            if !kp.x.is_finite() || !kp.y.is_finite() {
                return Err(GeometryError::InvalidKeypoint {
                    index,
                    reason: "non-finite coordinate",
                });
            }
            if !(0.0..=1.0).contains(&kp.confidence) {
                return Err(GeometryError::InvalidKeypoint {
                    index,
                    reason: "confidence outside [0, 1]",
                });
            }
            let inside = kp.x >= 0.0 && kp.y >= 0.0 && kp.x < width as f64 && kp.y < height as f64;
            if !inside {
                kp.confidence = 0.0;
            }
        }
        Ok(Self { keypoints, image_size })
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    /// Returns a copy shifted by `(dx, dy)`; points pushed out of the image are
    /// flagged invalid.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let kps = self
            .keypoints
            .iter()
            .map(|k| Keypoint::new(k.x + dx, k.y + dy, k.confidence))
            .collect();
        Self::new(kps, self.image_size).expect("translation keeps keypoints finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GarmentCategory {
    Upper,
    Lower,
    DressUpperSection,
    DressLowerSection,
}

impl GarmentCategory {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "upper" => Some(Self::Upper),
            "lower" => Some(Self::Lower),
            "dress-upper-section" => Some(Self::DressUpperSection),
            "dress-lower-section" => Some(Self::DressLowerSection),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Upper => "upper",
            Self::Lower => "lower",
            Self::DressUpperSection => "dress-upper-section",
            Self::DressLowerSection => "dress-lower-section",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: u32,
    pub name: String,
    pub keypoints: Vec<usize>,
    pub part_labels: Vec<u8>,
}

impl Region {
    fn new(id: u32, name: &str, keypoints: &[usize], part_labels: &[u8]) -> Self {
        Self {
            id,
            name: name.to_owned(),
            keypoints: keypoints.to_vec(),
            part_labels: part_labels.to_vec(),
        }
    }
}

/// Ordered body regions for one garment category.
///
/// Order matters: when warped regions overlap, later regions overwrite
/// earlier ones, so the trunk region comes first and limbs after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub category: GarmentCategory,
    pub regions: Vec<Region>,
    /// Pixels added on every side of a keypoint hull before clipping.
    #[serde(default)]
    pub box_padding: f64,
}

impl RegionSpec {
    pub fn for_category(category: GarmentCategory) -> Self {
        use body25::*;
        let upper = || {
            vec![
                Region::new(
                    1,
                    "torso",
                    &[NECK, R_SHOULDER, L_SHOULDER, MID_HIP, R_HIP, L_HIP],
                    &[parts::TORSO],
                ),
                Region::new(2, "left-upper-arm", &[L_SHOULDER, L_ELBOW], &[parts::LEFT_UPPER_ARM]),
                Region::new(3, "right-upper-arm", &[R_SHOULDER, R_ELBOW], &[parts::RIGHT_UPPER_ARM]),
                Region::new(4, "left-lower-arm", &[L_ELBOW, L_WRIST], &[parts::LEFT_LOWER_ARM]),
                Region::new(5, "right-lower-arm", &[R_ELBOW, R_WRIST], &[parts::RIGHT_LOWER_ARM]),
            ]
        };
        let lower = || {
            vec![
                Region::new(1, "hip-above", &[MID_HIP, R_HIP, L_HIP], &[parts::HIP]),
                Region::new(2, "left-upper-leg", &[L_HIP, L_KNEE], &[parts::LEFT_UPPER_LEG]),
                Region::new(3, "right-upper-leg", &[R_HIP, R_KNEE], &[parts::RIGHT_UPPER_LEG]),
                Region::new(4, "left-lower-leg", &[L_KNEE, L_ANKLE], &[parts::LEFT_LOWER_LEG]),
                Region::new(5, "right-lower-leg", &[R_KNEE, R_ANKLE], &[parts::RIGHT_LOWER_LEG]),
            ]
        };
        let regions = match category {
            GarmentCategory::Upper | GarmentCategory::DressUpperSection => upper(),
            GarmentCategory::Lower | GarmentCategory::DressLowerSection => lower(),
        };
        Self {
            category,
            regions,
            box_padding: 0.0,
        }
    }

    pub fn with_box_padding(mut self, padding: f64) -> Self {
        self.box_padding = padding;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let err = |m: String| Err(GeometryError::InvalidRegionSpec(m));
        if matches!(self.category, GarmentCategory::Upper | GarmentCategory::Lower) && self.regions.len() != 5 {
            return err(format!(
                "{} garments need exactly 5 regions, got {}",
                self.category.as_str(),
                self.regions.len()
            ));
        }
        if self.regions.is_empty() {
            return err("no regions".into());
        }
        for (i, r) in self.regions.iter().enumerate() {
            if self.regions[..i].iter().any(|o| o.id == r.id) {
                return err(format!("duplicate region id {}", r.id));
            }
            if let Some(&k) = r.keypoints.iter().find(|&&k| k >= NUM_KEYPOINTS) {
                return err(format!("region {} references keypoint {k}", r.id));
            }
        }
        if !(self.box_padding.is_finite() && self.box_padding >= 0.0) {
            return err(format!("box padding must be >= 0, got {}", self.box_padding));
        }
        Ok(())
    }

    pub fn region(&self, id: u32) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }
}

/// Axis-aligned box in pixel coordinates (inclusive bounds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max);
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Corners ordered top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [super::Point; 4] {
        use super::Point;
        [
            Point::new(self.x_min, self.y_min),
            Point::new(self.x_max, self.y_min),
            Point::new(self.x_max, self.y_max),
            Point::new(self.x_min, self.y_max),
        ]
    }

    fn expanded(&self, pad: f64) -> Self {
        Self::new(self.x_min - pad, self.y_min - pad, self.x_max + pad, self.y_max + pad)
    }

    fn clipped(&self, height: usize, width: usize) -> Self {
        let xm = width as f64;
        let ym = height as f64;
        Self::new(
            self.x_min.clamp(0.0, xm),
            self.y_min.clamp(0.0, ym),
            self.x_max.clamp(0.0, xm),
            self.y_max.clamp(0.0, ym),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionBoxes {
    /// (height, width) of the image the boxes were built on.
    pub image_size: (usize, usize),
    /// Present regions in `RegionSpec` order.
    pub boxes: Vec<(u32, BoundingBox)>,
    /// Regions with fewer than two usable keypoints.
    pub absent: Vec<u32>,
}

impl RegionBoxes {
    pub fn get(&self, id: u32) -> Option<&BoundingBox> {
        self.boxes.iter().find(|(r, _)| *r == id).map(|(_, b)| b)
    }
}

/// Builds one box per region enclosing the region's keypoints whose
/// confidence exceeds `confidence_threshold`.
pub fn build_region_boxes(
    skeleton: &Skeleton,
    spec: &RegionSpec,
    confidence_threshold: f64,
) -> Result<RegionBoxes, GeometryError> {
    spec.validate()?;
    if !(0.0..1.0).contains(&confidence_threshold) {
        return Err(GeometryError::InvalidThreshold(confidence_threshold));
    }
    let (height, width) = skeleton.image_size();
    let mut boxes = Vec::new();
    let mut absent = Vec::new();
    for region in &spec.regions {
        let pts: Vec<&Keypoint> = region
            .keypoints
            .iter()
            .map(|&i| &skeleton.keypoints()[i])
            .filter(|k| k.is_valid() && k.confidence > confidence_threshold)
            .collect();
        if pts.len() < 2 {
            absent.push(region.id);
            continue;
        }
        let empty = BoundingBox {
            x_min: f64::INFINITY,
            y_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        let hull = pts.iter().fold(empty, |b, k| BoundingBox {
            x_min: b.x_min.min(k.x),
            y_min: b.y_min.min(k.y),
            x_max: b.x_max.max(k.x),
            y_max: b.y_max.max(k.y),
        });
        boxes.push((region.id, hull.expanded(spec.box_padding).clipped(height, width)));
    }
    if boxes.is_empty() {
        return Err(GeometryError::AllRegionsAbsent);
    }
    Ok(RegionBoxes {
        image_size: (height, width),
        boxes,
        absent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn skeleton_with(points: &[(usize, f64, f64, f64)]) -> Skeleton {
        let mut kps = vec![Keypoint::invalid(); NUM_KEYPOINTS];
        for &(i, x, y, c) in points {
            kps[i] = Keypoint::new(x, y, c);
        }
        Skeleton::new(kps, (100, 100)).unwrap()
    }

    #[test]
    fn torso_box_is_keypoint_hull() {
        use body25::*;
        let sk = skeleton_with(&[
            (R_SHOULDER, 10.0, 10.0, 0.9),
            (L_SHOULDER, 50.0, 10.0, 0.9),
            (R_HIP, 10.0, 90.0, 0.9),
            (L_HIP, 50.0, 90.0, 0.9),
        ]);
        let spec = RegionSpec::for_category(GarmentCategory::Upper);
        let boxes = build_region_boxes(&sk, &spec, 0.3).unwrap();
        assert_eq!(boxes.get(1), Some(&BoundingBox::new(10.0, 10.0, 50.0, 90.0)));
        assert_eq!(boxes.absent, vec![2, 3, 4, 5]);
    }

    #[test]
    fn zero_confidence_means_all_absent() {
        let sk = Skeleton::new(vec![Keypoint::new(5.0, 5.0, 0.0); 25], (100, 100)).unwrap();
        let spec = RegionSpec::for_category(GarmentCategory::Lower);
        assert!(matches!(
            build_region_boxes(&sk, &spec, 0.0),
            Err(GeometryError::AllRegionsAbsent)
        ));
    }

    #[test]
    fn low_confidence_points_are_ignored() {
        use body25::*;
        let sk = skeleton_with(&[
            (L_SHOULDER, 20.0, 20.0, 0.9),
            (L_ELBOW, 30.0, 40.0, 0.9),
            (NECK, 0.0, 0.0, 0.2),
        ]);
        let spec = RegionSpec::for_category(GarmentCategory::Upper);
        let boxes = build_region_boxes(&sk, &spec, 0.3).unwrap();
        assert_eq!(boxes.get(2), Some(&BoundingBox::new(20.0, 20.0, 30.0, 40.0)));
        assert!(boxes.absent.contains(&1));
    }

    #[test]
    fn out_of_bounds_keypoints_are_flagged() {
        let mut kps = vec![Keypoint::new(1.0, 1.0, 1.0); 25];
        kps[3] = Keypoint::new(120.0, 4.0, 0.8);
        let sk = Skeleton::new(kps, (100, 100)).unwrap();
        assert_eq!(sk.keypoints()[3].confidence, 0.0);
        assert_eq!(sk.keypoints()[2].confidence, 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Skeleton::new(vec![Keypoint::invalid(); 24], (10, 10)).is_err());
        let mut kps = vec![Keypoint::invalid(); 25];
        kps[0].confidence = 1.5;
        assert!(Skeleton::new(kps, (10, 10)).is_err());
        let sk = Skeleton::new(vec![Keypoint::new(1.0, 1.0, 1.0); 25], (10, 10)).unwrap();
        let spec = RegionSpec::for_category(GarmentCategory::Upper);
        assert!(build_region_boxes(&sk, &spec, 1.0).is_err());
    }

    #[test]
    fn padding_expands_and_clips() {
        use body25::*;
        let sk = skeleton_with(&[(L_SHOULDER, 2.0, 20.0, 0.9), (L_ELBOW, 2.0, 40.0, 0.9)]);
        let spec = RegionSpec::for_category(GarmentCategory::Upper).with_box_padding(4.0);
        let boxes = build_region_boxes(&sk, &spec, 0.3).unwrap();
        assert_eq!(boxes.get(2), Some(&BoundingBox::new(0.0, 16.0, 6.0, 44.0)));
    }

    #[test]
    fn builtin_specs_validate() {
        for cat in [
            GarmentCategory::Upper,
            GarmentCategory::Lower,
            GarmentCategory::DressUpperSection,
            GarmentCategory::DressLowerSection,
        ] {
            RegionSpec::for_category(cat).validate().unwrap();
            assert_eq!(GarmentCategory::parse(cat.as_str()), Some(cat));
        }
        let mut spec = RegionSpec::for_category(GarmentCategory::Upper);
        spec.regions[1].id = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn random_boxes_contain_their_keypoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let kps: Vec<Keypoint> = (0..25)
                .map(|_| {
                    Keypoint::new(
                        rng.random_range(0.0..100.0),
                        rng.random_range(0.0..80.0),
                        rng.random_range(0.0..1.0),
                    )
                })
                .collect();
            let sk = Skeleton::new(kps, (80, 100)).unwrap();
            for cat in [GarmentCategory::Upper, GarmentCategory::Lower] {
                let spec = RegionSpec::for_category(cat);
                let Ok(boxes) = build_region_boxes(&sk, &spec, 0.3) else {
                    continue;
                };
                for region in &spec.regions {
                    let Some(b) = boxes.get(region.id) else {
                        continue;
                    };
                    for &k in &region.keypoints {
                        let kp = sk.keypoints()[k];
                        if kp.confidence > 0.3 {
                            assert!(b.contains(kp.x, kp.y), "{kp:?} outside {b:?}");
                        }
                    }
                }
            }
        }
    }
}
