use std::collections::BTreeMap;

use ndarray::Array2;

use super::{BinaryMask, GeometryError, RegionBoxes, RegionSpec};

/// Default human-part label ids used by the built-in region specs.
pub mod parts {
    pub const BACKGROUND: u8 = 0;
    pub const TORSO: u8 = 1;
    pub const LEFT_UPPER_ARM: u8 = 2;
    pub const RIGHT_UPPER_ARM: u8 = 3;
    pub const LEFT_LOWER_ARM: u8 = 4;
    pub const RIGHT_LOWER_ARM: u8 = 5;
    pub const HIP: u8 = 6;
    pub const LEFT_UPPER_LEG: u8 = 7;
    pub const RIGHT_UPPER_LEG: u8 = 8;
    pub const LEFT_LOWER_LEG: u8 = 9;
    pub const RIGHT_LOWER_LEG: u8 = 10;
    pub const HEAD: u8 = 11;
    pub const HANDS: u8 = 12;
    pub const FEET: u8 = 13;

    pub const NAMES: [(u8, &str); 14] = [
        (BACKGROUND, "background"),
        (TORSO, "torso"),
        (LEFT_UPPER_ARM, "left-upper-arm"),
        (RIGHT_UPPER_ARM, "right-upper-arm"),
        (LEFT_LOWER_ARM, "left-lower-arm"),
        (RIGHT_LOWER_ARM, "right-lower-arm"),
        (HIP, "hip"),
        (LEFT_UPPER_LEG, "left-upper-leg"),
        (RIGHT_UPPER_LEG, "right-upper-leg"),
        (LEFT_LOWER_LEG, "left-lower-leg"),
        (RIGHT_LOWER_LEG, "right-lower-leg"),
        (HEAD, "head"),
        (HANDS, "hands"),
        (FEET, "feet"),
    ];
}

/// Per-pixel human part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    labels: Array2<u8>,
    legend: BTreeMap<u8, String>,
}

impl SegmentationMap {
    /// Every non-background label must appear in `legend`.
    pub fn new(labels: Array2<u8>, legend: BTreeMap<u8, String>) -> Result<Self, GeometryError> {
        if let Some(bad) = labels
            .iter()
            .find(|&&l| l != parts::BACKGROUND && !legend.contains_key(&l))
        {
            return Err(GeometryError::InvalidRegionSpec(format!(
                "label {bad} missing from legend"
            )));
        }
        Ok(Self { labels, legend })
    }

    /// Uses the default part legend.
    pub fn with_default_legend(labels: Array2<u8>) -> Result<Self, GeometryError> {
        Self::new(labels, default_legend())
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn legend(&self) -> &BTreeMap<u8, String> {
        &self.legend
    }

    /// (height, width)
    pub fn dims(&self) -> (usize, usize) {
        self.labels.dim()
    }
}

pub(crate) fn default_legend() -> BTreeMap<u8, String> {
    parts::NAMES.iter().map(|&(id, name)| (id, name.to_owned())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub region_id: u32,
    pub mask: BinaryMask,
}

impl RegionMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// One mask per present region: a pixel is set when its part label belongs
/// to the region and it lies inside the region's box.
pub fn region_masks(
    parsing: &SegmentationMap,
    boxes: &RegionBoxes,
    spec: &RegionSpec,
) -> Result<Vec<RegionMask>, GeometryError> {
    if parsing.dims() != boxes.image_size {
        return Err(GeometryError::DimensionMismatch {
            expected: boxes.image_size,
            got: parsing.dims(),
        });
    }
    let masks = boxes
        .boxes
        .iter()
        .map(|&(region_id, bbox)| {
            let labels = spec.region(region_id).map(|r| r.part_labels.as_slice()).unwrap_or(&[]);
            let mask = Array2::from_shape_fn(parsing.dims(), |(y, x)| {
                labels.contains(&parsing.labels[(y, x)]) && bbox.contains(x as f64, y as f64)
            });
            RegionMask { region_id, mask }
        })
        .collect();
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingBox, GarmentCategory};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxes(size: (usize, usize), b: Vec<(u32, BoundingBox)>) -> RegionBoxes {
        RegionBoxes {
            image_size: size,
            boxes: b,
            absent: vec![],
        }
    }

    #[test]
    fn label_and_box_both_required() {
        let mut labels = Array2::zeros((8, 8));
        labels[(2, 3)] = parts::TORSO;
        labels[(6, 6)] = parts::TORSO;
        let map = SegmentationMap::with_default_legend(labels).unwrap();
        let spec = RegionSpec::for_category(GarmentCategory::Upper);
        let b = boxes((8, 8), vec![(1, BoundingBox::new(1.0, 1.0, 4.0, 4.0))]);
        let masks = region_masks(&map, &b, &spec).unwrap();
        assert!(masks[0].mask[(2, 3)]);
        // matching label, outside the box
        assert!(!masks[0].mask[(6, 6)]);
        // inside the box, background label
        assert!(!masks[0].mask[(1, 1)]);
        assert_eq!(masks[0].count(), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let map = SegmentationMap::with_default_legend(Array2::zeros((4, 4))).unwrap();
        let spec = RegionSpec::for_category(GarmentCategory::Upper);
        let b = boxes((8, 8), vec![(1, BoundingBox::new(0.0, 0.0, 1.0, 1.0))]);
        assert!(matches!(
            region_masks(&map, &b, &spec),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unknown_label_rejected() {
        let mut labels = Array2::zeros((2, 2));
        labels[(0, 0)] = 200;
        assert!(SegmentationMap::with_default_legend(labels).is_err());
    }

    #[test]
    fn two_label_map_matches_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = RegionSpec::for_category(GarmentCategory::Upper);
        for _ in 0..20 {
            let labels = Array2::from_shape_fn((8, 8), |_| {
                [parts::BACKGROUND, parts::TORSO, parts::LEFT_UPPER_ARM][rng.random_range(0..3)]
            });
            let map = SegmentationMap::with_default_legend(labels.clone()).unwrap();
            let b1 = BoundingBox::new(1.0, 0.0, 5.0, 6.0);
            let b2 = BoundingBox::new(3.0, 2.0, 7.0, 7.0);
            let masks = region_masks(&map, &boxes((8, 8), vec![(1, b1), (2, b2)]), &spec).unwrap();
            for y in 0..8 {
                for x in 0..8 {
                    let in1 = (1..=5).contains(&x) && y <= 6 && labels[(y, x)] == parts::TORSO;
                    let in2 = x >= 3 && y >= 2 && labels[(y, x)] == parts::LEFT_UPPER_ARM;
                    assert_eq!(masks[0].mask[(y, x)], in1);
                    assert_eq!(masks[1].mask[(y, x)], in2);
                    assert!(!(masks[0].mask[(y, x)] && masks[1].mask[(y, x)]));
                }
            }
        }
    }
}
