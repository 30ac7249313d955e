use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::{io_err, IoError};
use crate::geometry::{Keypoint, Skeleton, NUM_KEYPOINTS};

/// Parses a pose document: `{"people": [{"pose_keypoints_2d": [x, y, c, ...]}]}`.
/// Other fields are ignored.
pub fn parse_keypoints(text: &str, image_size: (usize, usize)) -> Result<Vec<Skeleton>, IoError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| IoError::MalformedDocument(e.to_string()))?;
    let people = doc
        .get("people")
        .and_then(Value::as_array)
        .ok_or_else(|| IoError::MalformedDocument("missing \"people\" list".into()))?;
    people
        .iter()
        .enumerate()
        .map(|(i, person)| {
            let values = person
                .get("pose_keypoints_2d")
                .and_then(Value::as_array)
                .ok_or_else(|| IoError::MalformedDocument(format!("person {i}: missing \"pose_keypoints_2d\"")))?;
            if values.len() != 3 * NUM_KEYPOINTS {
                return Err(IoError::WrongKeypointCount {
                    person: i,
                    got: values.len(),
                });
            }
            let nums = values
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| IoError::MalformedDocument(format!("person {i}: non-numeric entry {v}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let kps = nums.chunks_exact(3).map(|c| Keypoint::new(c[0], c[1], c[2])).collect();
            Ok(Skeleton::new(kps, image_size)?)
        })
        .collect()
}

/// One skeleton per person entry, in document order. Keypoints outside
/// the `(height, width)` image are flagged with confidence 0.
pub fn read_keypoints(path: &Path, image_size: (usize, usize)) -> Result<Vec<Skeleton>, IoError> {
    parse_keypoints(&fs::read_to_string(path).map_err(io_err(path))?, image_size)
}

pub fn write_keypoints(path: &Path, skeletons: &[Skeleton]) -> Result<(), IoError> {
    let people: Vec<Value> = skeletons
        .iter()
        .map(|s| {
            let flat: Vec<f64> = s.keypoints().iter().flat_map(|k| [k.x, k.y, k.confidence]).collect();
            json!({ "pose_keypoints_2d": flat })
        })
        .collect();
    let text = serde_json::to_string_pretty(&json!({ "version": 1.3, "people": people }))
        .map_err(|e| IoError::MalformedDocument(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}
