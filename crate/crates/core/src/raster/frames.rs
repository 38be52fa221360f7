use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Point;
use crate::error::{Error, Result};
use crate::jsonl::read_jsonl;

/// One ego pose sample in the base-map frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub index: u64,
    pub x_m: f64,
    pub y_m: f64,
    pub yaw_rad: f64,
    /// Capture time in microseconds, when known.
    #[serde(default)]
    pub timestamp: Option<i64>,
}

impl FrameRecord {
    pub fn position(&self) -> Point {
        Point::new(self.x_m, self.y_m)
    }
}

/// Reads a frame manifest and checks that frame ids are unique.
///
/// Positions are not bounds-checked here; frames outside a layer fail
/// individually when processed.
pub fn load_manifest(path: &Path) -> Result<Vec<FrameRecord>> {
    let frames: Vec<FrameRecord> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for (i, f) in frames.iter().enumerate() {
        if !seen.insert(f.frame_id.as_str()) {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("duplicate frame_id {}", f.frame_id),
            });
        }
        if !f.x_m.is_finite() || !f.y_m.is_finite() || !f.yaw_rad.is_finite() {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "non-finite pose".into(),
            });
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frames.jsonl");
        std::fs::write(
            &p,
            "{\"frame_id\":\"a\",\"index\":1,\"x_m\":1.0,\"y_m\":2.0,\"yaw_rad\":0.5,\"timestamp\":1530000000}\n\n\
             {\"frame_id\":\"b\",\"index\":2,\"x_m\":3.0,\"y_m\":4.0,\"yaw_rad\":0.0}\n",
        )
        .unwrap();
        let frames = load_manifest(&p).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].timestamp, Some(1530000000));
        assert_eq!(frames[1].timestamp, None);

        std::fs::write(
            &p,
            "{\"frame_id\":\"a\",\"index\":1,\"x_m\":1.0,\"y_m\":2.0,\"yaw_rad\":0.5}\n\
             {\"frame_id\":\"a\",\"index\":2,\"x_m\":3.0,\"y_m\":4.0,\"yaw_rad\":0.0}\n",
        )
        .unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Record { line: 2, .. })));
    }
}
