//! Keypoint files: one JSON object per line, one line per camera frame.
//!
//! ```text
//! {"timestamp_us":0,"frame":"camera","confidence":0.93,
//!  "keypoints":[[x,y,z], ... 21 entries],
//!  "wrist":{"rotation":[[..],[..],[..]],"translation":[x,y,z]},
//!  "cloud":[[x,y,z], ...],                       optional
//!  "rgb":"images/rgb_000000.bin",                optional
//!  "ir_left":"...", "ir_right":"..."}            optional
//! ```

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    isometry_from_parts, isometry_to_parts, FrameId, HandPoseError, HandPoseFrame, PointCloud, Vec3,
    KEYPOINT_COUNT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WristRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandPoseRecord {
    pub timestamp_us: u64,
    pub frame: FrameId,
    pub confidence: f64,
    pub keypoints: Vec<[f64; 3]>,
    pub wrist: WristRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir_left: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir_right: Option<String>,
}

impl HandPoseRecord {
    pub fn from_pose(pose: &HandPoseFrame, cloud: Option<&PointCloud>) -> Self {
        let (rotation, translation) = isometry_to_parts(&pose.wrist_pose);
        Self {
            timestamp_us: pose.timestamp_us,
            frame: pose.frame,
            confidence: pose.confidence,
            keypoints: pose.keypoints.iter().map(|k| (*k).into()).collect(),
            wrist: WristRecord { rotation, translation },
            cloud: cloud.map(|c| c.points.iter().map(|p| (*p).into()).collect()),
            rgb: None,
            ir_left: None,
            ir_right: None,
        }
    }

    pub fn pose(&self) -> Result<HandPoseFrame, HandPoseError> {
        if self.keypoints.len() != KEYPOINT_COUNT {
            return Err(HandPoseError::KeypointCount(self.keypoints.len()));
        }
        Ok(HandPoseFrame {
            timestamp_us: self.timestamp_us,
            keypoints: std::array::from_fn(|i| Vec3::from(self.keypoints[i])),
            wrist_pose: isometry_from_parts(self.wrist.rotation, self.wrist.translation, 1e-6)?,
            confidence: self.confidence.clamp(0.0, 1.0),
            frame: self.frame,
        })
    }

    pub fn point_cloud(&self) -> Option<PointCloud> {
        self.cloud.as_ref().map(|pts| PointCloud {
            points: pts.iter().map(|p| Vec3::from(*p)).collect(),
            frame: self.frame,
        })
    }
}

pub fn read_keypoint_file(path: &Path) -> Result<Vec<HandPoseRecord>, HandPoseError> {
    let file = std::fs::File::open(path).map_err(|e| HandPoseError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HandPoseError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: HandPoseRecord = serde_json::from_str(&line)
            .map_err(|e| HandPoseError::Io(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_keypoint_file(path: &Path, records: &[HandPoseRecord]) -> Result<(), HandPoseError> {
    let io_err = |e: std::io::Error| HandPoseError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| HandPoseError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Isometry3;

    #[test]
    fn records_round_trip_through_a_file() {
        let pose = HandPoseFrame {
            timestamp_us: 40_000,
            keypoints: std::array::from_fn(|i| Vec3::new(i as f64, 0.5, 0.25)),
            wrist_pose: Isometry3::new(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 0.3, 0.0)),
            confidence: 0.8,
            frame: FrameId::Camera,
        };
        let cloud = PointCloud { points: vec![Vec3::new(1.0, 2.0, 3.0)], frame: FrameId::Camera };
        let mut rec = HandPoseRecord::from_pose(&pose, Some(&cloud));
        rec.rgb = Some("rgb/0.bin".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kp.jsonl");
        write_keypoint_file(&path, &[rec.clone(), rec.clone()]).unwrap();
        let back = read_keypoint_file(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], rec);
        let p = back[0].pose().unwrap();
        assert_eq!(p.keypoints, pose.keypoints);
        assert!((p.wrist_pose.translation.vector - pose.wrist_pose.translation.vector).norm() < 1e-12);
        assert_eq!(back[0].point_cloud().unwrap(), cloud);
    }

    #[test]
    fn wrong_keypoint_count() {
        let rec = HandPoseRecord {
            timestamp_us: 0,
            frame: FrameId::Camera,
            confidence: 1.0,
            keypoints: vec![[0.0; 3]; 20],
            wrist: WristRecord { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] },
            cloud: None,
            rgb: None,
            ir_left: None,
            ir_right: None,
        };
        assert_eq!(rec.pose(), Err(HandPoseError::KeypointCount(20)));
    }
}
