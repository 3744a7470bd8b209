//! Human and robot-ready demonstration datasets: frame types, percentile
//! normalization, differential tactile preprocessing, action chunking and
//! on-disk storage.

mod normalize;
mod record;
mod store;

pub use normalize::{
    fit_normalization, frame_channels, normalize, normalize_frame, percentile, ChannelStats, NormalizationStats, CHANNEL_COUNT,
    DEFAULT_EPSILON, MIN_SAMPLES,
};
pub use record::{decode_trajectory, encode_trajectory, FrameRecord, RECORD_MAGIC};
pub use store::{
    export_csv, read_dataset, write_dataset, DatasetKind, ImageStore, Manifest, ManifestEntry, MANIFEST_FILE,
};

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::retarget::JOINT_COUNT;

/// Fingertip tactile slice indexed `[axis][magnetometer][finger]`, µT.
pub type TactileArray = [[[f64; 5]; 2]; 3];
/// Magnetometer 0 minus magnetometer 1, indexed `[axis][finger]`.
pub type DifferentialTactile = [[f64; 5]; 3];

pub const FRAME_RATE_HZ: f64 = 25.0;
pub const ACTION_HORIZON: usize = 16;
pub const ACTION_EXECUTE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("{0}")]
    Io(String),
    #[error("malformed record file: {0}")]
    Format(String),
    #[error("checksum mismatch for {file}")]
    ChecksumMismatch { file: String },
    #[error("trajectory {trajectory}: {frames} frames but {joints} joint vectors")]
    LengthMismatch { trajectory: String, frames: usize, joints: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("dataset has no trajectories")]
    EmptyDataset,
    #[error("channel {channel} has {samples} samples, need at least {MIN_SAMPLES}")]
    TooFewSamples { channel: usize, samples: usize },
    #[error("channel {channel} ({name}) is degenerate: 98th and 2nd percentiles coincide")]
    DegenerateChannel { channel: usize, name: String },
    #[error("expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("trajectory {trajectory}: timestamps stop increasing at frame {index}")]
    NonMonotonic { trajectory: String, index: usize },
    #[error("manifest disagrees with contents: {0}")]
    CountMismatch(String),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e.to_string())
    }
}

/// SHA-256 digest of an opaque image blob.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageRef(pub [u8; 32]);

impl ImageRef {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, DatasetError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| DatasetError::Format(format!("image reference {s}: {e}")))?;
        Ok(Self(out))
    }
}

impl fmt::Debug for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImageRef({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ImageRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ImageRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ImageRef::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// One human-demonstration frame: RGB and stereo IR images plus the glove's
/// fingertip tactile slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoFrame {
    pub timestamp_us: u64,
    pub rgb: ImageRef,
    pub ir_left: ImageRef,
    pub ir_right: ImageRef,
    pub tactile: TactileArray,
}

/// One robot-ready frame: the human RGB image and tactile data paired with
/// retargeted joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotFrame {
    pub timestamp_us: u64,
    pub rgb: ImageRef,
    pub q: [f64; JOINT_COUNT],
    pub tactile: TactileArray,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F> {
    pub id: String,
    pub source: String,
    pub rate_hz: f64,
    pub frames: Vec<F>,
}

impl<F: FrameRecord> Trajectory<F> {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if let Some(i) = self.frames.windows(2).position(|w| w[1].timestamp_us() <= w[0].timestamp_us()) {
            return Err(DatasetError::NonMonotonic { trajectory: self.id.clone(), index: i + 1 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    pub trajectories: Vec<Trajectory<F>>,
    pub normalization: Option<NormalizationStats>,
}

impl<F> Dataset<F> {
    pub fn frame_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.frames.len()).sum()
    }
}

/// Per fingertip and axis, magnetometer 0 minus magnetometer 1.
pub fn preprocess_tactile(t: &TactileArray) -> DifferentialTactile {
    std::array::from_fn(|axis| std::array::from_fn(|finger| t[axis][0][finger] - t[axis][1][finger]))
}

/// Flat variant taking 30 values in `[axis][magnetometer][finger]` order.
pub fn preprocess_tactile_flat(values: &[f64]) -> Result<DifferentialTactile, DatasetError> {
    if values.len() != 30 {
        return Err(DatasetError::Shape { expected: 30, found: values.len() });
    }
    let t: TactileArray =
        std::array::from_fn(|a| std::array::from_fn(|m| std::array::from_fn(|f| values[a * 10 + m * 5 + f])));
    Ok(preprocess_tactile(&t))
}

/// One training example: the observation index and the action targets that
/// follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample<T> {
    pub observation: usize,
    pub actions: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunks<T> {
    /// One per frame; actions past the end repeat the final action.
    pub samples: Vec<TrainingSample<T>>,
    /// Deployment schedule: the range of steps executed from each chunk.
    pub schedule: Vec<std::ops::Range<usize>>,
}

pub fn chunk_actions<T: Clone>(actions: &[T], horizon: usize, execute: usize) -> Result<ActionChunks<T>, DatasetError> {
    if actions.is_empty() {
        return Err(DatasetError::EmptyTrajectory);
    }
    if horizon == 0 || execute == 0 || execute > horizon {
        return Err(DatasetError::Format(format!("chunk horizon {horizon} / execute {execute} invalid")));
    }
    let n = actions.len();
    let samples = (0..n)
        .map(|t| TrainingSample {
            observation: t,
            actions: (t..t + horizon).map(|k| actions[k.min(n - 1)].clone()).collect(),
        })
        .collect();
    let schedule = (0..n).step_by(execute).map(|s| s..(s + execute).min(n)).collect();
    Ok(ActionChunks { samples, schedule })
}

/// Pairs each demonstration frame with its retargeted joints. IR images are
/// dropped; RGB references and tactile data pass through unchanged.
pub fn build_robot_dataset(
    demos: &[Trajectory<DemoFrame>],
    joints: &[Vec<[f64; JOINT_COUNT]>],
) -> Result<Vec<Trajectory<RobotFrame>>, DatasetError> {
    if demos.len() != joints.len() {
        return Err(DatasetError::CountMismatch(format!("{} demonstrations, {} joint sequences", demos.len(), joints.len())));
    }
    demos
        .par_iter()
        .zip(joints)
        .map(|(demo, q)| {
            if demo.frames.len() != q.len() {
                return Err(DatasetError::LengthMismatch { trajectory: demo.id.clone(), frames: demo.frames.len(), joints: q.len() });
            }
            Ok(Trajectory {
                id: demo.id.clone(),
                source: demo.source.clone(),
                rate_hz: demo.rate_hz,
                frames: demo
                    .frames
                    .iter()
                    .zip(q)
                    .map(|(f, q)| RobotFrame { timestamp_us: f.timestamp_us, rgb: f.rgb, q: *q, tactile: f.tactile })
                    .collect(),
            })
        })
        .collect()
}
