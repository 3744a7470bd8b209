//! Per-channel percentile normalization with clipping to [-1.5, 1.5].

use serde::{Deserialize, Serialize};

use super::{preprocess_tactile, DatasetError, RobotFrame, Trajectory};
use crate::retarget::JOINT_COUNT;

/// 13 joint positions followed by 15 differential tactile values
/// (`[axis][finger]`, row-major).
pub const CHANNEL_COUNT: usize = JOINT_COUNT + 15;
pub const MIN_SAMPLES: usize = 50;
pub const DEFAULT_EPSILON: f64 = 1e-9;
const CLIP: f64 = 1.5;
const LOW_QUANTILE: f64 = 0.02;
const HIGH_QUANTILE: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel: usize,
    pub name: String,
    /// 2nd percentile.
    pub p02: f64,
    /// 98th percentile.
    pub p98: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub channels: Vec<ChannelStats>,
    /// Maps the percentile band to [-1, 1] instead of [0, 2].
    #[serde(default)]
    pub centered: bool,
}

pub(crate) fn channel_name(i: usize) -> String {
    const AXES: [&str; 3] = ["x", "y", "z"];
    const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];
    if i < JOINT_COUNT {
        format!("q{i}")
    } else {
        let t = i - JOINT_COUNT;
        format!("tactile_{}_{}", FINGERS[t % 5], AXES[t / 5])
    }
}

/// Joint positions and differential tactile values of one frame.
pub fn frame_channels(frame: &RobotFrame) -> [f64; CHANNEL_COUNT] {
    let d = preprocess_tactile(&frame.tactile);
    std::array::from_fn(|i| if i < JOINT_COUNT { frame.q[i] } else { d[(i - JOINT_COUNT) / 5][(i - JOINT_COUNT) % 5] })
}

/// Empirical quantile of sorted data, interpolating linearly between order
/// statistics at rank `(n - 1) p`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ChannelStats {
    pub fn fit(channel: usize, name: String, values: &[f64], epsilon: f64) -> Result<Self, DatasetError> {
        if values.len() < MIN_SAMPLES {
            return Err(DatasetError::TooFewSamples { channel, samples: values.len() });
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let p02 = percentile(&sorted, LOW_QUANTILE);
        let p98 = percentile(&sorted, HIGH_QUANTILE);
        if !(p98 - p02 >= epsilon) {
            return Err(DatasetError::DegenerateChannel { channel, name });
        }
        Ok(Self { channel, name, p02, p98 })
    }
}

/// `min(max(-1.5, 2 (x - p02) / (p98 - p02)), 1.5)`, or with `- 1` inside
/// the clip when `centered`.
pub fn normalize(x: f64, stats: &ChannelStats, centered: bool) -> Result<f64, DatasetError> {
    let span = stats.p98 - stats.p02;
    if !(span >= DEFAULT_EPSILON) {
        return Err(DatasetError::DegenerateChannel { channel: stats.channel, name: stats.name.clone() });
    }
    let mut y = 2.0 * (x - stats.p02) / span;
    if centered {
        y -= 1.0;
    }
    Ok(y.clamp(-CLIP, CLIP))
}

impl NormalizationStats {
    pub fn fit_channels(columns: &[Vec<f64>], names: &[String], centered: bool) -> Result<Self, DatasetError> {
        let channels = columns
            .iter()
            .zip(names)
            .enumerate()
            .map(|(i, (col, name))| ChannelStats::fit(i, name.clone(), col, DEFAULT_EPSILON))
            .collect::<Result<_, _>>()?;
        Ok(Self { channels, centered })
    }
}

/// Fits percentiles for every joint and differential tactile channel over
/// all frames of the robot-ready dataset.
pub fn fit_normalization(trajectories: &[Trajectory<RobotFrame>], centered: bool) -> Result<NormalizationStats, DatasetError> {
    if trajectories.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut columns = vec![Vec::new(); CHANNEL_COUNT];
    for frame in trajectories.iter().flat_map(|t| &t.frames) {
        for (col, v) in columns.iter_mut().zip(frame_channels(frame)) {
            col.push(v);
        }
    }
    let names: Vec<String> = (0..CHANNEL_COUNT).map(channel_name).collect();
    NormalizationStats::fit_channels(&columns, &names, centered)
}

/// Normalized observation vector of one frame.
pub fn normalize_frame(frame: &RobotFrame, stats: &NormalizationStats) -> Result<[f64; CHANNEL_COUNT], DatasetError> {
    if stats.channels.len() != CHANNEL_COUNT {
        return Err(DatasetError::Shape { expected: CHANNEL_COUNT, found: stats.channels.len() });
    }
    let raw = frame_channels(frame);
    let mut out = [0.0; CHANNEL_COUNT];
    for i in 0..CHANNEL_COUNT {
        out[i] = normalize(raw[i], &stats.channels[i], stats.centered)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(p02: f64, p98: f64) -> ChannelStats {
        ChannelStats { channel: 0, name: "c".into(), p02, p98 }
    }

    #[test]
    fn one_to_hundred_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = ChannelStats::fit(0, "c".into(), &v, DEFAULT_EPSILON).unwrap();
        assert!((s.p02 - 2.98).abs() < 1e-12);
        assert!((s.p98 - 98.02).abs() < 1e-12);
    }

    #[test]
    fn constant_and_short_channels() {
        assert!(matches!(ChannelStats::fit(3, "c".into(), &[1.0; 60], DEFAULT_EPSILON), Err(DatasetError::DegenerateChannel { channel: 3, .. })));
        assert!(matches!(ChannelStats::fit(0, "c".into(), &[1.0; 49], DEFAULT_EPSILON), Err(DatasetError::TooFewSamples { .. })));
    }

    #[test]
    fn symmetric_channel() {
        let v: Vec<f64> = (1..=40).flat_map(|k| [k as f64 * 0.37, -(k as f64) * 0.37]).collect();
        let s = ChannelStats::fit(0, "c".into(), &v, DEFAULT_EPSILON).unwrap();
        assert!((s.p02 + s.p98).abs() < 1e-12);
    }

    #[test]
    fn formula_examples() {
        let s = stats(0.0, 10.0);
        assert_eq!(normalize(0.0, &s, false).unwrap(), 0.0);
        assert_eq!(normalize(5.0, &s, false).unwrap(), 1.0);
        assert_eq!(normalize(10.0, &s, false).unwrap(), 1.5);
        assert_eq!(normalize(-1e9, &s, false).unwrap(), -1.5);
        assert_eq!(normalize(5.0, &s, true).unwrap(), 0.0);
        assert_eq!(normalize(10.0, &s, true).unwrap(), 1.0);
        assert!(normalize(1.0, &stats(2.0, 2.0), false).is_err());
    }
}
