//! End-to-end processing of demonstration bundles into robot-ready datasets,
//! plus a generator for synthetic bundles.
//!
//! A bundle is a directory:
//!
//! ```text
//! <bundle>/extrinsics.toml
//! <bundle>/demos/<name>/glove.osmo        glove packet stream
//! <bundle>/demos/<name>/keypoints.jsonl   camera-frame hand poses
//! <bundle>/demos/<name>/images/*.bin      opaque RGB and IR blobs
//! ```

mod process;
mod synth;

pub use process::{hand_trajectory_from_records, process_bundle, process_demo, DemoReport, ProcessOutput};
pub use synth::{synthesize_bundle, wipe_joint_trajectory, SynthConfig, SynthSummary};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::handpose::{Extrinsics, HandPoseError, RefineParams};
use crate::retarget::{Environment, KinematicChain, RetargetConfig, RetargetError, SafetyConfig};
use crate::sensor_sim::{GloveGeometry, SimError};

pub const EXTRINSICS_FILE: &str = "extrinsics.toml";
pub const DEMOS_DIR: &str = "demos";
pub const GLOVE_FILE: &str = "glove.osmo";
pub const KEYPOINTS_FILE: &str = "keypoints.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Missing or unparsable configuration; nothing was processed.
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data could not be turned into a valid dataset.
    #[error("data error: {0}")]
    Data(String),
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<HandPoseError> for PipelineError {
    fn from(e: HandPoseError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<RetargetError> for PipelineError {
    fn from(e: RetargetError) -> Self {
        match e {
            RetargetError::Config(m) => PipelineError::Config(m),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<SimError> for PipelineError {
    fn from(e: SimError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub geometry: Option<PathBuf>,
    pub chain: Option<PathBuf>,
    pub environment: Option<PathBuf>,
    pub safety: Option<PathBuf>,
    /// Defaults to `extrinsics.toml` inside the bundle.
    pub extrinsics: Option<PathBuf>,
    pub dataset_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig {
    pub window: usize,
    pub polyorder: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { window: 9, polyorder: 3 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationConfig {
    pub centered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Common clock for glove and camera streams, Hz.
    pub alignment_rate_hz: f64,
    pub paths: PathsConfig,
    pub refine: RefineParams,
    pub smoothing: SmoothingConfig,
    pub retarget: RetargetConfig,
    pub safety: SafetyConfig,
    pub normalization: NormalizationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            alignment_rate_hz: 25.0,
            paths: PathsConfig::default(),
            refine: RefineParams::default(),
            smoothing: SmoothingConfig::default(),
            retarget: RetargetConfig::default(),
            safety: SafetyConfig::default(),
            normalization: NormalizationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let src = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&src).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("pipeline config serializes")
    }

    /// Loads everything the processing stages need, failing before any data
    /// is touched when a file is missing or malformed.
    pub fn resources(&self, bundle: Option<&Path>) -> Result<Resources, PipelineError> {
        let chain = match &self.paths.chain {
            Some(p) => KinematicChain::load(p)?,
            None => KinematicChain::default_chain(),
        };
        let environment = match &self.paths.environment {
            Some(p) => Environment::load(p)?,
            None => Environment::default_environment(),
        };
        let safety = match &self.paths.safety {
            Some(p) => SafetyConfig::load(p)?,
            None => self.safety.clone(),
        };
        if !(safety.max_wrist_speed > 0.0) || !(safety.collision_margin >= 0.0) {
            return Err(PipelineError::Config("max_wrist_speed must be positive and collision_margin non-negative".into()));
        }
        let geometry = match &self.paths.geometry {
            Some(p) => GloveGeometry::load(p)?,
            None => GloveGeometry::default_glove()?,
        };
        let extrinsics_path = match (&self.paths.extrinsics, bundle) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(b)) => Some(b.join(EXTRINSICS_FILE)),
            (None, None) => None,
        };
        let extrinsics = match extrinsics_path {
            Some(p) if !p.is_file() => {
                return Err(PipelineError::Config(format!("extrinsics file {} not found", p.display())))
            }
            Some(p) => Some(Extrinsics::load(&p).map_err(|e| PipelineError::Config(e.to_string()))?),
            None => None,
        };
        Ok(Resources { chain, environment, safety, geometry, extrinsics })
    }
}

/// Parsed configuration files.
#[derive(Debug, Clone)]
pub struct Resources {
    pub chain: KinematicChain,
    pub environment: Environment,
    pub safety: SafetyConfig,
    pub geometry: GloveGeometry,
    pub extrinsics: Option<Extrinsics>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: PipelineConfig = toml::from_str("seed = 3\n[smoothing]\nwindow = 11\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.smoothing.window, 11);
        assert_eq!(cfg.smoothing.polyorder, 3);
        assert_eq!(cfg.retarget, RetargetConfig::default());
    }

    #[test]
    fn missing_extrinsics_fails_fast() {
        let dir = tempfile::tempdir().unwrap();
        match PipelineConfig::default().resources(Some(dir.path())) {
            Err(PipelineError::Config(m)) => assert!(m.contains("extrinsics")),
            other => panic!("{other:?}"),
        }
    }
}
