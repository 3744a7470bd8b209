//! Dataset directories:
//!
//! ```text
//! <root>/manifest.json            counts, per-file SHA-256, normalization
//! <root>/trajectories/<id>.rec    one record file per trajectory
//! <root>/images/<sha256>.bin      content-addressed image blobs
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::normalize::{channel_name, frame_channels, CHANNEL_COUNT};
use super::record::{decode_trajectory, encode_trajectory, FrameRecord};
use super::{Dataset, DatasetError, ImageRef, NormalizationStats, RobotFrame};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "osmo-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Human,
    Robot,
}

impl DatasetKind {
    fn of<F: FrameRecord>() -> Self {
        if F::KIND == 1 { DatasetKind::Human } else { DatasetKind::Robot }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub source: String,
    /// Relative to the dataset root.
    pub file: String,
    pub frames: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: DatasetKind,
    pub trajectory_count: usize,
    pub frame_count: usize,
    pub trajectories: Vec<ManifestEntry>,
    pub normalization: Option<NormalizationStats>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let path = root.join(MANIFEST_FILE);
        let src = std::fs::read_to_string(&path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&src).map_err(|e| DatasetError::Format(format!("{}: {e}", path.display())))
    }
}

/// Content-addressed blob directory.
#[derive(Debug, Clone)]
pub struct ImageStore {
    dir: PathBuf,
}

impl ImageStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn in_dataset(root: &Path) -> Self {
        Self::new(root.join("images"))
    }

    pub fn path(&self, r: &ImageRef) -> PathBuf {
        self.dir.join(format!("{}.bin", r.to_hex()))
    }

    /// Stores `bytes` unless an identical blob is already present.
    pub fn put(&self, bytes: &[u8]) -> Result<ImageRef, DatasetError> {
        let r = ImageRef::of(bytes);
        let path = self.path(&r);
        if !path.exists() {
            std::fs::create_dir_all(&self.dir)?;
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(&tmp, &path)?;
        }
        Ok(r)
    }

    /// Reads a blob and checks it against its reference.
    pub fn get(&self, r: &ImageRef) -> Result<Vec<u8>, DatasetError> {
        let path = self.path(r);
        let bytes = std::fs::read(&path).map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
        if ImageRef::of(&bytes) != *r {
            return Err(DatasetError::ChecksumMismatch { file: path.display().to_string() });
        }
        Ok(bytes)
    }

    pub fn contains(&self, r: &ImageRef) -> bool {
        self.path(r).is_file()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every trajectory file, then the manifest. Images must already be
/// in `ImageStore::in_dataset(root)`.
pub fn write_dataset<F: FrameRecord>(root: &Path, dataset: &Dataset<F>) -> Result<Manifest, DatasetError> {
    let dir = root.join("trajectories");
    std::fs::create_dir_all(&dir)?;
    for t in &dataset.trajectories {
        t.validate()?;
    }
    let entries: Vec<ManifestEntry> = dataset
        .trajectories
        .par_iter()
        .map(|t| {
            let bytes = encode_trajectory(t)?;
            let file = format!("trajectories/{}.rec", t.id);
            std::fs::write(root.join(&file), &bytes)?;
            Ok(ManifestEntry { id: t.id.clone(), source: t.source.clone(), file, frames: t.frames.len(), sha256: sha256_hex(&bytes) })
        })
        .collect::<Result<_, DatasetError>>()?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        kind: DatasetKind::of::<F>(),
        trajectory_count: entries.len(),
        frame_count: dataset.frame_count(),
        trajectories: entries,
        normalization: dataset.normalization.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Format(e.to_string()))?;
    std::fs::write(root.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

/// Reads a dataset, verifying each trajectory file's checksum and the
/// manifest counts.
pub fn read_dataset<F: FrameRecord>(root: &Path) -> Result<Dataset<F>, DatasetError> {
    let manifest = Manifest::load(root)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(DatasetError::Format(format!("unsupported dataset {} v{}", manifest.format, manifest.version)));
    }
    if manifest.kind != DatasetKind::of::<F>() {
        return Err(DatasetError::Format(format!("dataset holds {:?} frames", manifest.kind)));
    }
    if manifest.trajectory_count != manifest.trajectories.len() {
        return Err(DatasetError::CountMismatch("trajectory count".into()));
    }
    let trajectories: Vec<_> = manifest
        .trajectories
        .par_iter()
        .map(|e| {
            let path = root.join(&e.file);
            let bytes = std::fs::read(&path).map_err(|err| DatasetError::Io(format!("{}: {err}", path.display())))?;
            if sha256_hex(&bytes) != e.sha256 {
                return Err(DatasetError::ChecksumMismatch { file: e.file.clone() });
            }
            let t = decode_trajectory::<F>(&bytes)?;
            if t.frames.len() != e.frames || t.id != e.id {
                return Err(DatasetError::CountMismatch(format!("trajectory {}", e.id)));
            }
            t.validate()?;
            Ok(t)
        })
        .collect::<Result<_, DatasetError>>()?;
    let dataset = Dataset { trajectories, normalization: manifest.normalization };
    if dataset.frame_count() != manifest.frame_count {
        return Err(DatasetError::CountMismatch("frame count".into()));
    }
    Ok(dataset)
}

/// Flat CSV of raw joint positions and differential tactile values, one row
/// per frame.
pub fn export_csv<W: Write>(dataset: &Dataset<RobotFrame>, mut w: W) -> Result<(), DatasetError> {
    let header: Vec<String> = ["trajectory", "frame", "timestamp_us"]
        .into_iter()
        .map(String::from)
        .chain((0..CHANNEL_COUNT).map(channel_name))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for t in &dataset.trajectories {
        for (k, f) in t.frames.iter().enumerate() {
            let values: Vec<String> = frame_channels(f).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{},{}", t.id, k, f.timestamp_us, values.join(","))?;
        }
    }
    Ok(())
}
