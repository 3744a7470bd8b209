//! Demonstration bundle to robot-ready dataset.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{PipelineConfig, PipelineError, Resources, DEMOS_DIR, GLOVE_FILE, KEYPOINTS_FILE};
use crate::dataset::{
    build_robot_dataset, fit_normalization, write_dataset, Dataset, DemoFrame, ImageRef, ImageStore, Manifest,
    RobotFrame, Trajectory, FRAME_RATE_HZ,
};
use crate::handpose::{
    read_keypoint_file, refine_wrist_depth, to_robot_frame, Extrinsics, HandPoseRecord, HandTrajectory,
};
use crate::retarget::{retarget_trajectory, Verdict, JOINT_COUNT};
use crate::wire::{read_stream_file, timestamp_align, StreamStats, Timed};

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub name: String,
    pub glove_frames: usize,
    pub pose_frames: usize,
    pub stream: StreamStats,
    /// Clock ticks where both streams had a sample.
    pub aligned_frames: usize,
    /// Ticks dropped because one stream had no sample.
    pub unmatched_ticks: usize,
    /// Frames whose depth refinement failed and kept the estimator depth.
    pub refine_failures: Vec<usize>,
    pub skipped: Vec<(usize, Verdict)>,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutput {
    pub reports: Vec<DemoReport>,
    pub human: Vec<Trajectory<DemoFrame>>,
    pub robot: Dataset<RobotFrame>,
    pub manifest: Manifest,
}

/// Refines, transforms to the robot frame and smooths camera-frame pose
/// records. Returns the trajectory and the indices whose depth refinement
/// fell back to the estimator's depth.
pub fn hand_trajectory_from_records(
    records: &[HandPoseRecord],
    extrinsics: &Extrinsics,
    cfg: &PipelineConfig,
) -> Result<(HandTrajectory, Vec<usize>), PipelineError> {
    let mut failures = Vec::new();
    let mut frames = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let pose = rec.pose()?;
        let refined = match rec.point_cloud() {
            Some(cloud) => match refine_wrist_depth(&pose, &cloud, &cfg.refine) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("frame {i}: depth refinement skipped: {e}");
                    failures.push(i);
                    pose
                }
            },
            None => pose,
        };
        frames.push(to_robot_frame(&refined, extrinsics)?);
    }
    let traj = HandTrajectory::from_frames(&frames)?.smoothed(cfg.smoothing.window, cfg.smoothing.polyorder)?;
    Ok((traj, failures))
}

fn read_image(dir: &Path, rel: Option<&String>, store: &ImageStore, what: &str) -> Result<ImageRef, PipelineError> {
    let rel = rel.ok_or_else(|| PipelineError::Data(format!("{}: pose record without {what} image", dir.display())))?;
    let path = dir.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    Ok(store.put(&bytes)?)
}

/// Processes one demonstration directory into a human trajectory and its
/// retargeted joint sequence. Images are copied into `store`.
pub fn process_demo(
    dir: &Path,
    id: &str,
    cfg: &PipelineConfig,
    res: &Resources,
    store: &ImageStore,
) -> Result<(Trajectory<DemoFrame>, Vec<[f64; JOINT_COUNT]>, DemoReport), PipelineError> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let extrinsics = res.extrinsics.as_ref().ok_or_else(|| PipelineError::Config("no extrinsics configured".into()))?;
    let glove_path = dir.join(GLOVE_FILE);
    let (glove, stream) =
        read_stream_file(&glove_path).map_err(|e| PipelineError::Data(format!("{}: {e}", glove_path.display())))?;
    if stream.packets_dropped > 0 || stream.crc_failures > 0 {
        log::warn!("{name}: {} packets dropped, {} CRC failures", stream.packets_dropped, stream.crc_failures);
    }
    let poses = read_keypoint_file(&dir.join(KEYPOINTS_FILE))?;

    let glove_times: Vec<Timed<usize>> = glove.iter().enumerate().map(|(i, f)| Timed::new(f.timestamp_us, i)).collect();
    let pose_times: Vec<Timed<usize>> = poses.iter().enumerate().map(|(i, p)| Timed::new(p.timestamp_us, i)).collect();
    let table = timestamp_align(&[glove_times, pose_times], cfg.alignment_rate_hz)
        .map_err(|e| PipelineError::Data(format!("{name}: {e}")))?;
    let pairs: Vec<(u64, usize, usize)> = table
        .clock_us
        .iter()
        .zip(table.columns[0].iter().zip(&table.columns[1]))
        .filter_map(|(&t, (g, p))| Some((t, (*g)?, (*p)?)))
        .collect();
    let unmatched = table.clock_us.len() - pairs.len();
    if unmatched > 0 {
        log::warn!("{name}: {unmatched} clock ticks without both glove and camera samples");
    }

    let matched: Vec<HandPoseRecord> = pairs
        .iter()
        .map(|&(t, _, p)| HandPoseRecord { timestamp_us: t, ..poses[p].clone() })
        .collect();
    let (traj, refine_failures) = hand_trajectory_from_records(&matched, extrinsics, cfg)?;
    let out = retarget_trajectory(&traj, &res.chain, &res.environment, &res.safety, &cfg.retarget, None)?;
    for (i, verdict) in &out.skipped {
        log::warn!("{name}: frame {i} rejected by the safety filter ({verdict:?}); previous pose repeated");
    }

    let frames = pairs
        .iter()
        .zip(&matched)
        .map(|(&(t, g, _), rec)| {
            Ok(DemoFrame {
                timestamp_us: t,
                rgb: read_image(dir, rec.rgb.as_ref(), store, "rgb")?,
                ir_left: read_image(dir, rec.ir_left.as_ref(), store, "ir_left")?,
                ir_right: read_image(dir, rec.ir_right.as_ref(), store, "ir_right")?,
                tactile: glove[g].fingertip_tactile(),
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let joints: Vec<[f64; JOINT_COUNT]> = out.joints.iter().map(|q| (*q).into()).collect();
    let report = DemoReport {
        name: name.clone(),
        glove_frames: glove.len(),
        pose_frames: poses.len(),
        stream,
        aligned_frames: pairs.len(),
        unmatched_ticks: unmatched,
        refine_failures,
        skipped: out.skipped,
        max_residual: out.residuals.iter().copied().fold(0.0, f64::max),
    };
    let traj = Trajectory { id: id.to_string(), source: name, rate_hz: FRAME_RATE_HZ, frames };
    Ok((traj, joints, report))
}

fn demo_dirs(bundle: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let root = bundle.join(DEMOS_DIR);
    let entries = std::fs::read_dir(&root).map_err(|e| PipelineError::Config(format!("{}: {e}", root.display())))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(PipelineError::Config(format!("{} holds no demonstrations", root.display())));
    }
    Ok(dirs)
}

/// Processes every demonstration of a bundle in parallel and writes the
/// robot-ready dataset, with normalization statistics, to `out`.
pub fn process_bundle(bundle: &Path, out: &Path, cfg: &PipelineConfig) -> Result<ProcessOutput, PipelineError> {
    let res = cfg.resources(Some(bundle))?;
    let dirs = demo_dirs(bundle)?;
    std::fs::create_dir_all(out).map_err(|e| PipelineError::Data(format!("{}: {e}", out.display())))?;
    let store = ImageStore::in_dataset(out);

    let results = dirs
        .par_iter()
        .enumerate()
        .map(|(i, dir)| process_demo(dir, &format!("traj_{i:03}"), cfg, &res, &store))
        .collect::<Result<Vec<_>, _>>()?;
    let mut human = Vec::with_capacity(results.len());
    let mut joints = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    for (t, q, r) in results {
        human.push(t);
        joints.push(q);
        reports.push(r);
    }
    let trajectories = build_robot_dataset(&human, &joints)?;
    let normalization = fit_normalization(&trajectories, cfg.normalization.centered)?;
    let robot = Dataset { trajectories, normalization: Some(normalization) };
    let manifest = write_dataset(out, &robot)?;
    Ok(ProcessOutput { reports, human, robot, manifest })
}
