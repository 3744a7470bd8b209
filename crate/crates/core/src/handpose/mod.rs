//! Post-processing of externally estimated hand poses: camera-to-robot
//! transforms, depth refinement of the wrist from a hand point cloud, and
//! trajectory smoothing.

mod io;
mod savgol;

pub use io::{read_keypoint_file, write_keypoint_file, HandPoseRecord, WristRecord};
pub use savgol::{savgol_weights, smooth_series, smooth_trajectory, SavitzkyGolay};

use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

pub const KEYPOINT_COUNT: usize = 21;
pub const WRIST_KEYPOINT: usize = 0;
/// Fingertip keypoints in thumb, index, middle, ring, pinky order.
pub const FINGERTIP_KEYPOINTS: [usize; 5] = [4, 8, 12, 16, 20];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandPoseError {
    #[error("expected data in the {expected:?} frame, found {found:?}")]
    FrameMismatch { expected: FrameId, found: FrameId },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("only {within} of the {k} nearest points lie within the radius gate")]
    DegenerateNeighborhood { within: usize, k: usize },
    #[error("window {window} / polyorder {polyorder} invalid: window must be odd and exceed polyorder")]
    BadWindow { window: usize, polyorder: usize },
    #[error("series of {len} samples is shorter than the {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("rotation is not orthonormal (error {0:e})")]
    NotOrthonormal(f64),
    #[error("expected {KEYPOINT_COUNT} keypoints, found {0}")]
    KeypointCount(usize),
    #[error("hand trajectory is empty")]
    EmptyTrajectory,
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameId {
    Camera,
    Robot,
}

/// Builds a rigid transform from a row-major rotation matrix, rejecting
/// matrices that are not orthonormal within `tol`.
pub fn isometry_from_parts(rotation: [[f64; 3]; 3], translation: [f64; 3], tol: f64) -> Result<Isometry3<f64>, HandPoseError> {
    let m = Matrix3::from_fn(|r, c| rotation[r][c]);
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    if !(err <= tol) || m.determinant() < 0.0 {
        return Err(HandPoseError::NotOrthonormal(err));
    }
    let rot = Rotation3::from_matrix_unchecked(m);
    Ok(Isometry3::from_parts(
        Translation3::from(Vec3::from(translation)),
        UnitQuaternion::from_rotation_matrix(&rot),
    ))
}

pub fn isometry_to_parts(iso: &Isometry3<f64>) -> ([[f64; 3]; 3], [f64; 3]) {
    let m = iso.rotation.to_rotation_matrix().into_inner();
    let rows = std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]));
    (rows, iso.translation.vector.into())
}

/// Camera pose in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub camera_to_robot: Isometry3<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrinsicsFile {
    /// Row-major rotation taking camera-frame vectors into the robot frame.
    pub rotation: [[f64; 3]; 3],
    /// Camera origin in the robot frame, meters.
    pub translation: [f64; 3],
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self { camera_to_robot: Isometry3::identity() }
    }

    pub fn from_file(file: &ExtrinsicsFile) -> Result<Self, HandPoseError> {
        Ok(Self { camera_to_robot: isometry_from_parts(file.rotation, file.translation, 1e-6)? })
    }

    pub fn to_file(&self) -> ExtrinsicsFile {
        let (rotation, translation) = isometry_to_parts(&self.camera_to_robot);
        ExtrinsicsFile { rotation, translation }
    }

    pub fn load(path: &Path) -> Result<Self, HandPoseError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| HandPoseError::Io(format!("{}: {e}", path.display())))?;
        let file: ExtrinsicsFile =
            toml::from_str(&src).map_err(|e| HandPoseError::Io(format!("{}: {e}", path.display())))?;
        Self::from_file(&file)
    }

    pub fn inverse(&self) -> Self {
        Self { camera_to_robot: self.camera_to_robot.inverse() }
    }
}

/// One hand estimate: 21 keypoints plus the wrist pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPoseFrame {
    pub timestamp_us: u64,
    pub keypoints: [Vec3; KEYPOINT_COUNT],
    pub wrist_pose: Isometry3<f64>,
    pub confidence: f64,
    pub frame: FrameId,
}

impl HandPoseFrame {
    pub fn fingertips(&self) -> [Vec3; 5] {
        FINGERTIP_KEYPOINTS.map(|i| self.keypoints[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub frame: FrameId,
}

/// Data that lives in a named frame and can be moved rigidly.
pub trait Framed: Sized {
    fn frame(&self) -> FrameId;
    fn transformed(&self, iso: &Isometry3<f64>, frame: FrameId) -> Self;
}

impl Framed for PointCloud {
    fn frame(&self) -> FrameId {
        self.frame
    }

    fn transformed(&self, iso: &Isometry3<f64>, frame: FrameId) -> Self {
        Self { points: self.points.iter().map(|p| iso.transform_point(&(*p).into()).coords).collect(), frame }
    }
}

impl Framed for HandPoseFrame {
    fn frame(&self) -> FrameId {
        self.frame
    }

    fn transformed(&self, iso: &Isometry3<f64>, frame: FrameId) -> Self {
        Self {
            keypoints: self.keypoints.map(|p| iso.transform_point(&p.into()).coords),
            wrist_pose: iso * self.wrist_pose,
            frame,
            ..self.clone()
        }
    }
}

pub fn to_robot_frame<T: Framed>(item: &T, extrinsics: &Extrinsics) -> Result<T, HandPoseError> {
    if item.frame() != FrameId::Camera {
        return Err(HandPoseError::FrameMismatch { expected: FrameId::Camera, found: item.frame() });
    }
    Ok(item.transformed(&extrinsics.camera_to_robot, FrameId::Robot))
}

pub fn to_camera_frame<T: Framed>(item: &T, extrinsics: &Extrinsics) -> Result<T, HandPoseError> {
    if item.frame() != FrameId::Robot {
        return Err(HandPoseError::FrameMismatch { expected: FrameId::Robot, found: item.frame() });
    }
    Ok(item.transformed(&extrinsics.camera_to_robot.inverse(), FrameId::Camera))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineParams {
    /// Neighbourhood size around the wrist keypoint.
    pub k: usize,
    /// Planar radius gate, meters.
    pub radius: f64,
    /// Coordinate replaced by the neighbourhood median: 2 is camera depth
    /// for camera-frame data, or height for robot-frame data.
    pub depth_axis: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self { k: 50, radius: 0.05, depth_axis: 2 }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Moves the whole hand along the depth axis so the wrist keypoint sits at
/// the median depth of its `k` planar-nearest cloud points. Only the depth
/// coordinate of the keypoints and wrist translation changes.
pub fn refine_wrist_depth(
    pose: &HandPoseFrame,
    cloud: &PointCloud,
    params: &RefineParams,
) -> Result<HandPoseFrame, HandPoseError> {
    if cloud.frame != pose.frame {
        return Err(HandPoseError::FrameMismatch { expected: pose.frame, found: cloud.frame });
    }
    if cloud.points.is_empty() {
        return Err(HandPoseError::EmptyCloud);
    }
    if params.k == 0 || params.depth_axis > 2 {
        return Err(HandPoseError::DegenerateNeighborhood { within: 0, k: params.k });
    }
    let d = params.depth_axis;
    let (a, b) = ((d + 1) % 3, (d + 2) % 3);
    let wrist = pose.keypoints[WRIST_KEYPOINT];
    let mut scored: Vec<(f64, f64)> = cloud
        .points
        .iter()
        .map(|p| (((p[a] - wrist[a]).powi(2) + (p[b] - wrist[b]).powi(2)).sqrt(), p[d]))
        .collect();
    let k = params.k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, |x, y| x.0.total_cmp(&y.0));
    }
    let neighbours = &scored[..k];
    let within = neighbours.iter().filter(|(dist, _)| *dist <= params.radius).count();
    if 2 * within < params.k {
        return Err(HandPoseError::DegenerateNeighborhood { within, k: params.k });
    }
    let mut depths: Vec<f64> = neighbours.iter().map(|(_, z)| *z).collect();
    let shift = median(&mut depths) - wrist[d];

    let mut out = pose.clone();
    for kp in &mut out.keypoints {
        kp[d] += shift;
    }
    out.wrist_pose.translation.vector[d] += shift;
    Ok(out)
}

/// Robot-frame wrist and fingertip trajectory ready for retargeting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandTrajectory {
    pub timestamps_us: Vec<u64>,
    pub wrist: Vec<Isometry3<f64>>,
    /// Thumb, index, middle, ring, pinky.
    pub fingertips: Vec<[Vec3; 5]>,
}

impl HandTrajectory {
    pub fn len(&self) -> usize {
        self.timestamps_us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps_us.is_empty()
    }

    pub fn from_frames(frames: &[HandPoseFrame]) -> Result<Self, HandPoseError> {
        if let Some(f) = frames.iter().find(|f| f.frame != FrameId::Robot) {
            return Err(HandPoseError::FrameMismatch { expected: FrameId::Robot, found: f.frame });
        }
        Ok(Self {
            timestamps_us: frames.iter().map(|f| f.timestamp_us).collect(),
            wrist: frames.iter().map(|f| f.wrist_pose).collect(),
            fingertips: frames.iter().map(|f| f.fingertips()).collect(),
        })
    }

    /// Savitzky-Golay smoothing of wrist position, wrist orientation (as a
    /// rotation vector relative to the first frame) and fingertip positions.
    pub fn smoothed(&self, window: usize, polyorder: usize) -> Result<Self, HandPoseError> {
        if self.is_empty() {
            return Err(HandPoseError::EmptyTrajectory);
        }
        let filter = SavitzkyGolay::new(window, polyorder)?;
        let n = self.len();
        let reference = self.wrist[0].rotation;
        let channel = |f: &dyn Fn(usize) -> f64| -> Result<Vec<f64>, HandPoseError> {
            filter.apply(&(0..n).map(f).collect::<Vec<_>>())
        };
        let mut pos = Vec::new();
        let mut rot = Vec::new();
        for axis in 0..3 {
            pos.push(channel(&|i| self.wrist[i].translation.vector[axis])?);
            rot.push(channel(&|i| (reference.inverse() * self.wrist[i].rotation).scaled_axis()[axis])?);
        }
        let mut tips = Vec::new();
        for finger in 0..5 {
            let mut per_axis = Vec::new();
            for axis in 0..3 {
                per_axis.push(channel(&|i| self.fingertips[i][finger][axis])?);
            }
            tips.push(per_axis);
        }
        let wrist = (0..n)
            .map(|i| {
                let delta = UnitQuaternion::from_scaled_axis(Vec3::new(rot[0][i], rot[1][i], rot[2][i]));
                Isometry3::from_parts(
                    Translation3::new(pos[0][i], pos[1][i], pos[2][i]),
                    reference * delta,
                )
            })
            .collect();
        let fingertips = (0..n)
            .map(|i| std::array::from_fn(|f| Vec3::new(tips[f][0][i], tips[f][1][i], tips[f][2][i])))
            .collect();
        Ok(Self { timestamps_us: self.timestamps_us.clone(), wrist, fingertips })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose_at(wrist: Vec3) -> HandPoseFrame {
        let mut keypoints = [Vec3::zeros(); KEYPOINT_COUNT];
        for (i, kp) in keypoints.iter_mut().enumerate() {
            *kp = wrist + Vec3::new(0.01 * i as f64, 0.005 * i as f64, 0.0);
        }
        HandPoseFrame {
            timestamp_us: 0,
            keypoints,
            wrist_pose: Isometry3::new(wrist, Vec3::new(0.1, 0.2, 0.3)),
            confidence: 0.9,
            frame: FrameId::Camera,
        }
    }

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud { points: points.iter().map(|p| Vec3::from(*p)).collect(), frame: FrameId::Camera }
    }

    fn random_iso(rng: &mut ChaCha8Rng) -> Isometry3<f64> {
        Isometry3::new(
            Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
        )
    }

    #[test]
    fn identity_extrinsics_change_nothing() {
        let c = cloud(&[[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]]);
        let out = to_robot_frame(&c, &Extrinsics::identity()).unwrap();
        assert_eq!(out.points, c.points);
        assert_eq!(out.frame, FrameId::Robot);
    }

    #[test]
    fn translation_shifts_points() {
        let c = cloud(&[[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]]);
        let t = Vec3::new(0.5, -0.25, 1.0);
        let ext = Extrinsics { camera_to_robot: Isometry3::translation(t.x, t.y, t.z) };
        let out = to_robot_frame(&c, &ext).unwrap();
        for (a, b) in c.points.iter().zip(&out.points) {
            assert_eq!(*b, a + t);
        }
    }

    #[test]
    fn rigid_transform_preserves_distances_and_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let ext = Extrinsics { camera_to_robot: random_iso(&mut rng) };
            let pts: Vec<[f64; 3]> = (0..10)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..2.0)])
                .collect();
            let c = cloud(&pts);
            let r = to_robot_frame(&c, &ext).unwrap();
            for i in 0..10 {
                for j in 0..10 {
                    let before = (c.points[i] - c.points[j]).norm();
                    let after = (r.points[i] - r.points[j]).norm();
                    assert!((before - after).abs() < 1e-9);
                }
            }
            let back = to_camera_frame(&r, &ext).unwrap();
            for (a, b) in c.points.iter().zip(&back.points) {
                assert!((a - b).norm() < 1e-9);
            }
            let pose = pose_at(Vec3::new(0.1, -0.2, 0.6));
            let round = to_camera_frame(&to_robot_frame(&pose, &ext).unwrap(), &ext).unwrap();
            assert!((round.wrist_pose.translation.vector - pose.wrist_pose.translation.vector).norm() < 1e-9);
            assert!(round.wrist_pose.rotation.angle_to(&pose.wrist_pose.rotation) < 1e-9);
        }
    }

    #[test]
    fn robot_frame_input_is_rejected() {
        let c = PointCloud { points: vec![], frame: FrameId::Robot };
        assert!(matches!(
            to_robot_frame(&c, &Extrinsics::identity()),
            Err(HandPoseError::FrameMismatch { .. })
        ));
    }

    #[test]
    fn non_orthonormal_extrinsics_rejected() {
        let f = ExtrinsicsFile { rotation: [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] };
        assert!(matches!(Extrinsics::from_file(&f), Err(HandPoseError::NotOrthonormal(_))));
    }

    #[test]
    fn cloud_at_own_depth_leaves_pose_unchanged() {
        let pose = pose_at(Vec3::new(0.0, 0.0, 0.5));
        let c = cloud(&[[0.001, 0.0, 0.5], [0.0, 0.002, 0.5], [-0.001, 0.0, 0.5], [0.0, -0.001, 0.5], [0.0, 0.0, 0.5]]);
        let params = RefineParams { k: 5, ..Default::default() };
        assert_eq!(refine_wrist_depth(&pose, &c, &params).unwrap(), pose);
    }

    #[test]
    fn shift_to_median_depth() {
        let pose = pose_at(Vec3::new(0.0, 0.0, 0.5));
        let c = cloud(&[
            [0.001, 0.0, 0.60],
            [0.0, 0.001, 0.61],
            [-0.001, 0.0, 0.62],
            [0.0, -0.001, 0.63],
            [0.001, 0.001, 0.64],
            [0.3, 0.3, 0.10], // far away in the plane, not a neighbour
        ]);
        let params = RefineParams { k: 5, ..Default::default() };
        let out = refine_wrist_depth(&pose, &c, &params).unwrap();
        for (a, b) in pose.keypoints.iter().zip(&out.keypoints) {
            assert!((b.z - a.z - 0.12).abs() < 1e-12);
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
        }
        let t0 = pose.wrist_pose.translation.vector;
        let t1 = out.wrist_pose.translation.vector;
        assert!((t1.z - t0.z - 0.12).abs() < 1e-12);
        assert_eq!((t0.x, t0.y), (t1.x, t1.y));
        assert_eq!(out.wrist_pose.rotation, pose.wrist_pose.rotation);
    }

    #[test]
    fn outlier_does_not_move_median() {
        let pose = pose_at(Vec3::new(0.0, 0.0, 0.5));
        let c = cloud(&[[0.001, 0.0, 0.62], [0.0, 0.001, 0.62], [-0.001, 0.0, 5.0], [0.0, -0.001, 0.621], [0.0, 0.0, 0.619]]);
        let params = RefineParams { k: 5, ..Default::default() };
        let out = refine_wrist_depth(&pose, &c, &params).unwrap();
        assert!((out.keypoints[0].z - 0.62).abs() < 1e-12);
    }

    #[test]
    fn refinement_errors() {
        let pose = pose_at(Vec3::new(0.0, 0.0, 0.5));
        let params = RefineParams { k: 4, ..Default::default() };
        assert_eq!(refine_wrist_depth(&pose, &cloud(&[]), &params), Err(HandPoseError::EmptyCloud));
        let far = cloud(&[[0.2, 0.0, 0.5], [0.0, 0.2, 0.5], [0.01, 0.0, 0.5], [0.3, 0.3, 0.5]]);
        assert_eq!(
            refine_wrist_depth(&pose, &far, &params),
            Err(HandPoseError::DegenerateNeighborhood { within: 1, k: 4 })
        );
        let robot = PointCloud { points: vec![Vec3::zeros()], frame: FrameId::Robot };
        assert!(matches!(refine_wrist_depth(&pose, &robot, &params), Err(HandPoseError::FrameMismatch { .. })));
    }

    #[test]
    fn trajectory_smoothing_keeps_straight_lines() {
        let frames: Vec<HandPoseFrame> = (0..20)
            .map(|i| {
                let mut p = pose_at(Vec3::new(0.01 * i as f64, 0.3, 0.2));
                p.timestamp_us = i as u64 * 40_000;
                p.frame = FrameId::Robot;
                p.wrist_pose.rotation = UnitQuaternion::from_euler_angles(0.01 * i as f64, 0.0, 0.2);
                p
            })
            .collect();
        let traj = HandTrajectory::from_frames(&frames).unwrap();
        let smooth = traj.smoothed(9, 3).unwrap();
        assert_eq!(smooth.len(), 20);
        for i in 0..20 {
            assert!((smooth.wrist[i].translation.vector - traj.wrist[i].translation.vector).norm() < 1e-9);
            assert!(smooth.wrist[i].rotation.angle_to(&traj.wrist[i].rotation) < 1e-9);
            for f in 0..5 {
                assert!((smooth.fingertips[i][f] - traj.fingertips[i][f]).norm() < 1e-9);
            }
        }
    }
}
