//! Synthetic demonstration bundles: wiping motions generated from the robot
//! chain, observed by a noisy camera-frame hand estimator with a depth bias,
//! and a glove stream with fingertip contact forces.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{Isometry3, UnitQuaternion};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PipelineError, DEMOS_DIR, EXTRINSICS_FILE, GLOVE_FILE, KEYPOINTS_FILE};
use crate::handpose::{
    to_camera_frame, write_keypoint_file, Extrinsics, FrameId, HandPoseFrame, HandPoseRecord, PointCloud, Vec3,
    FINGERTIP_KEYPOINTS, KEYPOINT_COUNT, WRIST_KEYPOINT,
};
use crate::retarget::{JointVector, KinematicChain};
use crate::sensor_sim::{
    apply_force, read_glove_with, GloveFrame, GloveGeometry, TaxelState, FINGERTIP_TAXELS, GRAVITY, SAMPLE_PERIOD_US,
    SAMPLE_RATE_HZ, TAXEL_COUNT,
};
use crate::wire::write_stream_file;

const DEFAULT_EXTRINSICS: &str = include_str!("../../configs/extrinsics.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub demos: usize,
    pub seconds: f64,
    pub seed: u64,
    /// Per-keypoint Gaussian noise, meters.
    pub keypoint_noise: f64,
    /// Constant error added to the estimated camera depth, meters.
    pub depth_bias: f64,
    pub cloud_points: usize,
    pub cloud_noise: f64,
    /// Glove clock offset relative to the camera, microseconds.
    pub glove_offset_us: u64,
    pub image_bytes: usize,
    /// Shift one frame of one demo by 0.5 m: `[demo, frame]`.
    pub teleport: Option<[usize; 2]>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            demos: 10,
            seconds: 8.0,
            seed: 7,
            keypoint_noise: 0.002,
            depth_bias: 0.02,
            cloud_points: 80,
            cloud_noise: 0.002,
            glove_offset_us: 3_000,
            image_bytes: 256,
            teleport: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub demos: Vec<String>,
    pub frames_per_demo: usize,
    /// Ground-truth joint trajectories, one per demo.
    #[serde(skip)]
    pub ground_truth: Vec<Vec<JointVector>>,
}

fn demo_rng(seed: u64, demo: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(demo as u64 + 1);
    rng
}

/// Elliptical wiping sweep around the rest pose, with finger flexion and
/// thumb motion.
pub fn wipe_joint_trajectory(chain: &KinematicChain, frames: usize, rng: &mut impl Rng) -> Vec<JointVector> {
    let sweep = rng.random_range(0.15..0.3);
    let reach = rng.random_range(0.05..0.12);
    let freq = rng.random_range(0.25..0.4);
    let phase = rng.random_range(0.0..TAU);
    let flex = rng.random_range(0.1..0.25);
    (0..frames)
        .map(|k| {
            let t = k as f64 / SAMPLE_RATE_HZ;
            let w = TAU * freq * t + phase;
            let mut q = chain.rest;
            q[0] += sweep * w.sin();
            q[1] += reach * w.cos();
            q[3] -= 0.5 * reach * w.cos();
            q[6] += 0.1 * w.sin();
            for f in 7..11 {
                q[f] += flex * (0.5 + 0.5 * (w + f as f64).sin());
            }
            q[11] += 0.1 * (0.5 * w).sin();
            q[12] += 0.1 * (0.5 * w).cos();
            chain.clamp(&q)
        })
        .collect()
}

/// 21 keypoints from the wrist and fingertip positions: each finger's three
/// intermediate joints lie on the wrist-to-tip segment.
fn keypoints_from(wrist: &Vec3, tips: &[Vec3; 5]) -> [Vec3; KEYPOINT_COUNT] {
    let mut kp = [*wrist; KEYPOINT_COUNT];
    for (f, tip) in tips.iter().enumerate() {
        let t = FINGERTIP_KEYPOINTS[f];
        for (j, frac) in [0.35, 0.6, 0.8].iter().enumerate() {
            kp[t - 3 + j] = wrist + (tip - wrist) * *frac;
        }
        kp[t] = *tip;
    }
    kp
}

fn glove_stream(
    geometry: &GloveGeometry,
    frames: usize,
    offset_us: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GloveFrame>, PipelineError> {
    let ambient = Vec3::new(40.0, 0.0, -40.0);
    let rate: f64 = rng.random_range(0.3..0.6);
    let phases: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let t = k as f64 / SAMPLE_RATE_HZ;
        let mut taxels: [TaxelState; TAXEL_COUNT] = geometry.taxels;
        for (f, &id) in FINGERTIP_TAXELS.iter().enumerate() {
            let force = (1.5 + 1.2 * (TAU * rate * t + phases[f]).sin()).max(0.0);
            let normal = taxels[id].normal();
            taxels[id] = apply_force(&taxels[id], &(-normal * force))?;
        }
        let mut frame = read_glove_with(&taxels, &ambient, offset_us + k as u64 * SAMPLE_PERIOD_US, rng)?;
        for (i, taxel) in taxels.iter().enumerate() {
            let g = taxel.magnetometers[0].rotation.transpose() * (-GRAVITY);
            frame.imu[i] = [g.x, g.y, g.z, 0.0, 0.0, 0.0];
        }
        out.push(frame);
    }
    Ok(out)
}

fn write_image(dir: &Path, name: &str, len: usize, rng: &mut ChaCha8Rng) -> Result<String, PipelineError> {
    let mut bytes = vec![0u8; len.max(16)];
    rng.fill_bytes(&mut bytes);
    let rel = format!("images/{name}.bin");
    std::fs::write(dir.join(&rel), &bytes).map_err(|e| PipelineError::Data(e.to_string()))?;
    Ok(rel)
}

/// Writes a bundle of `cfg.demos` demonstrations under `out`.
pub fn synthesize_bundle(
    out: &Path,
    cfg: &SynthConfig,
    chain: &KinematicChain,
    geometry: &GloveGeometry,
) -> Result<SynthSummary, PipelineError> {
    let io = |e: std::io::Error| PipelineError::Data(format!("{}: {e}", out.display()));
    if !(cfg.seconds > 0.0) || cfg.demos == 0 {
        return Err(PipelineError::Config("synthetic bundle needs at least one demo and a positive duration".into()));
    }
    std::fs::create_dir_all(out.join(DEMOS_DIR)).map_err(io)?;
    std::fs::write(out.join(EXTRINSICS_FILE), DEFAULT_EXTRINSICS).map_err(io)?;
    let extrinsics = Extrinsics::load(&out.join(EXTRINSICS_FILE))?;
    let shielded = geometry.with_shield_enabled(true);
    let frames = (cfg.seconds * SAMPLE_RATE_HZ).round() as usize;
    let kp_noise = Normal::new(0.0, cfg.keypoint_noise.max(0.0)).map_err(|e| PipelineError::Config(e.to_string()))?;
    let cloud_noise = Normal::new(0.0, cfg.cloud_noise.max(0.0)).map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut names = Vec::with_capacity(cfg.demos);
    let mut truth = Vec::with_capacity(cfg.demos);
    for d in 0..cfg.demos {
        let name = format!("demo_{d:03}");
        let dir = out.join(DEMOS_DIR).join(&name);
        std::fs::create_dir_all(dir.join("images")).map_err(io)?;
        let mut rng = demo_rng(cfg.seed, d);
        let qs = wipe_joint_trajectory(chain, frames, &mut rng);

        let mut records = Vec::with_capacity(frames);
        for (k, q) in qs.iter().enumerate() {
            let fk = chain.fk_unchecked(q);
            let mut wrist = *fk.wrist();
            let mut tips = fk.fingertips();
            if cfg.teleport == Some([d, k]) {
                let jump = Vec3::new(0.0, 0.5, 0.0);
                wrist.translation.vector += jump;
                tips.iter_mut().for_each(|t| *t += jump);
            }
            let robot = HandPoseFrame {
                timestamp_us: k as u64 * SAMPLE_PERIOD_US,
                keypoints: keypoints_from(&wrist.translation.vector, &tips),
                wrist_pose: wrist,
                confidence: 0.9,
                frame: FrameId::Robot,
            };
            let truth_cam = to_camera_frame(&robot, &extrinsics)?;
            let true_wrist = truth_cam.keypoints[WRIST_KEYPOINT];

            let mut est = truth_cam.clone();
            for p in est.keypoints.iter_mut() {
                *p += Vec3::new(kp_noise.sample(&mut rng), kp_noise.sample(&mut rng), kp_noise.sample(&mut rng));
                p.z += cfg.depth_bias;
            }
            let tilt = Vec3::new(kp_noise.sample(&mut rng), kp_noise.sample(&mut rng), kp_noise.sample(&mut rng)) * 5.0;
            est.wrist_pose = Isometry3::from_parts(
                est.keypoints[WRIST_KEYPOINT].into(),
                UnitQuaternion::from_scaled_axis(tilt) * truth_cam.wrist_pose.rotation,
            );

            let cloud = PointCloud {
                points: (0..cfg.cloud_points)
                    .map(|_| {
                        let r = 0.03 * rng.random::<f64>().sqrt();
                        let a = rng.random_range(0.0..TAU);
                        Vec3::new(
                            true_wrist.x + r * a.cos(),
                            true_wrist.y + r * a.sin(),
                            true_wrist.z + cloud_noise.sample(&mut rng),
                        )
                    })
                    .collect(),
                frame: FrameId::Camera,
            };
            let mut rec = HandPoseRecord::from_pose(&est, Some(&cloud));
            rec.rgb = Some(write_image(&dir, &format!("rgb_{k:06}"), cfg.image_bytes, &mut rng)?);
            rec.ir_left = Some(write_image(&dir, &format!("ir_left_{k:06}"), cfg.image_bytes, &mut rng)?);
            rec.ir_right = Some(write_image(&dir, &format!("ir_right_{k:06}"), cfg.image_bytes, &mut rng)?);
            records.push(rec);
        }
        write_keypoint_file(&dir.join(KEYPOINTS_FILE), &records)?;

        let glove = glove_stream(&shielded, frames, cfg.glove_offset_us, &mut rng)?;
        write_stream_file(&dir.join(GLOVE_FILE), &glove).map_err(io)?;
        names.push(name);
        truth.push(qs);
    }
    Ok(SynthSummary { demos: names, frames_per_demo: frames, ground_truth: truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wipe_stays_within_limits_and_speed() {
        let chain = KinematicChain::default_chain();
        let mut rng = demo_rng(7, 0);
        let qs = wipe_joint_trajectory(&chain, 250, &mut rng);
        let mut prev = chain.fk_unchecked(&qs[0]).wrist().translation.vector;
        for q in &qs {
            chain.check_limits(q).unwrap();
            let w = chain.fk_unchecked(q).wrist().translation.vector;
            assert!((w - prev).norm() * SAMPLE_RATE_HZ < 1.0);
            prev = w;
        }
    }

    #[test]
    fn keypoint_layout() {
        let tips: [Vec3; 5] = std::array::from_fn(|i| Vec3::new(i as f64, 1.0, 0.0));
        let kp = keypoints_from(&Vec3::zeros(), &tips);
        assert_eq!(kp[0], Vec3::zeros());
        assert_eq!(kp[8], tips[1]);
        assert!((kp[5] - tips[1] * 0.35).norm() < 1e-15);
    }
}
