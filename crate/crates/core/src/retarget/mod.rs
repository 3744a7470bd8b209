//! Mapping of human hand trajectories onto the arm-hand joint space:
//! kinematic chain, damped-least-squares IK and a per-step safety filter.

mod chain;
mod ik;
mod safety;

pub use chain::{
    ChainFile, CollisionSphere, Effector, EffectorSpec, FkResult, Joint, JointSpec, KinematicChain, LinkRef,
    SphereSpec, EFFECTOR_NAMES,
};
pub use ik::{dls_step, jacobian, solve_ik, task_error, weighted_norm, IkParams, IkSolution, IkTargets, IkWeights, TASK_DIM};
pub use safety::{find_collision, safety_filter, BoxBody, Environment, FilterOutcome, Plane, SafetyConfig, Verdict};

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handpose::HandTrajectory;

pub type Vec3 = Vector3<f64>;

/// Seven arm joints, then index, middle, ring, pinky, thumb rotator and
/// thumb flexor.
pub const JOINT_COUNT: usize = 13;
pub type JointVector = SVector<f64, JOINT_COUNT>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetargetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("joint {joint} = {value} outside [{lower}, {upper}]")]
    LimitViolation { joint: String, value: f64, lower: f64, upper: f64 },
    #[error("time step {0} s must be positive")]
    BadTimestep(f64),
    #[error("hand trajectory is empty")]
    EmptyTrajectory,
    #[error("timestamps must increase (frame {0})")]
    NonMonotonic(usize),
    #[error("first frame unreachable: IK residual {residual:.4} exceeds {tolerance:.4}")]
    Initialization { residual: f64, tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetargetConfig {
    pub ik: IkParams,
    pub weights: IkWeights,
    /// Largest acceptable IK residual on the first frame.
    pub init_tolerance: f64,
    /// Iteration budget for the first frame, which starts from the rest pose
    /// rather than a warm start.
    pub init_max_iterations: usize,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self { ik: IkParams::default(), weights: IkWeights::default(), init_tolerance: 0.02, init_max_iterations: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetOutput {
    /// One command per input frame.
    pub joints: Vec<JointVector>,
    pub residuals: Vec<f64>,
    /// Frames whose IK candidate was rejected and replaced by the previous
    /// command.
    pub skipped: Vec<(usize, Verdict)>,
}

impl RetargetOutput {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

fn targets_at(traj: &HandTrajectory, i: usize) -> IkTargets {
    IkTargets { wrist: traj.wrist[i], fingertips: traj.fingertips[i] }
}

/// Solves IK frame by frame, warm-starting from the previous command and
/// passing every candidate through the safety filter. The first frame starts
/// from `q_start` (the chain's rest pose when `None`).
pub fn retarget_trajectory(
    traj: &HandTrajectory,
    chain: &KinematicChain,
    env: &Environment,
    safety: &SafetyConfig,
    cfg: &RetargetConfig,
    q_start: Option<&JointVector>,
) -> Result<RetargetOutput, RetargetError> {
    if traj.is_empty() {
        return Err(RetargetError::EmptyTrajectory);
    }
    if let Some(i) = traj.timestamps_us.windows(2).position(|w| w[1] <= w[0]) {
        return Err(RetargetError::NonMonotonic(i + 1));
    }
    let start = q_start.copied().unwrap_or(chain.rest);
    let init_params = IkParams { max_iterations: cfg.init_max_iterations, ..cfg.ik };
    let first = solve_ik(chain, &targets_at(traj, 0), &start, &cfg.weights, &init_params)?;
    if !(first.residual <= cfg.init_tolerance) {
        return Err(RetargetError::Initialization { residual: first.residual, tolerance: cfg.init_tolerance });
    }
    if let Some(v) = find_collision(chain, env, safety, &first.q) {
        log::warn!("first retargeted frame is in contact: {v:?}");
    }

    let mut joints = Vec::with_capacity(traj.len());
    let mut residuals = Vec::with_capacity(traj.len());
    let mut skipped = Vec::new();
    joints.push(first.q);
    residuals.push(first.residual);
    for i in 1..traj.len() {
        let prev = joints[i - 1];
        let sol = solve_ik(chain, &targets_at(traj, i), &prev, &cfg.weights, &cfg.ik)?;
        let dt = (traj.timestamps_us[i] - traj.timestamps_us[i - 1]) as f64 * 1e-6;
        let out = safety_filter(chain, env, safety, &prev, &sol.q, dt)?;
        if !out.verdict.is_accepted() {
            log::debug!("frame {i} rejected: {:?}", out.verdict);
            skipped.push((i, out.verdict));
        }
        joints.push(out.q);
        residuals.push(sol.residual);
    }
    Ok(RetargetOutput { joints, residuals, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Isometry3;

    fn trajectory_from(chain: &KinematicChain, qs: &[JointVector]) -> HandTrajectory {
        let fks: Vec<_> = qs.iter().map(|q| chain.fk_unchecked(q)).collect();
        HandTrajectory {
            timestamps_us: (0..qs.len() as u64).map(|k| k * 40_000).collect(),
            wrist: fks.iter().map(|f| *f.wrist()).collect(),
            fingertips: fks.iter().map(|f| f.fingertips()).collect(),
        }
    }

    #[test]
    fn reachable_smooth_trajectory_tracks() {
        let chain = KinematicChain::default_chain();
        let qs: Vec<JointVector> = (0..50)
            .map(|k| {
                let mut q = chain.rest;
                q[0] += 0.2 * (k as f64 * 0.05).sin();
                q[7] += 0.3 * (k as f64 * 0.1).sin().abs();
                q
            })
            .collect();
        let traj = trajectory_from(&chain, &qs);
        let out = retarget_trajectory(&traj, &chain, &Environment::default_environment(), &SafetyConfig::default(), &RetargetConfig::default(), None).unwrap();
        assert_eq!(out.len(), 50);
        assert!(out.skipped.is_empty());
        assert!(out.residuals.iter().all(|r| *r < 1e-3), "{:?}", out.residuals);
    }

    #[test]
    fn teleport_frame_is_repeated() {
        let chain = KinematicChain::default_chain();
        let qs = vec![chain.rest; 20];
        let mut traj = trajectory_from(&chain, &qs);
        traj.wrist[10] = Isometry3::from_parts((traj.wrist[10].translation.vector + Vec3::new(0.0, 0.5, 0.0)).into(), traj.wrist[10].rotation);
        for tip in traj.fingertips[10].iter_mut() {
            *tip += Vec3::new(0.0, 0.5, 0.0);
        }
        let out = retarget_trajectory(&traj, &chain, &Environment::default_environment(), &SafetyConfig::default(), &RetargetConfig::default(), None).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].0, 10);
        assert_eq!(out.joints[10], out.joints[9]);
    }

    #[test]
    fn unreachable_first_frame_fails() {
        let chain = KinematicChain::default_chain();
        let mut traj = trajectory_from(&chain, &[chain.rest; 3]);
        traj.wrist[0] = Isometry3::translation(3.0, 0.0, 0.5);
        let r = retarget_trajectory(&traj, &chain, &Environment::default(), &SafetyConfig::default(), &RetargetConfig::default(), None);
        assert!(matches!(r, Err(RetargetError::Initialization { .. })));
    }

    #[test]
    fn trajectory_errors() {
        let chain = KinematicChain::default_chain();
        let empty = HandTrajectory { timestamps_us: vec![], wrist: vec![], fingertips: vec![] };
        let env = Environment::default();
        let s = SafetyConfig::default();
        let c = RetargetConfig::default();
        assert_eq!(retarget_trajectory(&empty, &chain, &env, &s, &c, None), Err(RetargetError::EmptyTrajectory));
        let mut traj = trajectory_from(&chain, &[chain.rest; 3]);
        traj.timestamps_us[2] = traj.timestamps_us[1];
        assert_eq!(retarget_trajectory(&traj, &chain, &env, &s, &c, None), Err(RetargetError::NonMonotonic(2)));
    }
}
