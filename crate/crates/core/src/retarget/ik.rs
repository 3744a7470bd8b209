//! Damped-least-squares inverse kinematics over the wrist pose and the five
//! fingertip positions.

use nalgebra::{DMatrix, DVector, Isometry3};
use serde::{Deserialize, Serialize};

use super::chain::{FkResult, KinematicChain};
use super::{JointVector, RetargetError, Vec3, JOINT_COUNT};

/// Rows of the stacked task error: wrist position, wrist orientation, then
/// the five fingertip positions.
pub const TASK_DIM: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkParams {
    pub damping: f64,
    pub step_scale: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IkParams {
    fn default() -> Self {
        Self { damping: 1e-2, step_scale: 1.0, tolerance: 1e-4, max_iterations: 200 }
    }
}

/// Non-negative weight per target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkWeights {
    pub wrist_position: f64,
    pub wrist_orientation: f64,
    /// Thumb, index, middle, ring, pinky.
    pub fingertips: [f64; 5],
}

impl Default for IkWeights {
    fn default() -> Self {
        Self { wrist_position: 1.0, wrist_orientation: 1.0, fingertips: [1.0; 5] }
    }
}

impl IkWeights {
    pub fn wrist_only() -> Self {
        Self { wrist_position: 1.0, wrist_orientation: 1.0, fingertips: [0.0; 5] }
    }

    fn validate(&self) -> Result<(), RetargetError> {
        let all = [self.wrist_position, self.wrist_orientation].into_iter().chain(self.fingertips);
        for w in all {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(RetargetError::Config(format!("IK weight {w} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Per-row weights of the stacked task error.
    pub fn rows(&self) -> [f64; TASK_DIM] {
        let mut w = [0.0; TASK_DIM];
        w[..3].fill(self.wrist_position);
        w[3..6].fill(self.wrist_orientation);
        for (f, &wf) in self.fingertips.iter().enumerate() {
            w[6 + 3 * f..9 + 3 * f].fill(wf);
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkTargets {
    pub wrist: Isometry3<f64>,
    /// Thumb, index, middle, ring, pinky.
    pub fingertips: [Vec3; 5],
}

impl IkTargets {
    pub fn from_fk(fk: &FkResult) -> Self {
        Self { wrist: *fk.wrist(), fingertips: fk.fingertips() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: JointVector,
    /// Weighted norm of the stacked task error at `q`, mixing meters and
    /// radians.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Stacked task error `target - current`. Orientation error is the rotation
/// vector of `R_target * R_current^T`.
pub fn task_error(targets: &IkTargets, fk: &FkResult) -> DVector<f64> {
    let mut e = DVector::zeros(TASK_DIM);
    let wrist = fk.wrist();
    e.fixed_rows_mut::<3>(0)
        .copy_from(&(targets.wrist.translation.vector - wrist.translation.vector));
    e.fixed_rows_mut::<3>(3)
        .copy_from(&(targets.wrist.rotation * wrist.rotation.inverse()).scaled_axis());
    for (f, tip) in fk.fingertips().iter().enumerate() {
        e.fixed_rows_mut::<3>(6 + 3 * f).copy_from(&(targets.fingertips[f] - tip));
    }
    e
}

/// Geometric Jacobian of the stacked task with respect to the joints.
pub fn jacobian(chain: &KinematicChain, fk: &FkResult) -> DMatrix<f64> {
    let axes = chain.joint_axes(fk);
    let mut jac = DMatrix::zeros(TASK_DIM, JOINT_COUNT);
    let wrist_p = fk.wrist().translation.vector;
    for &j in chain.effector_ancestors(0) {
        let (a, o) = axes[j];
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&a.cross(&(wrist_p - o)));
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&a);
    }
    for (f, tip) in fk.fingertips().iter().enumerate() {
        for &j in chain.effector_ancestors(f + 1) {
            let (a, o) = axes[j];
            jac.fixed_view_mut::<3, 1>(6 + 3 * f, j).copy_from(&a.cross(&(tip - o)));
        }
    }
    jac
}

pub fn weighted_norm(e: &DVector<f64>, rows: &[f64; TASK_DIM]) -> f64 {
    e.iter().zip(rows).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}

/// One damped-least-squares step: solves `(J^T W J + λ² I) dq = J^T W e`.
pub fn dls_step(jac: &DMatrix<f64>, e: &DVector<f64>, rows: &[f64], damping: f64) -> DVector<f64> {
    let n = jac.ncols();
    let w = DVector::from_column_slice(rows);
    let jw = DMatrix::from_fn(jac.ncols(), jac.nrows(), |c, r| jac[(r, c)] * w[r]);
    let mut lhs = &jw * jac;
    for i in 0..n {
        lhs[(i, i)] += damping * damping;
    }
    let rhs = &jw * e;
    match lhs.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => lhs.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n)),
    }
}

/// DLS step that drops joints sitting at a limit and pushed further out, so
/// the remaining joints are not solved for motion the clamp would undo.
fn limited_step(
    chain: &KinematicChain,
    q: &JointVector,
    jac: &DMatrix<f64>,
    e: &DVector<f64>,
    rows: &[f64],
    damping: f64,
) -> DVector<f64> {
    let mut jac = jac.clone();
    let mut frozen = [false; JOINT_COUNT];
    loop {
        let dq = dls_step(&jac, e, rows, damping);
        let mut changed = false;
        for (i, joint) in chain.joints.iter().enumerate() {
            let outward = (q[i] <= joint.lower && dq[i] < 0.0) || (q[i] >= joint.upper && dq[i] > 0.0);
            if outward && !frozen[i] {
                frozen[i] = true;
                jac.column_mut(i).fill(0.0);
                changed = true;
            }
        }
        if !changed {
            return dq.map_with_location(|i, _, v| if frozen[i] { 0.0 } else { v });
        }
    }
}

/// Iterates DLS steps from `q_init`, clamping to the joint limits after each
/// step. A step that would raise the residual is rejected and the damping
/// raised tenfold; accepted steps relax it back toward `params.damping`. The
/// residual therefore never increases across iterations.
pub fn solve_ik(
    chain: &KinematicChain,
    targets: &IkTargets,
    q_init: &JointVector,
    weights: &IkWeights,
    params: &IkParams,
) -> Result<IkSolution, RetargetError> {
    weights.validate()?;
    if !(params.damping > 0.0) || !(params.step_scale > 0.0) || !(params.tolerance > 0.0) {
        return Err(RetargetError::Config("IK damping, step scale and tolerance must be positive".into()));
    }
    let rows = weights.rows();
    let mut q = chain.clamp(q_init);
    let mut fk = chain.fk_unchecked(&q);
    let mut e = task_error(targets, &fk);
    let mut residual = weighted_norm(&e, &rows);
    let mut damping = params.damping;
    let mut iterations = 0;
    while residual >= params.tolerance && iterations < params.max_iterations {
        iterations += 1;
        let dq = limited_step(chain, &q, &jacobian(chain, &fk), &e, &rows, damping);
        let q_next = chain.clamp(&(q + JointVector::from_column_slice(dq.as_slice()) * params.step_scale));
        let fk_next = chain.fk_unchecked(&q_next);
        let e_next = task_error(targets, &fk_next);
        let r_next = weighted_norm(&e_next, &rows);
        if r_next < residual {
            (q, fk, e, residual) = (q_next, fk_next, e_next, r_next);
            damping = (damping * 0.1).max(params.damping);
        } else {
            damping *= 10.0;
            if damping > 1e6 {
                break;
            }
        }
    }
    Ok(IkSolution { q, residual, iterations, converged: residual < params.tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_q(chain: &KinematicChain, rng: &mut impl Rng) -> JointVector {
        JointVector::from_fn(|i, _| {
            let j = &chain.joints[i];
            rng.random_range(j.lower..=j.upper)
        })
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let chain = KinematicChain::default_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = chain.clamp(&(chain.rest + JointVector::from_fn(|_, _| rng.random_range(-0.05..0.05))));
        let fk = chain.fk_unchecked(&q);
        let jac = jacobian(&chain, &fk);
        let targets = IkTargets::from_fk(&fk);
        let h = 1e-6;
        for j in 0..JOINT_COUNT {
            let mut qp = q;
            qp[j] += h;
            let mut qm = q;
            qm[j] -= h;
            // task_error is target - current, so the derivative flips sign.
            let de = (task_error(&targets, &chain.fk_unchecked(&qm)) - task_error(&targets, &chain.fk_unchecked(&qp))) / (2.0 * h);
            for r in 0..TASK_DIM {
                assert!((de[r] - jac[(r, j)]).abs() < 1e-6, "row {r} joint {j}: {} vs {}", de[r], jac[(r, j)]);
            }
        }
    }

    #[test]
    fn target_at_start_returns_immediately() {
        let chain = KinematicChain::default_chain();
        let fk = chain.fk_unchecked(&chain.rest);
        let sol = solve_ik(&chain, &IkTargets::from_fk(&fk), &chain.rest, &IkWeights::default(), &IkParams::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.converged);
        assert_eq!(sol.q, chain.rest);
    }

    #[test]
    fn nearby_targets_converge() {
        let chain = KinematicChain::default_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q_star = random_q(&chain, &mut rng);
            let targets = IkTargets::from_fk(&chain.fk_unchecked(&q_star));
            let q0 = chain.clamp(&(q_star + JointVector::from_fn(|_, _| rng.random_range(-0.3..0.3))));
            let sol = solve_ik(&chain, &targets, &q0, &IkWeights::default(), &IkParams::default()).unwrap();
            assert!(sol.converged, "residual {}", sol.residual);
        }
    }

    #[test]
    fn unreachable_wrist_target_stretches_toward_it() {
        let chain = KinematicChain::default_chain();
        let shoulder = Vec3::new(0.0, 0.0, 0.333);
        let distance = 1.2;
        let wrist = Isometry3::translation(0.0, 0.0, 0.333 + distance);
        let fk = chain.fk_unchecked(&chain.rest);
        let targets = IkTargets { wrist, fingertips: fk.fingertips() };
        let weights = IkWeights { wrist_position: 1.0, wrist_orientation: 0.0, fingertips: [0.0; 5] };
        let params = IkParams { max_iterations: 2000, ..IkParams::default() };
        let sol = solve_ik(&chain, &targets, &chain.rest, &weights, &params).unwrap();
        assert!(!sol.converged);
        let reach = (chain.fk_unchecked(&sol.q).wrist().translation.vector - shoulder).norm();
        assert_relative_eq!(sol.residual, distance - 0.895, epsilon = 1e-3);
        assert_relative_eq!(reach, 0.895, epsilon = 1e-3);
    }

    #[test]
    fn limits_hold_for_every_solution() {
        let chain = KinematicChain::default_chain();
        let targets = IkTargets { wrist: Isometry3::translation(2.0, 2.0, -1.0), fingertips: [Vec3::new(-3.0, 0.0, 0.0); 5] };
        let sol = solve_ik(&chain, &targets, &chain.rest, &IkWeights::default(), &IkParams::default()).unwrap();
        chain.check_limits(&sol.q).unwrap();
    }

    #[test]
    fn invalid_weights_rejected() {
        let chain = KinematicChain::default_chain();
        let fk = chain.fk_unchecked(&chain.rest);
        let w = IkWeights { wrist_position: -1.0, ..IkWeights::default() };
        assert!(solve_ik(&chain, &IkTargets::from_fk(&fk), &chain.rest, &w, &IkParams::default()).is_err());
    }
}
