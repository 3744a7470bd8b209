//! Kinematic tree of the arm-hand system, loaded from TOML.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{JointVector, RetargetError, Vec3, JOINT_COUNT};

const DEFAULT_CHAIN: &str = include_str!("../../configs/chain.toml");

/// End effectors every chain must define, in target order.
pub const EFFECTOR_NAMES: [&str; 6] = ["wrist", "thumb_tip", "index_tip", "middle_tip", "ring_tip", "pinky_tip"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub parent: String,
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub axis: [f64; 3],
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectorSpec {
    pub name: String,
    pub parent: String,
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub link: String,
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub rest: Vec<f64>,
    #[serde(rename = "joint")]
    pub joints: Vec<JointSpec>,
    #[serde(rename = "end_effector")]
    pub effectors: Vec<EffectorSpec>,
    #[serde(rename = "sphere", default)]
    pub spheres: Vec<SphereSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Index of the parent joint; `None` for the base.
    pub parent: Option<usize>,
    pub origin: Isometry3<f64>,
    pub axis: Vec3,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Effector {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Isometry3<f64>,
}

/// Where a collision sphere is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkRef {
    Joint(usize),
    Effector(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionSphere {
    pub link: String,
    pub attach: LinkRef,
    pub center: Vec3,
    pub radius: f64,
}

/// Frames produced by forward kinematics, all in the robot base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FkResult {
    pub joints: Vec<Isometry3<f64>>,
    /// In `EFFECTOR_NAMES` order.
    pub effectors: [Isometry3<f64>; 6],
}

impl FkResult {
    pub fn wrist(&self) -> &Isometry3<f64> {
        &self.effectors[0]
    }

    /// Thumb, index, middle, ring, pinky tip positions.
    pub fn fingertips(&self) -> [Vec3; 5] {
        std::array::from_fn(|i| self.effectors[i + 1].translation.vector)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub joints: Vec<Joint>,
    pub effectors: [Effector; 6],
    pub spheres: Vec<CollisionSphere>,
    pub rest: JointVector,
    /// `ancestors[j]` lists every joint whose motion moves joint frame `j`,
    /// including `j` itself.
    ancestors: Vec<Vec<usize>>,
}

pub(crate) fn origin_transform(xyz: [f64; 3], rpy: [f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(xyz[0], xyz[1], xyz[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

impl KinematicChain {
    pub fn default_chain() -> Self {
        Self::from_toml_str(DEFAULT_CHAIN).expect("embedded chain is valid")
    }

    pub fn from_toml_str(src: &str) -> Result<Self, RetargetError> {
        let file: ChainFile = toml::from_str(src).map_err(|e| RetargetError::Config(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self, RetargetError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| RetargetError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src).map_err(|e| match e {
            RetargetError::Config(m) => RetargetError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_file(file: &ChainFile) -> Result<Self, RetargetError> {
        let bad = |m: String| Err(RetargetError::Config(m));
        if file.joints.len() != JOINT_COUNT {
            return bad(format!("expected {JOINT_COUNT} joints, found {}", file.joints.len()));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut joints = Vec::with_capacity(JOINT_COUNT);
        for (i, spec) in file.joints.iter().enumerate() {
            let parent = if spec.parent == "base" {
                None
            } else {
                match index.get(spec.parent.as_str()) {
                    Some(&p) => Some(p),
                    None => return bad(format!("joint {} names unknown or later parent {}", spec.name, spec.parent)),
                }
            };
            let axis = Vec3::from(spec.axis);
            if !(axis.norm() > 1e-9) {
                return bad(format!("joint {} has a zero axis", spec.name));
            }
            let [lower, upper] = spec.limits;
            if !(lower < upper) {
                return bad(format!("joint {} limits must satisfy lower < upper", spec.name));
            }
            if index.insert(spec.name.as_str(), i).is_some() || spec.name == "base" {
                return bad(format!("duplicate joint name {}", spec.name));
            }
            joints.push(Joint {
                name: spec.name.clone(),
                parent,
                origin: origin_transform(spec.xyz, spec.rpy),
                axis: axis.normalize(),
                lower,
                upper,
            });
        }

        let mut effectors = Vec::with_capacity(EFFECTOR_NAMES.len());
        for name in EFFECTOR_NAMES {
            let Some(spec) = file.effectors.iter().find(|e| e.name == name) else {
                return bad(format!("missing end effector {name}"));
            };
            let parent = if spec.parent == "base" {
                None
            } else {
                match index.get(spec.parent.as_str()) {
                    Some(&p) => Some(p),
                    None => return bad(format!("end effector {name} names unknown parent {}", spec.parent)),
                }
            };
            effectors.push(Effector { name: name.to_string(), parent, offset: origin_transform(spec.xyz, spec.rpy) });
        }
        if file.effectors.len() != EFFECTOR_NAMES.len() {
            return bad(format!("expected exactly the end effectors {EFFECTOR_NAMES:?}"));
        }

        let mut spheres = Vec::with_capacity(file.spheres.len());
        for s in &file.spheres {
            let attach = if let Some(&j) = index.get(s.link.as_str()) {
                LinkRef::Joint(j)
            } else if let Some(e) = EFFECTOR_NAMES.iter().position(|n| *n == s.link) {
                LinkRef::Effector(e)
            } else {
                return bad(format!("collision sphere on unknown link {}", s.link));
            };
            if !(s.radius > 0.0) {
                return bad(format!("collision sphere on {} needs a positive radius", s.link));
            }
            spheres.push(CollisionSphere { link: s.link.clone(), attach, center: Vec3::from(s.center), radius: s.radius });
        }

        if file.rest.len() != JOINT_COUNT {
            return bad(format!("rest pose needs {JOINT_COUNT} values, found {}", file.rest.len()));
        }
        let rest = JointVector::from_column_slice(&file.rest);

        let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(JOINT_COUNT);
        for (j, joint) in joints.iter().enumerate() {
            let mut a = joint.parent.map(|p| ancestors[p].clone()).unwrap_or_default();
            a.push(j);
            ancestors.push(a);
        }

        let chain = Self {
            joints,
            effectors: effectors.try_into().expect("six effectors"),
            spheres,
            rest,
            ancestors,
        };
        if let Err(e) = chain.check_limits(&chain.rest) {
            return bad(format!("rest pose: {e}"));
        }
        Ok(chain)
    }

    pub fn lower_limits(&self) -> JointVector {
        JointVector::from_fn(|i, _| self.joints[i].lower)
    }

    pub fn upper_limits(&self) -> JointVector {
        JointVector::from_fn(|i, _| self.joints[i].upper)
    }

    pub fn clamp(&self, q: &JointVector) -> JointVector {
        JointVector::from_fn(|i, _| q[i].clamp(self.joints[i].lower, self.joints[i].upper))
    }

    pub fn check_limits(&self, q: &JointVector) -> Result<(), RetargetError> {
        for (i, j) in self.joints.iter().enumerate() {
            if !(q[i] >= j.lower && q[i] <= j.upper) {
                return Err(RetargetError::LimitViolation { joint: j.name.clone(), value: q[i], lower: j.lower, upper: j.upper });
            }
        }
        Ok(())
    }

    /// Forward kinematics; rejects configurations outside the joint limits.
    pub fn forward_kinematics(&self, q: &JointVector) -> Result<FkResult, RetargetError> {
        self.check_limits(q)?;
        Ok(self.fk_unchecked(q))
    }

    pub fn fk_unchecked(&self, q: &JointVector) -> FkResult {
        let mut frames: Vec<Isometry3<f64>> = Vec::with_capacity(self.joints.len());
        for (i, j) in self.joints.iter().enumerate() {
            let parent = j.parent.map(|p| frames[p]).unwrap_or_else(Isometry3::identity);
            let spin = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(j.axis), q[i]);
            frames.push(parent * j.origin * spin);
        }
        let effectors = std::array::from_fn(|e| {
            let eff = &self.effectors[e];
            eff.parent.map(|p| frames[p]).unwrap_or_else(Isometry3::identity) * eff.offset
        });
        FkResult { joints: frames, effectors }
    }

    /// Joints whose motion moves end effector `e`.
    pub fn effector_ancestors(&self, e: usize) -> &[usize] {
        match self.effectors[e].parent {
            Some(p) => &self.ancestors[p],
            None => &[],
        }
    }

    /// World-frame center of every collision sphere for a solved FK.
    pub fn sphere_centers(&self, fk: &FkResult) -> Vec<Vec3> {
        self.spheres
            .iter()
            .map(|s| {
                let frame = match s.attach {
                    LinkRef::Joint(j) => &fk.joints[j],
                    LinkRef::Effector(e) => &fk.effectors[e],
                };
                frame.transform_point(&s.center.into()).coords
            })
            .collect()
    }

    /// World-frame joint axes and origins, used for Jacobians.
    pub fn joint_axes(&self, fk: &FkResult) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        self.joints
            .iter()
            .zip(&fk.joints)
            .map(|(j, frame)| (frame.rotation * j.axis, frame.translation.vector))
            .collect()
    }
}
