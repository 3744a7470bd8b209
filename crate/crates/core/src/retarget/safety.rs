//! Per-step safety check: wrist speed limit and sphere-versus-environment
//! collisions. Rejected candidates are replaced by the previous command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chain::KinematicChain;
use super::{JointVector, RetargetError, Vec3};

const DEFAULT_ENVIRONMENT: &str = include_str!("../../configs/environment.toml");
const DEFAULT_SAFETY: &str = include_str!("../../configs/safety.toml");

/// Half-space bounded by a plane; the solid side is opposite `normal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plane {
    pub name: String,
    pub point: [f64; 3],
    pub normal: [f64; 3],
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBody {
    pub name: String,
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    #[serde(rename = "plane", default)]
    pub planes: Vec<Plane>,
    #[serde(rename = "box", default)]
    pub boxes: Vec<BoxBody>,
}

impl Environment {
    pub fn default_environment() -> Self {
        Self::from_toml_str(DEFAULT_ENVIRONMENT).expect("embedded environment is valid")
    }

    pub fn from_toml_str(src: &str) -> Result<Self, RetargetError> {
        let env: Self = toml::from_str(src).map_err(|e| RetargetError::Config(e.to_string()))?;
        for p in &env.planes {
            if !(Vec3::from(p.normal).norm() > 1e-9) {
                return Err(RetargetError::Config(format!("plane {} has a zero normal", p.name)));
            }
        }
        for b in &env.boxes {
            if b.half_extents.iter().any(|h| !(*h > 0.0)) {
                return Err(RetargetError::Config(format!("box {} needs positive half extents", b.name)));
            }
        }
        Ok(env)
    }

    pub fn load(path: &Path) -> Result<Self, RetargetError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| RetargetError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    /// Signed clearance from `point` to each body (negative inside).
    pub fn clearances(&self, point: &Vec3) -> Vec<(&str, f64)> {
        let planes = self.planes.iter().map(|p| {
            let n = Vec3::from(p.normal).normalize();
            (p.name.as_str(), (point - Vec3::from(p.point)).dot(&n))
        });
        let boxes = self.boxes.iter().map(|b| (b.name.as_str(), box_distance(b, point)));
        planes.chain(boxes).collect()
    }
}

fn box_distance(b: &BoxBody, p: &Vec3) -> f64 {
    let d = (p - Vec3::from(b.center)).abs() - Vec3::from(b.half_extents);
    let outside = d.map(|v| v.max(0.0)).norm();
    let inside = d.max().min(0.0);
    outside + inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyConfig {
    /// Meters per second.
    pub max_wrist_speed: f64,
    /// Extra clearance required beyond each sphere radius, meters.
    pub collision_margin: f64,
    /// (link, body) pairs allowed to touch.
    pub exempt_pairs: Vec<(String, String)>,
}

#[derive(Deserialize)]
struct SafetyFile {
    max_wrist_speed: f64,
    collision_margin: f64,
    exempt_pairs: Vec<(String, String)>,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        let f: SafetyFile = toml::from_str(DEFAULT_SAFETY).expect("embedded safety config is valid");
        Self { max_wrist_speed: f.max_wrist_speed, collision_margin: f.collision_margin, exempt_pairs: f.exempt_pairs }
    }
}

impl SafetyConfig {
    pub fn load(path: &Path) -> Result<Self, RetargetError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| RetargetError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&src).map_err(|e| RetargetError::Config(format!("{}: {e}", path.display())))
    }

    fn is_exempt(&self, link: &str, body: &str) -> bool {
        self.exempt_pairs.iter().any(|(l, b)| l == link && b == body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    WristSpeed { speed: f64 },
    Collision { link: String, body: String, clearance: f64 },
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub q: JointVector,
    pub verdict: Verdict,
}

/// First non-exempt collision of configuration `q`, if any.
pub fn find_collision(chain: &KinematicChain, env: &Environment, cfg: &SafetyConfig, q: &JointVector) -> Option<Verdict> {
    let fk = chain.fk_unchecked(q);
    for (sphere, center) in chain.spheres.iter().zip(chain.sphere_centers(&fk)) {
        for (body, clearance) in env.clearances(&center) {
            let gap = clearance - sphere.radius - cfg.collision_margin;
            if gap < 0.0 && !cfg.is_exempt(&sphere.link, body) {
                return Some(Verdict::Collision { link: sphere.link.clone(), body: body.to_string(), clearance: gap });
            }
        }
    }
    None
}

/// Accepts `q_candidate` unless the wrist would move faster than the limit
/// over `dt` seconds or a non-exempt sphere would touch the environment; a
/// rejected candidate is replaced by `q_prev`.
pub fn safety_filter(
    chain: &KinematicChain,
    env: &Environment,
    cfg: &SafetyConfig,
    q_prev: &JointVector,
    q_candidate: &JointVector,
    dt: f64,
) -> Result<FilterOutcome, RetargetError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(RetargetError::BadTimestep(dt));
    }
    let reject = |verdict| Ok(FilterOutcome { q: *q_prev, verdict });
    let prev = chain.fk_unchecked(q_prev).wrist().translation.vector;
    let next = chain.fk_unchecked(q_candidate).wrist().translation.vector;
    let speed = (next - prev).norm() / dt;
    if speed > cfg.max_wrist_speed {
        return reject(Verdict::WristSpeed { speed });
    }
    if let Some(v) = find_collision(chain, env, cfg, q_candidate) {
        return reject(v);
    }
    Ok(FilterOutcome { q: *q_candidate, verdict: Verdict::Accepted })
}
