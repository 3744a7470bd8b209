use std::path::Path;

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use super::{
    calibrate_stiffness, MagneticDipole, MagnetometerDesc, ShieldDesc, SimError, TaxelState, Vec3,
    TAXEL_COUNT,
};

const DEFAULT_GEOMETRY: &str = include_str!("../../configs/glove_geometry.toml");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryDefaults {
    pub moment: [f64; 3],
    pub standoff: f64,
    pub baseline: f64,
    pub noise_floor_sigma: f64,
    pub calibration_signal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxelSpec {
    pub name: String,
    pub center: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_floor_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave_direction: Option<[f64; 3]>,
}

/// On-disk layout of a glove geometry file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    pub defaults: GeometryDefaults,
    pub shield: ShieldDesc,
    pub taxel: Vec<TaxelSpec>,
}

impl GeometryFile {
    pub fn default_file() -> Self {
        toml::from_str(DEFAULT_GEOMETRY).expect("bundled geometry parses")
    }
}

/// Resolved glove: 12 taxels at rest plus per-taxel metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveGeometry {
    pub taxels: [TaxelState; TAXEL_COUNT],
    pub names: Vec<String>,
    /// Unit direction of finger-wave travel; `None` for taxels that stay put.
    pub wave_directions: [Option<Vec3>; TAXEL_COUNT],
}

impl GloveGeometry {
    pub fn default_glove() -> Result<Self, SimError> {
        Self::from_file(&GeometryFile::default_file())
    }

    pub fn from_toml_str(src: &str) -> Result<Self, SimError> {
        let file: GeometryFile =
            toml::from_str(src).map_err(|e| SimError::InvalidGeometry(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidGeometry(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    pub fn from_file(file: &GeometryFile) -> Result<Self, SimError> {
        if file.taxel.len() != TAXEL_COUNT {
            return Err(SimError::InvalidGeometry(format!(
                "expected {TAXEL_COUNT} taxels, found {}",
                file.taxel.len()
            )));
        }
        file.shield.validate()?;
        let d = &file.defaults;
        if !(d.standoff > 0.0) || !(d.baseline > 0.0) {
            return Err(SimError::InvalidGeometry("standoff and baseline must be positive".into()));
        }

        let mut taxels = Vec::with_capacity(TAXEL_COUNT);
        let mut wave_directions = [None; TAXEL_COUNT];
        for (id, spec) in file.taxel.iter().enumerate() {
            let rotation: Matrix3<f64> =
                Rotation3::from_axis_angle(&Vec3::z_axis(), spec.yaw_deg.to_radians()).into_inner();
            let center = Vec3::from(spec.center);
            let rest = center + rotation * Vec3::new(0.0, 0.0, d.standoff);
            let local_moment = Vec3::from(spec.moment.unwrap_or(d.moment));
            let sigma = spec.noise_floor_sigma.unwrap_or(d.noise_floor_sigma);
            let half = 0.5 * d.baseline;
            let mag = |sign: f64| MagnetometerDesc {
                position: center + rotation * Vec3::new(0.0, sign * half, 0.0),
                rotation,
                noise_floor_sigma: sigma,
            };
            let mut taxel = TaxelState {
                id,
                dipole: MagneticDipole { position: rest, moment: rotation * local_moment },
                rest_dipole_position: rest,
                magnetometers: [mag(-1.0), mag(1.0)],
                shield: file.shield,
                stiffness: 1.0,
            };
            taxel.stiffness = match spec.stiffness {
                Some(k) => k,
                None => calibrate_stiffness(&taxel, d.calibration_signal)?,
            };
            taxel.validate()?;
            if let Some(dir) = spec.wave_direction {
                let dir = Vec3::from(dir);
                let n = dir.norm();
                if !(n > 0.0) {
                    return Err(SimError::InvalidGeometry(format!(
                        "taxel {} has a zero wave_direction",
                        spec.name
                    )));
                }
                wave_directions[id] = Some(dir / n);
            }
            taxels.push(taxel);
        }
        let names: Vec<String> = file.taxel.iter().map(|t| t.name.clone()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SimError::InvalidGeometry(format!("duplicate taxel name {n}")));
            }
        }
        Ok(Self {
            taxels: taxels.try_into().expect("length checked above"),
            names,
            wave_directions,
        })
    }

    pub fn taxel_id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn with_shield(&self, shield: ShieldDesc) -> Self {
        let mut out = self.clone();
        for t in &mut out.taxels {
            t.shield = shield;
        }
        out
    }

    pub fn with_shield_enabled(&self, enabled: bool) -> Self {
        let mut out = self.clone();
        for t in &mut out.taxels {
            t.shield.enabled = enabled;
        }
        out
    }

    pub fn with_noise_floor(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.taxels {
            for m in &mut t.magnetometers {
                m.noise_floor_sigma = sigma;
            }
        }
        out
    }
}
