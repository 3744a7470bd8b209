//! Point-dipole model of the 12-taxel magnetic glove.
//!
//! Every taxel carries one soft magnet, modelled as a point dipole, and two
//! three-axis magnetometers. Each magnetometer sees the superposition of all
//! 12 dipoles plus the ambient field, expressed in its own axes, optionally
//! reshaped by the taxel's MuMetal shield, plus white Gaussian noise.

mod geometry;
mod scenario;

pub use geometry::{GloveGeometry, GeometryFile, TaxelSpec};
pub use scenario::{
    simulate_finger_wave, simulate_finger_wave_trial, simulate_press_sequence,
    simulate_press_trial, simulate_static, AmbientSpec, FingerWaveSpec, PressSpec, Scenario,
    ScenarioFile, ScenarioKind, GRAVITY, SAMPLE_RATE_HZ, SAMPLE_PERIOD_US,
};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

pub const TAXEL_COUNT: usize = 12;
pub const MAGS_PER_TAXEL: usize = 2;

/// Taxel ids of the five fingertips in policy order: thumb, index, middle,
/// ring, pinky.
pub const FINGERTIP_TAXELS: [usize; 5] = [0, 1, 2, 3, 4];

/// µ0 / 4π in T·m/A.
const MU0_OVER_4PI: f64 = 1e-7;
const TESLA_TO_MICROTESLA: f64 = 1e6;

/// Closest approach allowed between a dipole and a field point.
pub const SINGULARITY_GUARD_M: f64 = 1e-4;

/// Largest load a taxel is specified for.
pub const MAX_FORCE_N: f64 = 80.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("field point is {distance:.3e} m from a dipole, inside the {SINGULARITY_GUARD_M:e} m guard")]
    Singularity { distance: f64 },
    #[error("force of {magnitude:.3} N exceeds the {MAX_FORCE_N} N sensing range")]
    OutOfRange { magnitude: f64 },
    #[error("invalid glove geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagneticDipole {
    /// Glove-frame position, meters.
    pub position: Vec3,
    /// Dipole moment, A·m².
    pub moment: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetometerDesc {
    pub position: Vec3,
    /// Sensor axes expressed in the glove frame.
    pub rotation: Matrix3<f64>,
    /// Per-axis white-noise standard deviation, µT.
    pub noise_floor_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShieldDesc {
    pub enabled: bool,
    pub inplane_attenuation: f64,
    pub z_concentration: f64,
}

impl ShieldDesc {
    pub fn disabled() -> Self {
        Self { enabled: false, inplane_attenuation: 1.0, z_concentration: 1.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.inplane_attenuation) {
            return Err(SimError::InvalidGeometry(format!(
                "shield inplane_attenuation {} outside [0, 1]",
                self.inplane_attenuation
            )));
        }
        if !(self.z_concentration >= 1.0) {
            return Err(SimError::InvalidGeometry(format!(
                "shield z_concentration {} below 1",
                self.z_concentration
            )));
        }
        Ok(())
    }

    /// Reshapes a sensor-frame field vector.
    pub fn apply(&self, field: Vec3) -> Vec3 {
        if !self.enabled {
            return field;
        }
        Vec3::new(
            field.x * self.inplane_attenuation,
            field.y * self.inplane_attenuation,
            field.z * self.z_concentration,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxelState {
    pub id: usize,
    pub dipole: MagneticDipole,
    pub rest_dipole_position: Vec3,
    pub magnetometers: [MagnetometerDesc; MAGS_PER_TAXEL],
    pub shield: ShieldDesc,
    /// Force to dipole-displacement spring constant, N/m.
    pub stiffness: f64,
}

impl TaxelState {
    /// Outward normal of the taxel pad (taxel z axis in the glove frame).
    pub fn normal(&self) -> Vec3 {
        self.magnetometers[0].rotation.column(2).into_owned()
    }

    /// Rigidly moves the whole taxel: magnet, rest position and both
    /// magnetometers.
    pub fn translated(&self, offset: &Vec3) -> Self {
        let mut out = *self;
        out.dipole.position += offset;
        out.rest_dipole_position += offset;
        for mag in &mut out.magnetometers {
            mag.position += offset;
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dipole.moment.norm() > 0.0) {
            return Err(SimError::InvalidGeometry(format!("taxel {} has a zero moment", self.id)));
        }
        if !(self.stiffness > 0.0) || !self.stiffness.is_finite() {
            return Err(SimError::InvalidGeometry(format!(
                "taxel {} stiffness {} must be positive",
                self.id, self.stiffness
            )));
        }
        if !self.dipole.position.iter().all(|v| v.is_finite()) {
            return Err(SimError::InvalidGeometry(format!("taxel {} position not finite", self.id)));
        }
        for mag in &self.magnetometers {
            let err = (mag.rotation.transpose() * mag.rotation - Matrix3::identity()).abs().max();
            if err > 1e-9 {
                return Err(SimError::InvalidGeometry(format!(
                    "taxel {} magnetometer rotation is not orthonormal (error {err:e})",
                    self.id
                )));
            }
            if !(mag.noise_floor_sigma >= 0.0) {
                return Err(SimError::InvalidGeometry(format!(
                    "taxel {} has a negative noise floor",
                    self.id
                )));
            }
        }
        self.shield.validate()
    }
}

/// One timestamped sample of the whole glove.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GloveFrame {
    pub timestamp_us: u64,
    /// Sensor-frame readings, µT, indexed `[taxel][magnetometer]`.
    pub readings: [[Vec3; MAGS_PER_TAXEL]; TAXEL_COUNT],
    /// Accelerometer (m/s²) then gyroscope (rad/s) per taxel.
    pub imu: [[f64; 6]; TAXEL_COUNT],
    /// Ambient field used for this sample, glove frame, µT. Not transmitted
    /// on the wire.
    pub ambient_field: Vec3,
}

impl GloveFrame {
    pub fn zeroed(timestamp_us: u64) -> Self {
        Self {
            timestamp_us,
            readings: [[Vec3::zeros(); MAGS_PER_TAXEL]; TAXEL_COUNT],
            imu: [[0.0; 6]; TAXEL_COUNT],
            ambient_field: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.readings.iter().flatten().all(|v| v.iter().all(|c| c.is_finite()))
            && self.imu.iter().flatten().all(|c| c.is_finite())
    }

    /// Fingertip slice `[axis][magnetometer][finger]` in µT.
    pub fn fingertip_tactile(&self) -> [[[f64; 5]; 2]; 3] {
        let mut out = [[[0.0; 5]; 2]; 3];
        for (finger, &taxel) in FINGERTIP_TAXELS.iter().enumerate() {
            for mag in 0..MAGS_PER_TAXEL {
                for axis in 0..3 {
                    out[axis][mag][finger] = self.readings[taxel][mag][axis];
                }
            }
        }
        out
    }
}

/// Field of a point dipole at `point`, in µT.
pub fn dipole_field(dipole: &MagneticDipole, point: &Vec3) -> Result<Vec3, SimError> {
    let r = point - dipole.position;
    let dist = r.norm();
    if !(dist >= SINGULARITY_GUARD_M) {
        return Err(SimError::Singularity { distance: dist });
    }
    let r_hat = r / dist;
    let m = &dipole.moment;
    let b = (3.0 * m.dot(&r_hat) * r_hat - m) * (MU0_OVER_4PI / (dist * dist * dist));
    Ok(b * TESLA_TO_MICROTESLA)
}

/// Total glove-frame field at `point` from a set of dipoles plus ambient.
pub fn total_field<'a>(
    dipoles: impl IntoIterator<Item = &'a MagneticDipole>,
    ambient: &Vec3,
    point: &Vec3,
) -> Result<Vec3, SimError> {
    let mut b = *ambient;
    for d in dipoles {
        b += dipole_field(d, point)?;
    }
    Ok(b)
}

/// Noise-free reading of one magnetometer: superposed field rotated into the
/// sensor axes, then shaped by the shield.
pub fn magnetometer_reading<'a>(
    mag: &MagnetometerDesc,
    shield: &ShieldDesc,
    dipoles: impl IntoIterator<Item = &'a MagneticDipole>,
    ambient: &Vec3,
) -> Result<Vec3, SimError> {
    let glove = total_field(dipoles, ambient, &mag.position)?;
    Ok(shield.apply(mag.rotation.transpose() * glove))
}

/// Displaces the taxel's magnet from rest by `force / stiffness`.
pub fn apply_force(taxel: &TaxelState, force: &Vec3) -> Result<TaxelState, SimError> {
    let magnitude = force.norm();
    if !(magnitude <= MAX_FORCE_N) {
        return Err(SimError::OutOfRange { magnitude });
    }
    let mut out = *taxel;
    out.dipole.position = taxel.rest_dipole_position + force / taxel.stiffness;
    Ok(out)
}

/// Samples the whole glove. Noise is drawn for every channel in a fixed
/// order, so two worlds that differ only in geometry or shielding see the
/// same noise realisation under the same seed.
pub fn read_glove(
    taxels: &[TaxelState; TAXEL_COUNT],
    ambient: &Vec3,
    rng_seed: u64,
) -> Result<GloveFrame, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    read_glove_with(taxels, ambient, 0, &mut rng)
}

pub fn read_glove_with<R: Rng + ?Sized>(
    taxels: &[TaxelState; TAXEL_COUNT],
    ambient: &Vec3,
    timestamp_us: u64,
    rng: &mut R,
) -> Result<GloveFrame, SimError> {
    let mut frame = GloveFrame::zeroed(timestamp_us);
    frame.ambient_field = *ambient;
    let dipoles: [MagneticDipole; TAXEL_COUNT] = std::array::from_fn(|i| taxels[i].dipole);
    for (t, taxel) in taxels.iter().enumerate() {
        for (m, mag) in taxel.magnetometers.iter().enumerate() {
            let clean = magnetometer_reading(mag, &taxel.shield, &dipoles, ambient)?;
            let noise = Vec3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            frame.readings[t][m] = clean + noise * mag.noise_floor_sigma;
        }
    }
    Ok(frame)
}

/// Magnitude change of magnetometer 0 of `taxel` when its own magnet is
/// pushed `depth` meters into the pad. Only the taxel's own magnet counts.
fn own_signal_change(taxel: &TaxelState, depth: f64) -> Result<f64, SimError> {
    let mag = &taxel.magnetometers[0];
    let shield = ShieldDesc::disabled();
    let zero = Vec3::zeros();
    let rest = MagneticDipole { position: taxel.rest_dipole_position, ..taxel.dipole };
    let pressed = MagneticDipole {
        position: taxel.rest_dipole_position - taxel.normal() * depth,
        ..taxel.dipole
    };
    let before = magnetometer_reading(mag, &shield, [&rest], &zero)?.norm();
    let after = magnetometer_reading(mag, &shield, [&pressed], &zero)?.norm();
    Ok(after - before)
}

/// Stiffness that makes a 1 N normal load change the taxel's own
/// magnetometer magnitude by `signal_ut`.
pub fn calibrate_stiffness(taxel: &TaxelState, signal_ut: f64) -> Result<f64, SimError> {
    if !(signal_ut > 0.0) {
        return Err(SimError::InvalidGeometry("calibration signal must be positive".into()));
    }
    let standoff = (taxel.rest_dipole_position - taxel.magnetometers[0].position)
        .dot(&taxel.normal());
    let mut lo = 0.0;
    let mut hi = 0.5 * standoff;
    if own_signal_change(taxel, hi)? < signal_ut {
        return Err(SimError::InvalidGeometry(format!(
            "taxel {} magnet too weak to produce {signal_ut} µT within half its standoff",
            taxel.id
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if own_signal_change(taxel, mid)? < signal_ut {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(1.0 / (0.5 * (lo + hi)))
}

/// Smallest normal force whose own-magnetometer signal reaches three times
/// the noise floor.
pub fn sensing_floor_force(taxel: &TaxelState) -> Result<f64, SimError> {
    let target = 3.0 * taxel.magnetometers[0].noise_floor_sigma;
    let mut lo = 0.0;
    let mut hi = MAX_FORCE_N;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if own_signal_change(taxel, mid / taxel.stiffness)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn z_dipole() -> MagneticDipole {
        MagneticDipole { position: Vec3::zeros(), moment: Vec3::new(0.0, 0.0, 2e-3) }
    }

    #[test]
    fn on_axis_field_matches_closed_form() {
        let d = z_dipole();
        let r = 0.01;
        let b = dipole_field(&d, &Vec3::new(0.0, 0.0, r)).unwrap();
        // (µ0/2π)|m|/r³ in µT
        let expected = 2.0 * 1e-7 * 2e-3 / (r * r * r) * 1e6;
        assert_relative_eq!(b.z, expected, max_relative = 1e-12);
        assert_eq!(b.x, 0.0);
        assert_eq!(b.y, 0.0);
    }

    #[test]
    fn doubling_distance_divides_by_eight() {
        let d = z_dipole();
        let near = dipole_field(&d, &Vec3::new(0.0, 0.0, 0.01)).unwrap();
        let far = dipole_field(&d, &Vec3::new(0.0, 0.0, 0.02)).unwrap();
        assert_relative_eq!(near.norm() / far.norm(), 8.0, max_relative = 1e-12);
    }

    #[test]
    fn equatorial_field_is_half_and_antiparallel() {
        let d = z_dipole();
        let axis = dipole_field(&d, &Vec3::new(0.0, 0.0, 0.015)).unwrap();
        let eq = dipole_field(&d, &Vec3::new(0.015, 0.0, 0.0)).unwrap();
        assert_relative_eq!(eq.norm(), 0.5 * axis.norm(), max_relative = 1e-12);
        assert!(eq.z < 0.0);
        assert_relative_eq!(eq.normalize().dot(&d.moment.normalize()), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn guard_radius_rejects_near_points() {
        let d = z_dipole();
        assert!(matches!(
            dipole_field(&d, &Vec3::new(0.0, 0.0, 5e-5)),
            Err(SimError::Singularity { .. })
        ));
    }

    #[test]
    fn shield_scales_axes() {
        let s = ShieldDesc { enabled: true, inplane_attenuation: 0.25, z_concentration: 1.5 };
        assert_eq!(s.apply(Vec3::new(4.0, 8.0, 2.0)), Vec3::new(1.0, 2.0, 3.0));
        let off = ShieldDesc { enabled: false, ..s };
        assert_eq!(off.apply(Vec3::new(4.0, 8.0, 2.0)), Vec3::new(4.0, 8.0, 2.0));
        assert!(ShieldDesc { z_concentration: 0.5, ..s }.validate().is_err());
        assert!(ShieldDesc { inplane_attenuation: 1.5, ..s }.validate().is_err());
    }

    #[test]
    fn force_limits() {
        let g = GloveGeometry::default_glove().unwrap();
        let t = g.taxels[1];
        assert!(matches!(
            apply_force(&t, &Vec3::new(0.0, 0.0, -81.0)),
            Err(SimError::OutOfRange { .. })
        ));
        assert!(apply_force(&t, &Vec3::new(0.0, 0.0, -80.0)).is_ok());
        assert_eq!(apply_force(&t, &Vec3::zeros()).unwrap(), t);
    }

    #[test]
    fn sensing_floor_is_three_sigma_signal() {
        let g = GloveGeometry::default_glove().unwrap();
        let t = g.taxels[2];
        let f = sensing_floor_force(&t).unwrap();
        let signal = own_signal_change(&t, f / t.stiffness).unwrap();
        assert_relative_eq!(signal, 3.0 * t.magnetometers[0].noise_floor_sigma, max_relative = 1e-6);
        assert!(f > 0.0 && f < 0.3);
    }
}
