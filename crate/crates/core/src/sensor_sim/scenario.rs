//! Scenario generators for the two crosstalk experiments: a sequential
//! finger wave with no contact, and repeated presses on one taxel.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_force, read_glove_with, GloveFrame, GloveGeometry, SimError, TaxelState, Vec3,
    TAXEL_COUNT,
};

pub const SAMPLE_RATE_HZ: f64 = 25.0;
pub const SAMPLE_PERIOD_US: u64 = 40_000;

pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerWaveSpec {
    /// Peak fingertip travel along its wave direction, meters.
    pub amplitude: f64,
    pub frequency_hz: f64,
    /// Phase lag between consecutive moving fingers, radians.
    pub phase_step: f64,
}

impl Default for FingerWaveSpec {
    fn default() -> Self {
        Self { amplitude: 0.012, frequency_hz: 0.5, phase_step: TAU / 5.0 }
    }
}

/// Earth-field model: a fixed vector whose horizontal part is swung about
/// the glove z axis as the hand moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientSpec {
    pub base: [f64; 3],
    pub swing_rad: f64,
    pub swing_hz: f64,
}

impl AmbientSpec {
    pub fn fixed(base: Vec3) -> Self {
        Self { base: base.into(), swing_rad: 0.0, swing_hz: 0.0 }
    }

    pub fn at(&self, t: f64, phase: f64) -> Vec3 {
        let angle = self.swing_rad * (TAU * self.swing_hz * t + phase).sin();
        Rotation3::from_axis_angle(&Vec3::z_axis(), angle) * Vec3::from(self.base)
    }
}

impl Default for AmbientSpec {
    fn default() -> Self {
        Self { base: [40.0, 0.0, -40.0], swing_rad: 0.5, swing_hz: 0.13 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressSpec {
    pub presses: usize,
    /// Peak normal load, N.
    pub peak_force: f64,
    pub ramp_s: f64,
    pub hold_s: f64,
    pub rest_s: f64,
}

impl Default for PressSpec {
    fn default() -> Self {
        Self { presses: 10, peak_force: 3.0, ramp_s: 0.4, hold_s: 0.6, rest_s: 1.0 }
    }
}

impl PressSpec {
    pub fn duration_s(&self) -> f64 {
        self.rest_s + self.presses as f64 * (2.0 * self.ramp_s + self.hold_s + self.rest_s)
    }

    /// Trapezoidal load profile: lead-in rest, then `presses` cycles of
    /// ramp up, hold, ramp down, rest.
    pub fn force_at(&self, t: f64) -> f64 {
        let cycle = 2.0 * self.ramp_s + self.hold_s + self.rest_s;
        let t = t - self.rest_s;
        if t < 0.0 || t >= self.presses as f64 * cycle {
            return 0.0;
        }
        let u = t % cycle;
        let shape = if u < self.ramp_s {
            u / self.ramp_s
        } else if u < self.ramp_s + self.hold_s {
            1.0
        } else if u < 2.0 * self.ramp_s + self.hold_s {
            1.0 - (u - self.ramp_s - self.hold_s) / self.ramp_s
        } else {
            0.0
        };
        shape * self.peak_force
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.presses < 1 {
            return Err(SimError::InvalidScenario("presses must be at least 1".into()));
        }
        if !(self.ramp_s > 0.0 && self.hold_s >= 0.0 && self.rest_s > 0.0) {
            return Err(SimError::InvalidScenario("press timing must be positive".into()));
        }
        Ok(())
    }
}

fn frame_count(duration_s: f64) -> usize {
    (duration_s * SAMPLE_RATE_HZ).round() as usize
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Common driver: per frame, `pose` mutates a copy of the rest taxels and
/// returns per-taxel translation offsets used to synthesize the IMU.
fn generate<F>(
    geometry: &GloveGeometry,
    n_frames: usize,
    ambient: &AmbientSpec,
    seed: u64,
    trial: u64,
    mut offsets_at: F,
    loads: &dyn Fn(f64) -> Option<(usize, f64)>,
) -> Result<Vec<GloveFrame>, SimError>
where
    F: FnMut(f64, f64) -> [Vec3; TAXEL_COUNT],
{
    let mut rng = trial_rng(seed, trial);
    let motion_phase = rng.random::<f64>() * TAU;
    let ambient_phase = rng.random::<f64>() * TAU;
    let dt = 1.0 / SAMPLE_RATE_HZ;

    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 * dt;
        let here = offsets_at(t, motion_phase);
        let before = offsets_at(t - dt, motion_phase);
        let after = offsets_at(t + dt, motion_phase);

        let mut taxels: [TaxelState; TAXEL_COUNT] = geometry.taxels;
        for (i, taxel) in taxels.iter_mut().enumerate() {
            *taxel = taxel.translated(&here[i]);
        }
        if let Some((id, force)) = loads(t) {
            let normal = taxels[id].normal();
            taxels[id] = apply_force(&taxels[id], &(-normal * force))?;
        }

        let field = ambient.at(t, ambient_phase);
        let mut frame = read_glove_with(&taxels, &field, k as u64 * SAMPLE_PERIOD_US, &mut rng)?;
        for (i, taxel) in taxels.iter().enumerate() {
            let accel = (after[i] - 2.0 * here[i] + before[i]) / (dt * dt);
            let specific = taxel.magnetometers[0].rotation.transpose() * (accel - GRAVITY);
            frame.imu[i] = [specific.x, specific.y, specific.z, 0.0, 0.0, 0.0];
        }
        frames.push(frame);
    }
    Ok(frames)
}

fn still(_: f64, _: f64) -> [Vec3; TAXEL_COUNT] {
    [Vec3::zeros(); TAXEL_COUNT]
}

/// Motionless glove with no loads.
pub fn simulate_static(
    geometry: &GloveGeometry,
    ambient: &AmbientSpec,
    n_frames: usize,
    seed: u64,
    trial: u64,
) -> Result<Vec<GloveFrame>, SimError> {
    generate(geometry, n_frames, ambient, seed, trial, still, &|_| None)
}

/// Trial 0 of the finger wave.
pub fn simulate_finger_wave(
    geometry: &GloveGeometry,
    wave: &FingerWaveSpec,
    ambient: &AmbientSpec,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<GloveFrame>, SimError> {
    simulate_finger_wave_trial(geometry, wave, ambient, duration_s, seed, 0)
}

/// Fingertip taxels translate rigidly along their wave directions, one
/// finger after another. Each trial starts from a random wave phase.
pub fn simulate_finger_wave_trial(
    geometry: &GloveGeometry,
    wave: &FingerWaveSpec,
    ambient: &AmbientSpec,
    duration_s: f64,
    seed: u64,
    trial: u64,
) -> Result<Vec<GloveFrame>, SimError> {
    if !(duration_s > 0.0) {
        return Err(SimError::InvalidScenario("duration must be positive".into()));
    }
    let movers: Vec<(usize, Vec3)> = geometry
        .wave_directions
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|d| (i, d)))
        .collect();
    let wave = *wave;
    let offsets = move |t: f64, phase: f64| {
        let mut out = [Vec3::zeros(); TAXEL_COUNT];
        for (order, (id, dir)) in movers.iter().enumerate() {
            let angle = TAU * wave.frequency_hz * t + phase - order as f64 * wave.phase_step;
            out[*id] = dir * (wave.amplitude * angle.sin());
        }
        out
    };
    generate(geometry, frame_count(duration_s), ambient, seed, trial, offsets, &|_| None)
}

/// Trial 0 of the press sequence on `taxel`.
pub fn simulate_press_sequence(
    geometry: &GloveGeometry,
    taxel: usize,
    press: &PressSpec,
    ambient: &AmbientSpec,
    seed: u64,
) -> Result<Vec<GloveFrame>, SimError> {
    simulate_press_trial(geometry, taxel, press, ambient, seed, 0)
}

pub fn simulate_press_trial(
    geometry: &GloveGeometry,
    taxel: usize,
    press: &PressSpec,
    ambient: &AmbientSpec,
    seed: u64,
    trial: u64,
) -> Result<Vec<GloveFrame>, SimError> {
    press.validate()?;
    if taxel >= TAXEL_COUNT {
        return Err(SimError::InvalidScenario(format!("no taxel {taxel}")));
    }
    let press = *press;
    let loads = move |t: f64| Some((taxel, press.force_at(t)));
    let n = (press.duration_s() * SAMPLE_RATE_HZ).ceil() as usize;
    generate(geometry, n, ambient, seed, trial, still, &loads)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioKind {
    FingerWave { wave: FingerWaveSpec, duration_s: f64 },
    PressSequence { taxel: usize, press: PressSpec },
    Static { duration_s: f64 },
}

/// A reproducible experiment: what moves, for how long, how many trials,
/// and which taxels are monitored.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub ambient: AmbientSpec,
    pub trials: usize,
    pub seed: u64,
    pub monitored: Vec<usize>,
}

impl Scenario {
    /// Default finger-wave protocol: 5 trials of 60 s.
    pub fn finger_wave(geometry: &GloveGeometry, seed: u64) -> Result<Self, SimError> {
        let mut s = ScenarioFile::default_finger_wave().resolve(geometry)?;
        s.seed = seed;
        Ok(s)
    }

    pub fn press_sequence(geometry: &GloveGeometry, seed: u64) -> Result<Self, SimError> {
        let mut s = ScenarioFile::default_press().resolve(geometry)?;
        s.seed = seed;
        Ok(s)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScenarioKind::FingerWave { .. } => "finger-wave",
            ScenarioKind::PressSequence { .. } => "press-sequence",
            ScenarioKind::Static { .. } => "static",
        }
    }

    pub fn run_trial(&self, geometry: &GloveGeometry, trial: usize) -> Result<Vec<GloveFrame>, SimError> {
        let trial = trial as u64;
        match &self.kind {
            ScenarioKind::FingerWave { wave, duration_s } => simulate_finger_wave_trial(
                geometry, wave, &self.ambient, *duration_s, self.seed, trial,
            ),
            ScenarioKind::PressSequence { taxel, press } => {
                simulate_press_trial(geometry, *taxel, press, &self.ambient, self.seed, trial)
            }
            ScenarioKind::Static { duration_s } => {
                if !(*duration_s > 0.0) {
                    return Err(SimError::InvalidScenario("duration must be positive".into()));
                }
                simulate_static(geometry, &self.ambient, frame_count(*duration_s), self.seed, trial)
            }
        }
    }
}

/// On-disk scenario description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub monitored: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finger_wave: Option<FingerWaveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub press: Option<PressFile>,
    #[serde(default)]
    pub ambient: AmbientSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressFile {
    pub taxel: String,
    #[serde(flatten)]
    pub spec: PressSpec,
}

fn one() -> usize {
    1
}

impl ScenarioFile {
    pub fn default_finger_wave() -> Self {
        toml::from_str(include_str!("../../configs/finger_wave.toml")).expect("bundled scenario parses")
    }

    pub fn default_press() -> Self {
        toml::from_str(include_str!("../../configs/press_sequence.toml"))
            .expect("bundled scenario parses")
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidScenario(format!("{}: {e}", path.display())))?;
        toml::from_str(&src).map_err(|e| SimError::InvalidScenario(e.to_string()))
    }

    pub fn resolve(&self, geometry: &GloveGeometry) -> Result<Scenario, SimError> {
        let lookup = |name: &str| {
            geometry
                .taxel_id(name)
                .ok_or_else(|| SimError::InvalidScenario(format!("unknown taxel {name}")))
        };
        let monitored = self.monitored.iter().map(|n| lookup(n)).collect::<Result<Vec<_>, _>>()?;
        if self.trials == 0 {
            return Err(SimError::InvalidScenario("trials must be at least 1".into()));
        }
        let kind = match self.kind.as_str() {
            "finger-wave" => ScenarioKind::FingerWave {
                wave: self.finger_wave.unwrap_or_default(),
                duration_s: self.duration_s.unwrap_or(60.0),
            },
            "press-sequence" => {
                let press = self
                    .press
                    .as_ref()
                    .ok_or_else(|| SimError::InvalidScenario("missing [press] table".into()))?;
                press.spec.validate()?;
                ScenarioKind::PressSequence { taxel: lookup(&press.taxel)?, press: press.spec }
            }
            "static" => ScenarioKind::Static { duration_s: self.duration_s.unwrap_or(60.0) },
            other => return Err(SimError::InvalidScenario(format!("unknown scenario kind {other}"))),
        };
        Ok(Scenario { kind, ambient: self.ambient, trials: self.trials, seed: self.seed, monitored })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> GloveGeometry {
        GloveGeometry::default_glove().unwrap()
    }

    #[test]
    fn sixty_seconds_is_1500_frames() {
        let g = geometry();
        let frames =
            simulate_finger_wave(&g, &FingerWaveSpec::default(), &AmbientSpec::default(), 60.0, 7)
                .unwrap();
        assert_eq!(frames.len(), 1500);
        assert!(frames.windows(2).all(|w| w[1].timestamp_us - w[0].timestamp_us == SAMPLE_PERIOD_US));
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let g = geometry();
        let a = simulate_finger_wave(&g, &FingerWaveSpec::default(), &AmbientSpec::default(), 4.0, 3)
            .unwrap();
        let b = simulate_finger_wave(&g, &FingerWaveSpec::default(), &AmbientSpec::default(), 4.0, 3)
            .unwrap();
        assert_eq!(a, b);
        let c = simulate_finger_wave(&g, &FingerWaveSpec::default(), &AmbientSpec::default(), 4.0, 4)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_amplitude_without_swing_is_constant() {
        let g = geometry().with_noise_floor(0.0);
        let wave = FingerWaveSpec { amplitude: 0.0, ..Default::default() };
        let ambient = AmbientSpec { swing_rad: 0.0, ..Default::default() };
        let frames = simulate_finger_wave(&g, &wave, &ambient, 2.0, 1).unwrap();
        assert!(frames.iter().all(|f| f.readings == frames[0].readings));
    }

    #[test]
    fn non_positive_duration_is_rejected() {
        let g = geometry();
        assert!(simulate_finger_wave(&g, &FingerWaveSpec::default(), &AmbientSpec::default(), 0.0, 1)
            .is_err());
    }

    #[test]
    fn press_profile_is_trapezoidal() {
        let p = PressSpec { presses: 2, peak_force: 2.0, ramp_s: 0.5, hold_s: 1.0, rest_s: 1.0 };
        assert_eq!(p.duration_s(), 7.0);
        assert_eq!(p.force_at(0.5), 0.0);
        assert_eq!(p.force_at(1.25), 1.0);
        assert_eq!(p.force_at(2.0), 2.0);
        assert_eq!(p.force_at(2.75), 1.0);
        assert_eq!(p.force_at(3.5), 0.0);
        assert_eq!(p.force_at(5.0), 2.0);
        assert_eq!(p.force_at(7.5), 0.0);
    }

    #[test]
    fn zero_force_press_matches_static_baseline() {
        let g = geometry();
        let press = PressSpec { presses: 1, peak_force: 0.0, ..Default::default() };
        let ambient = AmbientSpec::fixed(Vec3::new(40.0, 0.0, -40.0));
        let pressed = simulate_press_sequence(&g, 1, &press, &ambient, 11).unwrap();
        let baseline = simulate_static(&g, &ambient, pressed.len(), 11, 0).unwrap();
        assert_eq!(pressed, baseline);
    }

    #[test]
    fn presses_must_be_positive() {
        let g = geometry();
        let press = PressSpec { presses: 0, ..Default::default() };
        assert!(simulate_press_sequence(&g, 1, &press, &AmbientSpec::default(), 1).is_err());
    }

    #[test]
    fn imu_reports_gravity_at_rest() {
        let g = geometry();
        let frames = simulate_static(&g, &AmbientSpec::default(), 3, 1, 0).unwrap();
        let accel_z = frames[1].imu[2][2];
        assert!((accel_z - 9.81).abs() < 1e-9);
    }

    #[test]
    fn scenario_files_resolve() {
        let g = geometry();
        let wave = ScenarioFile::default_finger_wave().resolve(&g).unwrap();
        assert_eq!(wave.trials, 5);
        assert_eq!(wave.monitored, vec![0, 2]);
        let press = ScenarioFile::default_press().resolve(&g).unwrap();
        assert!(matches!(press.kind, ScenarioKind::PressSequence { taxel: 1, .. }));
        let mut bad = ScenarioFile::default_finger_wave();
        bad.kind = "juggle".into();
        assert!(bad.resolve(&g).is_err());
        let mut bad = ScenarioFile::default_finger_wave();
        bad.monitored = vec!["elbow".into()];
        assert!(bad.resolve(&g).is_err());
    }
}
