//! Crosstalk metrics: RMS variation about the mean, differential
//! (two-magnetometer) sensing, and side-by-side comparison of shield and
//! magnetometer configurations.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor_sim::{GloveFrame, GloveGeometry, Scenario, SimError, Vec3, TAXEL_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("series has {0} samples; at least 2 are required")]
    TooShort(usize),
    #[error("magnetometer count must be 1 or 2, got {0}")]
    BadMagnetometerCount(u8),
    #[error("no configurations to compare")]
    NoConfigs,
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// Per-axis RMS variation of one taxel under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsReport {
    pub per_axis: [f64; 3],
    pub average: f64,
    pub taxel_id: usize,
    pub config_label: String,
}

impl RmsReport {
    pub fn from_axes(per_axis: [f64; 3], taxel_id: usize, config_label: impl Into<String>) -> Self {
        Self {
            per_axis,
            average: per_axis.iter().sum::<f64>() / 3.0,
            taxel_id,
            config_label: config_label.into(),
        }
    }

    pub fn labelled(mut self, taxel_id: usize, config_label: impl Into<String>) -> Self {
        self.taxel_id = taxel_id;
        self.config_label = config_label.into();
        self
    }

    /// One table row: label, x, y, z, average.
    pub fn format_row(&self) -> String {
        format!(
            "{:<24} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
            self.config_label, self.per_axis[0], self.per_axis[1], self.per_axis[2], self.average
        )
    }
}

/// RMS about the series mean, per axis.
pub fn rms_noise(series: &[Vec3]) -> Result<RmsReport, AnalysisError> {
    if series.len() < 2 {
        return Err(AnalysisError::TooShort(series.len()));
    }
    let n = series.len() as f64;
    let mut per_axis = [0.0; 3];
    for (axis, out) in per_axis.iter_mut().enumerate() {
        // Shifting by the first sample keeps a constant series exactly zero.
        let origin = series[0][axis];
        let mean = series.iter().map(|v| v[axis] - origin).sum::<f64>() / n;
        let var = series.iter().map(|v| (v[axis] - origin - mean).powi(2)).sum::<f64>() / n;
        *out = var.sqrt();
    }
    Ok(RmsReport::from_axes(per_axis, 0, ""))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialFrame {
    pub timestamp_us: u64,
    /// Magnetometer 0 minus magnetometer 1, per taxel, sensor axes, µT.
    pub diff: [Vec3; TAXEL_COUNT],
}

pub fn differential(frame: &GloveFrame) -> DifferentialFrame {
    DifferentialFrame {
        timestamp_us: frame.timestamp_us,
        diff: std::array::from_fn(|t| frame.readings[t][0] - frame.readings[t][1]),
    }
}

/// Shielding plus how many magnetometers feed the taxel signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MagConfig {
    pub shielded: bool,
    pub magnetometers: u8,
}

impl MagConfig {
    pub const UNSHIELDED_SINGLE: Self = Self { shielded: false, magnetometers: 1 };
    pub const UNSHIELDED_DUAL: Self = Self { shielded: false, magnetometers: 2 };
    pub const SHIELDED_DUAL: Self = Self { shielded: true, magnetometers: 2 };

    /// The three configurations, noisiest first.
    pub const TABLE_ORDER: [Self; 3] =
        [Self::UNSHIELDED_SINGLE, Self::UNSHIELDED_DUAL, Self::SHIELDED_DUAL];

    pub fn label(&self) -> String {
        let shield = if self.shielded { "Shielded" } else { "Unshielded" };
        let mags = if self.magnetometers == 1 { "1 mag" } else { "2 mags" };
        format!("{shield} + {mags}")
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        match self.magnetometers {
            1 | 2 => Ok(()),
            n => Err(AnalysisError::BadMagnetometerCount(n)),
        }
    }

    /// The signal this configuration reports for `taxel`: magnetometer 0
    /// alone, or the differential pair.
    pub fn signal(&self, frame: &GloveFrame, taxel: usize) -> Vec3 {
        if self.magnetometers == 1 {
            frame.readings[taxel][0]
        } else {
            frame.readings[taxel][0] - frame.readings[taxel][1]
        }
    }
}

/// RMS of one taxel's signal over a recorded stream.
pub fn stream_rms(frames: &[GloveFrame], taxel: usize, config: MagConfig) -> Result<RmsReport, AnalysisError> {
    config.validate()?;
    let series: Vec<Vec3> = frames.iter().map(|f| config.signal(f, taxel)).collect();
    Ok(rms_noise(&series)?.labelled(taxel, config.label()))
}

/// Averages per-axis values of several trial reports of the same taxel and
/// configuration.
pub fn mean_report(trials: &[RmsReport]) -> RmsReport {
    let n = trials.len() as f64;
    let mut axes = [0.0; 3];
    for r in trials {
        for (a, v) in axes.iter_mut().zip(r.per_axis) {
            *a += v / n;
        }
    }
    RmsReport::from_axes(axes, trials[0].taxel_id, trials[0].config_label.clone())
}

/// Comparison of configurations, grouped by monitored taxel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub title: String,
    pub taxel_names: Vec<String>,
    pub configs: Vec<MagConfig>,
    /// Row-major: `rows[taxel_index * configs.len() + config_index]`.
    pub rows: Vec<RmsReport>,
}

impl ComparisonTable {
    pub fn get(&self, taxel_index: usize, config: MagConfig) -> Option<&RmsReport> {
        let c = self.configs.iter().position(|&x| x == config)?;
        self.rows.get(taxel_index * self.configs.len() + c)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        for (ti, name) in self.taxel_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>10} {:>10} {:>10}",
                display_name(name),
                "X-Axis",
                "Y-Axis",
                "Z-Axis",
                "Avg"
            );
            for ci in 0..self.configs.len() {
                let _ = writeln!(out, "{}", self.rows[ti * self.configs.len() + ci].format_row());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("taxel,taxel_id,config,x,y,z,avg\n");
        for (ti, name) in self.taxel_names.iter().enumerate() {
            for ci in 0..self.configs.len() {
                let r = &self.rows[ti * self.configs.len() + ci];
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    name, r.taxel_id, r.config_label, r.per_axis[0], r.per_axis[1], r.per_axis[2], r.average
                );
            }
        }
        out
    }
}

/// "middle_distal" -> "Middle Distal".
fn display_name(name: &str) -> String {
    name.split('_')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<String>>()
        .join(" ")
}

/// Runs `scenario` once per shield state and trial, then reports each
/// configuration's trial-averaged RMS for every monitored taxel. Every
/// configuration sees the same kinematics and noise realisation.
pub fn compare_configurations(
    geometry: &GloveGeometry,
    scenario: &Scenario,
    configs: &[MagConfig],
) -> Result<ComparisonTable, AnalysisError> {
    if configs.is_empty() {
        return Err(AnalysisError::NoConfigs);
    }
    for c in configs {
        c.validate()?;
    }
    let mut shield_states: Vec<bool> = configs.iter().map(|c| c.shielded).collect();
    shield_states.sort();
    shield_states.dedup();

    let jobs: Vec<(bool, usize)> = shield_states
        .iter()
        .flat_map(|&s| (0..scenario.trials).map(move |t| (s, t)))
        .collect();
    // per job: reports indexed [taxel][config] for configs sharing the job's shield state
    let results: Vec<Result<(bool, Vec<Vec<Option<RmsReport>>>), AnalysisError>> = jobs
        .par_iter()
        .map(|&(shielded, trial)| {
            let world = geometry.with_shield_enabled(shielded);
            let frames = scenario.run_trial(&world, trial)?;
            let mut per_taxel = Vec::with_capacity(scenario.monitored.len());
            for &taxel in &scenario.monitored {
                let mut per_cfg = Vec::with_capacity(configs.len());
                for c in configs {
                    per_cfg.push(if c.shielded == shielded {
                        Some(stream_rms(&frames, taxel, *c)?)
                    } else {
                        None
                    });
                }
                per_taxel.push(per_cfg);
            }
            Ok((shielded, per_taxel))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::with_capacity(scenario.monitored.len() * configs.len());
    for ti in 0..scenario.monitored.len() {
        for ci in 0..configs.len() {
            let trials: Vec<RmsReport> =
                results.iter().filter_map(|(_, per_taxel)| per_taxel[ti][ci].clone()).collect();
            rows.push(mean_report(&trials));
        }
    }
    Ok(ComparisonTable {
        title: format!("{} - RMS Noise (µT)", scenario.name()),
        taxel_names: scenario.monitored.iter().map(|&t| geometry.names[t].clone()).collect(),
        configs: configs.to_vec(),
        rows,
    })
}

/// Builds a comparison table from recorded streams, one stream per trial.
/// Configurations whose shield state has no streams are left out.
pub fn table_from_streams(
    title: impl Into<String>,
    monitored: &[(usize, String)],
    unshielded: &[Vec<GloveFrame>],
    shielded: &[Vec<GloveFrame>],
    configs: &[MagConfig],
) -> Result<ComparisonTable, AnalysisError> {
    let configs: Vec<MagConfig> = configs
        .iter()
        .copied()
        .filter(|c| if c.shielded { !shielded.is_empty() } else { !unshielded.is_empty() })
        .collect();
    if configs.is_empty() {
        return Err(AnalysisError::NoConfigs);
    }
    let mut rows = Vec::with_capacity(monitored.len() * configs.len());
    for &(taxel, _) in monitored {
        for c in &configs {
            let streams = if c.shielded { shielded } else { unshielded };
            let trials = streams.iter().map(|s| stream_rms(s, taxel, *c)).collect::<Result<Vec<_>, _>>()?;
            rows.push(mean_report(&trials));
        }
    }
    Ok(ComparisonTable {
        title: title.into(),
        taxel_names: monitored.iter().map(|(_, n)| n.clone()).collect(),
        configs,
        rows,
    })
}

/// Relative reduction of `better` against `baseline` average noise.
pub fn average_reduction(better: &RmsReport, baseline: &RmsReport) -> f64 {
    1.0 - better.average / baseline.average
}

/// Counts pulses with hysteresis: a pulse starts when the series rises
/// above `high` and the counter re-arms once it falls below `low`.
pub fn count_pulses(series: &[f64], low: f64, high: f64) -> usize {
    let mut armed = true;
    let mut count = 0;
    for &v in series {
        if armed && v > high {
            count += 1;
            armed = false;
        } else if !armed && v < low {
            armed = true;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor_sim::{AmbientSpec, FingerWaveSpec, ScenarioKind};
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    #[test]
    fn constant_series_is_exactly_zero() {
        let s = vec![Vec3::new(0.1, -7.3, 1e4); 1000];
        let r = rms_noise(&s).unwrap();
        assert_eq!(r.per_axis, [0.0; 3]);
        assert_eq!(r.average, 0.0);
    }

    #[test]
    fn sine_rms_is_amplitude_over_root_two() {
        let amp = 12.5;
        let per_period = 25;
        let s: Vec<Vec3> = (0..100 * per_period)
            .map(|k| {
                let v = amp * (TAU * k as f64 / per_period as f64).sin();
                Vec3::new(v, 2.0 * v, 0.0)
            })
            .collect();
        let r = rms_noise(&s).unwrap();
        assert_relative_eq!(r.per_axis[0], amp / 2f64.sqrt(), max_relative = 1e-3);
        assert_relative_eq!(r.per_axis[1], 2.0 * amp / 2f64.sqrt(), max_relative = 1e-3);
    }

    #[test]
    fn short_series_rejected() {
        assert_eq!(rms_noise(&[Vec3::zeros()]), Err(AnalysisError::TooShort(1)));
    }

    #[test]
    fn table_row_average_formatting() {
        let r = RmsReport::from_axes([31.39, 46.63, 143.0], 0, "Shielded + 2 mags");
        assert!(r.format_row().contains("73.67"), "{}", r.format_row());
    }

    #[test]
    fn differential_rejects_common_mode() {
        let mut f = GloveFrame::zeroed(5);
        for t in 0..TAXEL_COUNT {
            f.readings[t] = [Vec3::new(1.0, 2.0, 3.0), Vec3::new(1.0, 2.0, 3.0)];
        }
        let d = differential(&f);
        assert!(d.diff.iter().all(|v| *v == Vec3::zeros()));
        assert_eq!(d.timestamp_us, 5);

        f.readings[3] = [Vec3::new(4.0, 0.0, 1.0), Vec3::new(1.0, 1.0, 1.0)];
        let before = differential(&f);
        let offset = Vec3::new(-20.0, 35.0, 7.0);
        for t in 0..TAXEL_COUNT {
            for m in 0..2 {
                f.readings[t][m] += offset;
            }
        }
        assert_eq!(differential(&f).diff[3], before.diff[3]);
    }

    #[test]
    fn labels_and_counts() {
        assert_eq!(MagConfig::UNSHIELDED_SINGLE.label(), "Unshielded + 1 mag");
        assert_eq!(MagConfig::SHIELDED_DUAL.label(), "Shielded + 2 mags");
        assert_eq!(display_name("thumb_distal"), "Thumb Distal");
        let bad = MagConfig { shielded: false, magnetometers: 3 };
        assert!(stream_rms(&[GloveFrame::zeroed(0), GloveFrame::zeroed(1)], 0, bad).is_err());
    }

    #[test]
    fn pulses_with_hysteresis() {
        let s = [0.0, 1.0, 0.6, 1.0, 0.0, 0.0, 1.0, 0.2, 1.0];
        assert_eq!(count_pulses(&s, 0.25, 0.5), 3);
    }

    #[test]
    fn zero_motion_zero_noise_gives_zero_table() {
        let g = GloveGeometry::default_glove().unwrap().with_noise_floor(0.0);
        let scenario = Scenario {
            kind: ScenarioKind::FingerWave {
                wave: FingerWaveSpec { amplitude: 0.0, ..Default::default() },
                duration_s: 2.0,
            },
            ambient: AmbientSpec { swing_rad: 0.0, ..Default::default() },
            trials: 2,
            seed: 3,
            monitored: vec![0, 2],
        };
        let table = compare_configurations(&g, &scenario, &MagConfig::TABLE_ORDER).unwrap();
        assert_eq!(table.rows.len(), 6);
        assert!(table.rows.iter().all(|r| r.average == 0.0 && r.per_axis == [0.0; 3]));
        assert!(table.to_text().contains("Middle Distal"));
        assert_eq!(table.to_csv().lines().count(), 7);
    }
}
