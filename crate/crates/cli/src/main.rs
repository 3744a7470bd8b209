//! `osmo`: batch front end for the glove data path.
//!
//! Exit codes: 0 success, 1 data-quality failure, 2 usage or configuration
//! error.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use osmo_core::analysis::{compare_configurations, table_from_streams, MagConfig};
use osmo_core::dataset::{export_csv, read_dataset, RobotFrame};
use osmo_core::handpose::{read_keypoint_file, Extrinsics, HandTrajectory};
use osmo_core::pipeline::{
    hand_trajectory_from_records, process_bundle, synthesize_bundle, PipelineConfig, PipelineError, SynthConfig,
};
use osmo_core::retarget::{retarget_trajectory, RetargetError, Verdict};
use osmo_core::sensor_sim::{GloveFrame, GloveGeometry, Scenario, ScenarioFile, ScenarioKind, SimError};
use osmo_core::wire::{read_stream_file, write_stream_file, StreamStats};

#[derive(Parser, Debug)]
#[command(name = "osmo", version, about = "Tactile glove simulation, decoding, analysis and dataset tools")]
struct Cli {
    /// Pipeline configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed. Falls back to OSMO_SEED, then the config file.
    #[arg(long, global = true, env = "OSMO_SEED")]
    seed: Option<u64>,
    /// Glove geometry file.
    #[arg(long, global = true)]
    geometry: Option<PathBuf>,
    /// Kinematic chain file.
    #[arg(long, global = true)]
    chain: Option<PathBuf>,
    /// Environment (obstacles) file.
    #[arg(long, global = true)]
    environment: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one trial and write its packet stream.
    Simulate(SimulateArgs),
    /// Decode a packet stream and report integrity counters.
    Decode(DecodeArgs),
    /// RMS crosstalk comparison of magnetometer configurations.
    Analyze(AnalyzeArgs),
    /// Depth-refine, transform and smooth camera-frame hand poses.
    Refine(RefineArgs),
    /// Retarget a robot-frame hand trajectory to joint commands.
    Retarget(RetargetArgs),
    /// Process a demonstration bundle into a robot-ready dataset.
    #[command(alias = "process")]
    BuildDataset(BuildArgs),
    /// Flatten a dataset's joints and differential tactile values to CSV.
    ExportCsv(ExportArgs),
    /// Print the effective configuration.
    ShowConfig,
    /// Write a synthetic demonstration bundle.
    SynthDemos(SynthArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// finger-wave, press-sequence, static, or a scenario file.
    #[arg(long, default_value = "finger-wave")]
    scenario: String,
    /// Duration for finger-wave and static scenarios.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Enable the MuMetal shields.
    #[arg(long)]
    shield: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    stream: PathBuf,
    /// Write decoded frames as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Recorded streams without shields, one per trial.
    #[arg(long, num_args = 1..)]
    unshielded: Vec<PathBuf>,
    /// Recorded streams with shields, one per trial.
    #[arg(long, num_args = 1..)]
    shielded: Vec<PathBuf>,
    /// Taxels to report; defaults to the scenario's monitored taxels.
    #[arg(long = "taxel")]
    taxels: Vec<String>,
    /// Scenario simulated when no streams are given.
    #[arg(long, default_value = "finger-wave")]
    scenario: String,
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RefineArgs {
    /// Camera-frame pose records, one JSON object per line.
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long)]
    extrinsics: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    polyorder: Option<usize>,
    /// Robot-frame trajectory, JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RetargetArgs {
    /// Robot-frame trajectory written by `refine`.
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    max_wrist_speed: Option<f64>,
    #[arg(long)]
    collision_margin: Option<f64>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Output directory; defaults to the configured dataset root.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    extrinsics: Option<PathBuf>,
    /// Map the percentile band to [-1, 1] instead of [0, 2].
    #[arg(long)]
    centered: bool,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    demos: usize,
    #[arg(long, default_value_t = 8.0)]
    seconds: f64,
    /// Inject an unreachable wrist jump at DEMO:FRAME.
    #[arg(long, value_parser = parse_teleport)]
    teleport: Option<[usize; 2]>,
}

fn parse_teleport(s: &str) -> Result<[usize; 2], String> {
    let (d, f) = s.split_once(':').ok_or("expected DEMO:FRAME")?;
    Ok([d.parse().map_err(|e| format!("{e}"))?, f.parse().map_err(|e| format!("{e}"))?])
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Usage(e.into()),
            PipelineError::Data(_) => Failure::Data(e.into()),
        }
    }
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, err) = match &f {
                Failure::Usage(e) => ("error", e),
                Failure::Data(e) => ("data error", e),
            };
            eprintln!("{kind}: {err:#}");
            ExitCode::from(f.code())
        }
    }
}

/// Config file first, then global flag overrides.
fn effective_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &cli.geometry {
        cfg.paths.geometry = Some(p.clone());
    }
    if let Some(p) = &cli.chain {
        cfg.paths.chain = Some(p.clone());
    }
    if let Some(p) = &cli.environment {
        cfg.paths.environment = Some(p.clone());
    }
    Ok(cfg)
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(anyhow!("{} not found", path.display())))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = effective_config(&cli)?;
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Decode(a) => decode(a),
        Command::Analyze(a) => analyze(&cfg, a),
        Command::Refine(a) => refine(cfg, a),
        Command::Retarget(a) => retarget(cfg, a),
        Command::BuildDataset(a) => build_dataset(cfg, a),
        Command::ExportCsv(a) => export(a),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::SynthDemos(a) => synth(&cfg, a),
    }
}

fn geometry(cfg: &PipelineConfig) -> Result<GloveGeometry, Failure> {
    match &cfg.paths.geometry {
        Some(p) => GloveGeometry::load(p).usage(),
        None => GloveGeometry::default_glove().usage(),
    }
}

/// Resolves a built-in scenario name or a scenario file.
fn scenario(name: &str, geometry: &GloveGeometry, seed: u64, seconds: Option<f64>) -> Result<Scenario, Failure> {
    let file = match name {
        "finger-wave" => ScenarioFile::default_finger_wave(),
        "press-sequence" => ScenarioFile::default_press(),
        "static" => ScenarioFile { kind: "static".into(), ..ScenarioFile::default_finger_wave() },
        other if Path::new(other).is_file() => ScenarioFile::load(Path::new(other)).usage()?,
        other => {
            return Err(Failure::Usage(anyhow!(
                "unknown scenario '{other}' (expected finger-wave, press-sequence, static or a scenario file)"
            )))
        }
    };
    let mut s = file.resolve(geometry).usage()?;
    s.seed = seed;
    if let Some(secs) = seconds {
        if !(secs > 0.0) {
            return Err(Failure::Usage(anyhow!("--seconds must be positive")));
        }
        match &mut s.kind {
            ScenarioKind::FingerWave { duration_s, .. } | ScenarioKind::Static { duration_s } => *duration_s = secs,
            ScenarioKind::PressSequence { .. } => log::warn!("--seconds ignored: press duration follows the press schedule"),
        }
    }
    Ok(s)
}

fn simulate(cfg: &PipelineConfig, a: SimulateArgs) -> Result<(), Failure> {
    let geometry = geometry(cfg)?;
    let scenario = scenario(&a.scenario, &geometry, cfg.seed, a.seconds)?;
    let world = geometry.with_shield_enabled(a.shield);
    let frames = scenario.run_trial(&world, a.trial).map_err(|e| match e {
        SimError::InvalidScenario(_) => Failure::Usage(e.into()),
        other => Failure::Data(other.into()),
    })?;
    write_stream_file(&a.out, &frames).with_context(|| a.out.display().to_string()).data()?;
    println!(
        "{}: {} packets ({} trial {}, seed {}, shield {})",
        a.out.display(),
        frames.len(),
        scenario.name(),
        a.trial,
        cfg.seed,
        if a.shield { "on" } else { "off" }
    );
    Ok(())
}

fn stats_line(path: &Path, s: &StreamStats) -> String {
    format!(
        "{}: {} packets ok, {} dropped, {} CRC failures, {} resyncs",
        path.display(),
        s.packets_ok,
        s.packets_dropped,
        s.crc_failures,
        s.resyncs
    )
}

fn read_stream(path: &Path) -> Result<(Vec<GloveFrame>, StreamStats), Failure> {
    require_file(path)?;
    read_stream_file(path).with_context(|| path.display().to_string()).data()
}

fn frames_csv(frames: &[GloveFrame]) -> String {
    let mut out = String::from("timestamp_us");
    for t in 0..frames.first().map_or(0, |f| f.readings.len()) {
        for m in 0..2 {
            for ax in ["x", "y", "z"] {
                let _ = write!(out, ",t{t}_m{m}_{ax}");
            }
        }
    }
    out.push('\n');
    for f in frames {
        let _ = write!(out, "{}", f.timestamp_us);
        for v in f.readings.iter().flatten() {
            let _ = write!(out, ",{},{},{}", v.x, v.y, v.z);
        }
        out.push('\n');
    }
    out
}

fn decode(a: DecodeArgs) -> Result<(), Failure> {
    let (frames, stats) = read_stream(&a.stream)?;
    println!("{}", stats_line(&a.stream, &stats));
    if let Some(p) = &a.csv {
        std::fs::write(p, frames_csv(&frames)).with_context(|| p.display().to_string()).data()?;
    }
    if frames.is_empty() {
        return Err(Failure::Data(anyhow!("{}: no valid packets", a.stream.display())));
    }
    Ok(())
}

fn analyze(cfg: &PipelineConfig, a: AnalyzeArgs) -> Result<(), Failure> {
    let geometry = geometry(cfg)?;
    let mut scen = scenario(&a.scenario, &geometry, cfg.seed, a.seconds)?;
    if let Some(n) = a.trials {
        if n == 0 {
            return Err(Failure::Usage(anyhow!("--trials must be at least 1")));
        }
        scen.trials = n;
    }
    if !a.taxels.is_empty() {
        scen.monitored = a
            .taxels
            .iter()
            .map(|n| geometry.taxel_id(n).ok_or_else(|| Failure::Usage(anyhow!("unknown taxel {n}"))))
            .collect::<Result<_, _>>()?;
    }
    let table = if a.unshielded.is_empty() && a.shielded.is_empty() {
        compare_configurations(&geometry, &scen, &MagConfig::TABLE_ORDER).data()?
    } else {
        let load = |paths: &[PathBuf]| -> Result<Vec<Vec<GloveFrame>>, Failure> {
            let mut streams = Vec::new();
            for p in paths {
                let (frames, stats) = read_stream(p)?;
                println!("{}", stats_line(p, &stats));
                streams.push(frames);
            }
            Ok(streams)
        };
        let unshielded = load(&a.unshielded)?;
        let shielded = load(&a.shielded)?;
        let monitored: Vec<(usize, String)> = scen.monitored.iter().map(|&t| (t, geometry.names[t].clone())).collect();
        table_from_streams("RMS Noise (µT)", &monitored, &unshielded, &shielded, &MagConfig::TABLE_ORDER).data()?
    };
    print!("{}", table.to_text());
    if let Some(p) = &a.csv {
        std::fs::write(p, table.to_csv()).with_context(|| p.display().to_string()).data()?;
    }
    Ok(())
}

fn refine(mut cfg: PipelineConfig, a: RefineArgs) -> Result<(), Failure> {
    require_file(&a.keypoints)?;
    require_file(&a.extrinsics)?;
    if let Some(w) = a.window {
        cfg.smoothing.window = w;
    }
    if let Some(p) = a.polyorder {
        cfg.smoothing.polyorder = p;
    }
    let extrinsics = Extrinsics::load(&a.extrinsics).usage()?;
    let records = read_keypoint_file(&a.keypoints).data()?;
    let (traj, failures) = hand_trajectory_from_records(&records, &extrinsics, &cfg)?;
    let json = serde_json::to_string(&traj).data()?;
    std::fs::write(&a.out, json).with_context(|| a.out.display().to_string()).data()?;
    println!("{}: {} frames, {} refinement fallbacks", a.out.display(), traj.len(), failures.len());
    Ok(())
}

#[derive(Serialize)]
struct RetargetFile {
    timestamps_us: Vec<u64>,
    joints: Vec<[f64; 13]>,
    residuals: Vec<f64>,
    skipped: Vec<(usize, Verdict)>,
}

fn retarget(mut cfg: PipelineConfig, a: RetargetArgs) -> Result<(), Failure> {
    require_file(&a.trajectory)?;
    if let Some(v) = a.damping {
        cfg.retarget.ik.damping = v;
    }
    if let Some(v) = a.tolerance {
        cfg.retarget.ik.tolerance = v;
    }
    if let Some(v) = a.max_iterations {
        cfg.retarget.ik.max_iterations = v;
    }
    if let Some(v) = a.max_wrist_speed {
        cfg.safety.max_wrist_speed = v;
    }
    if let Some(v) = a.collision_margin {
        cfg.safety.collision_margin = v;
    }
    let res = cfg.resources(None)?;
    let text = std::fs::read_to_string(&a.trajectory).with_context(|| a.trajectory.display().to_string()).data()?;
    let traj: HandTrajectory =
        serde_json::from_str(&text).with_context(|| a.trajectory.display().to_string()).data()?;
    let out = retarget_trajectory(&traj, &res.chain, &res.environment, &res.safety, &cfg.retarget, None)
        .map_err(|e| match e {
            RetargetError::Config(_) | RetargetError::LimitViolation { .. } => Failure::Usage(e.into()),
            other => Failure::Data(other.into()),
        })?;
    for (i, v) in &out.skipped {
        log::warn!("frame {i} rejected by the safety filter ({v:?}); previous pose repeated");
    }
    let file = RetargetFile {
        timestamps_us: traj.timestamps_us.clone(),
        joints: out.joints.iter().map(|q| (*q).into()).collect(),
        residuals: out.residuals,
        skipped: out.skipped,
    };
    std::fs::write(&a.out, serde_json::to_string(&file).data()?).with_context(|| a.out.display().to_string()).data()?;
    let worst = file.residuals.iter().copied().fold(0.0, f64::max);
    println!("{}: {} frames, {} skipped, max residual {worst:.2e}", a.out.display(), file.joints.len(), file.skipped.len());
    Ok(())
}

fn build_dataset(mut cfg: PipelineConfig, a: BuildArgs) -> Result<(), Failure> {
    if let Some(p) = a.extrinsics {
        cfg.paths.extrinsics = Some(p);
    }
    if a.centered {
        cfg.normalization.centered = true;
    }
    let out = a
        .out
        .or_else(|| cfg.paths.dataset_root.clone())
        .ok_or_else(|| Failure::Usage(anyhow!("no output directory: pass --out or set paths.dataset_root")))?;
    if !a.bundle.is_dir() {
        return Err(Failure::Usage(anyhow!("{} is not a directory", a.bundle.display())));
    }
    let result = process_bundle(&a.bundle, &out, &cfg)?;
    for r in &result.reports {
        println!(
            "{}: {} aligned frames, {} unmatched ticks, {} dropped packets, {} skipped, max residual {:.2e}",
            r.name,
            r.aligned_frames,
            r.unmatched_ticks,
            r.stream.packets_dropped,
            r.skipped.len(),
            r.max_residual
        );
    }
    println!(
        "{}: {} trajectories, {} frames",
        out.display(),
        result.manifest.trajectory_count,
        result.manifest.frame_count
    );
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), Failure> {
    if !a.dataset.is_dir() {
        return Err(Failure::Usage(anyhow!("{} is not a directory", a.dataset.display())));
    }
    let ds = read_dataset::<RobotFrame>(&a.dataset).data()?;
    match &a.out {
        Some(p) => {
            let f = std::fs::File::create(p).with_context(|| p.display().to_string()).data()?;
            export_csv(&ds, std::io::BufWriter::new(f)).data()
        }
        None => {
            let mut buf = Vec::new();
            export_csv(&ds, &mut buf).data()?;
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(&buf).and_then(|_| stdout.flush()) {
                // a closed pipe (`| head`) is not a failure
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.data(),
            }
        }
    }
}

fn synth(cfg: &PipelineConfig, a: SynthArgs) -> Result<(), Failure> {
    let res = cfg.resources(None)?;
    let sc = SynthConfig { demos: a.demos, seconds: a.seconds, seed: cfg.seed, teleport: a.teleport, ..SynthConfig::default() };
    let summary = synthesize_bundle(&a.out, &sc, &res.chain, &res.geometry)?;
    println!("{}: {} demos, {} frames each", a.out.display(), summary.demos.len(), summary.frames_per_demo);
    Ok(())
}
