use std::path::Path;
use std::process::{Command, Output};

use osmo_core::pipeline::PipelineConfig;
use osmo_core::sensor_sim::GloveFrame;
use osmo_core::wire::{write_stream_file, PACKET_LEN};

fn osmo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osmo")).args(args).env_remove("OSMO_SEED").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.osmo");
    let b = dir.path().join("b.osmo");
    for out in [&a, &b] {
        let o = osmo(&["simulate", "--scenario", "finger-wave", "--seconds", "60", "--seed", "7", "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes.len(), 1500 * PACKET_LEN);
    assert_eq!(bytes, std::fs::read(&b).unwrap());
}

#[test]
fn seed_changes_output_and_env_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: Option<&str>, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_osmo"));
        cmd.args(["simulate", "--seconds", "2", "--out", p(&out)]).env_remove("OSMO_SEED");
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        if let Some(e) = env {
            cmd.env("OSMO_SEED", e);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(out).unwrap()
    };
    let flag = run("flag.osmo", Some("11"), None);
    let env = run("env.osmo", None, Some("11"));
    let both = run("both.osmo", Some("11"), Some("12"));
    let other = run("other.osmo", Some("12"), None);
    assert_eq!(flag, env);
    assert_eq!(flag, both);
    assert_ne!(flag, other);
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = osmo(&["simulate", "--scenario", "juggling", "--out", p(&dir.path().join("x.osmo"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown scenario"));
}

#[test]
fn bad_flags_exit_with_usage_code() {
    assert_eq!(osmo(&["simulate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(osmo(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn analyze_simulated_rows_follow_table_order() {
    let o = osmo(&["analyze", "--seconds", "10", "--trials", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    let header = lines.iter().position(|l| l.starts_with("Thumb Distal")).unwrap();
    assert!(lines[header].trim_end().ends_with("Avg"));
    assert!(lines[header + 1].starts_with("Unshielded + 1 mag"));
    assert!(lines[header + 2].starts_with("Unshielded + 2 mags"));
    assert!(lines[header + 3].starts_with("Shielded + 2 mags"));
    assert!(text.contains("Middle Distal"));
}

#[test]
fn constant_stream_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.osmo");
    let mut frame = GloveFrame::zeroed(0);
    for (t, pair) in frame.readings.iter_mut().enumerate() {
        pair[0].x = 10.0 + t as f64;
        pair[1].z = -3.0;
    }
    let frames: Vec<GloveFrame> = (0..100u64).map(|i| GloveFrame { timestamp_us: i * 40_000, ..frame.clone() }).collect();
    write_stream_file(&path, &frames).unwrap();
    let csv = dir.path().join("t.csv");
    let o = osmo(&["analyze", "--unshielded", p(&path), "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(csv).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        for v in row.split(',').skip(3) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{row}");
        }
    }
}

#[test]
fn corrupted_stream_is_analyzed_from_survivors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.osmo");
    assert!(osmo(&["simulate", "--seconds", "4", "--out", p(&path)]).status.success());
    let mut bytes = std::fs::read(&path).unwrap();
    // spans packets 2, 3 and 4
    for b in &mut bytes[2 * PACKET_LEN + 10..4 * PACKET_LEN + 20] {
        *b = !*b;
    }
    std::fs::write(&path, &bytes).unwrap();
    let o = osmo(&["analyze", "--unshielded", p(&path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("97 packets ok, 3 dropped"), "{text}");
    assert!(text.contains("Unshielded + 2 mags"));
}

#[test]
fn decode_reports_counts_and_fails_on_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("g.osmo");
    assert!(osmo(&["simulate", "--seconds", "1", "--out", p(&good)]).status.success());
    let csv = dir.path().join("g.csv");
    let o = osmo(&["decode", p(&good), "--csv", p(&csv)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("25 packets ok, 0 dropped"));
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 26);

    let junk = dir.path().join("j.osmo");
    std::fs::write(&junk, vec![0x5a; 5000]).unwrap();
    assert_eq!(osmo(&["decode", p(&junk)]).status.code(), Some(1));
    assert_eq!(osmo(&["decode", p(&dir.path().join("missing.osmo"))]).status.code(), Some(2));
}

#[test]
fn show_config_round_trips() {
    let o = osmo(&["show-config", "--seed", "42"]);
    assert!(o.status.success());
    let cfg: PipelineConfig = toml::from_str(&stdout(&o)).unwrap();
    assert_eq!(cfg, PipelineConfig { seed: 42, ..PipelineConfig::default() });

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("osmo.toml");
    std::fs::write(&file, "seed = 5\n[smoothing]\nwindow = 11\n").unwrap();
    let from_file: PipelineConfig = toml::from_str(&stdout(&osmo(&["show-config", "--config", p(&file)]))).unwrap();
    assert_eq!((from_file.seed, from_file.smoothing.window), (5, 11));
    let flag_wins: PipelineConfig =
        toml::from_str(&stdout(&osmo(&["show-config", "--config", p(&file), "--seed", "9"]))).unwrap();
    assert_eq!(flag_wins.seed, 9);

    std::fs::write(&file, "sed = 5\n").unwrap();
    assert_eq!(osmo(&["show-config", "--config", p(&file)]).status.code(), Some(2));
}

#[test]
fn bundle_to_dataset_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    let out = dir.path().join("ds");
    let o = osmo(&["synth-demos", "--out", p(&bundle), "--demos", "3", "--seconds", "3", "--teleport", "1:40"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = osmo(&["build-dataset", "--bundle", p(&bundle), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("3 trajectories, 225 frames"), "{}", stdout(&o));
    let log = stderr(&o);
    assert!(log.contains("demo_001: frame 40 rejected"), "{log}");
    assert!(!log.contains("demo_000"));

    let csv = dir.path().join("ds.csv");
    assert!(osmo(&["export-csv", "--dataset", p(&out), "--out", p(&csv)]).status.success());
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 226);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 3 + 28);
}

#[test]
fn missing_extrinsics_fails_before_processing() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    let out = dir.path().join("ds");
    assert!(osmo(&["synth-demos", "--out", p(&bundle), "--demos", "1", "--seconds", "2"]).status.success());
    std::fs::remove_file(bundle.join("extrinsics.toml")).unwrap();
    let o = osmo(&["process", "--bundle", p(&bundle), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("extrinsics"));
    assert!(!out.exists());
}

#[test]
fn refine_then_retarget() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    assert!(osmo(&["synth-demos", "--out", p(&bundle), "--demos", "1", "--seconds", "2"]).status.success());
    let demo = bundle.join("demos").join("demo_000");
    let hand = dir.path().join("hand.json");
    let o = osmo(&[
        "refine",
        "--keypoints",
        p(&demo.join("keypoints.jsonl")),
        "--extrinsics",
        p(&bundle.join("extrinsics.toml")),
        "--out",
        p(&hand),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let joints = dir.path().join("joints.json");
    let o = osmo(&["retarget", "--trajectory", p(&hand), "--out", p(&joints), "--max-wrist-speed", "1.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(joints).unwrap()).unwrap();
    assert_eq!(v["joints"].as_array().unwrap().len(), 50);
    assert_eq!(v["joints"][0].as_array().unwrap().len(), 13);

    let o = osmo(&["retarget", "--trajectory", p(&hand), "--out", p(&dir.path().join("x.json")), "--max-wrist-speed", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}
