use osmo_core::dataset::{read_dataset, RobotFrame};
use osmo_core::pipeline::{process_bundle, synthesize_bundle, PipelineConfig, SynthConfig};
use osmo_core::retarget::KinematicChain;
use osmo_core::sensor_sim::GloveGeometry;

#[test]
fn synthetic_bundle_processes_frame_for_frame() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    let out = dir.path().join("dataset");
    let chain = KinematicChain::default_chain();
    let geometry = GloveGeometry::default_glove().unwrap();
    let synth = SynthConfig { demos: 3, seconds: 4.0, ..SynthConfig::default() };
    let summary = synthesize_bundle(&bundle, &synth, &chain, &geometry).unwrap();
    assert_eq!(summary.demos.len(), 3);

    let t0 = std::time::Instant::now();
    let result = process_bundle(&bundle, &out, &PipelineConfig::default()).unwrap();
    eprintln!("processed in {:?}", t0.elapsed());
    for r in &result.reports {
        eprintln!("{}: aligned {} unmatched {} skipped {} refine failures {} max residual {:.4}",
            r.name, r.aligned_frames, r.unmatched_ticks, r.skipped.len(), r.refine_failures.len(), r.max_residual);
        assert_eq!(r.aligned_frames, summary.frames_per_demo);
        assert!(r.skipped.is_empty());
    }
    assert_eq!(result.robot.trajectories.len(), 3);
    for (h, r) in result.human.iter().zip(&result.robot.trajectories) {
        assert_eq!(h.frames.len(), r.frames.len());
        for (a, b) in h.frames.iter().zip(&r.frames) {
            assert_eq!(a.timestamp_us, b.timestamp_us);
            assert_eq!(a.rgb, b.rgb);
            assert_eq!(a.tactile, b.tactile);
        }
    }
    let back = read_dataset::<RobotFrame>(&out).unwrap();
    assert_eq!(back, result.robot);
}
