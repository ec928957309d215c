use std::path::Path;
use std::process::Command;

use bubblestereo::pipeline::{run_with_source, PipelineConfig};
use bubblestereo::simulator::{perturb_rig, BubbleConfig, DiameterDistribution, SceneConfig, SimulatedSource};
use bubblestereo::geometry::CalibrationFile;

fn short_scene(seed: u64, duration_s: f64, rate_hz: f64) -> SceneConfig {
    SceneConfig {
        seed,
        duration_s,
        black_frame_interval: 200,
        clock_offset_s: 0.4,
        bubbles: BubbleConfig { rate_hz, ..Default::default() },
        ..Default::default()
    }
}

fn ledger(source: &SimulatedSource, row: f64) -> (usize, f64) {
    let truth = source.ground_truth();
    let crossed = truth.crossings(row);
    let volume = crossed.iter().map(|c| truth.bubble(c.id).unwrap().volume_mm3).sum::<f64>() / 1000.0;
    (crossed.len(), volume)
}

#[test]
fn empty_scene_reports_nothing() {
    let scene = short_scene(3, 1.5, 0.0);
    let source = SimulatedSource::new(scene.clone()).unwrap();
    let out = run_with_source(&PipelineConfig::default(), &source, &scene.stereo_rig().unwrap()).unwrap();
    assert_eq!(out.report.bubble_count, 0);
    assert_eq!(out.report.total_volume_ml, 0.0);
    let diag = out.report.diagnostics.unwrap();
    assert_eq!(diag.detections, [0, 0]);
    assert_eq!(diag.pairs, diag.frames[0] - diag.black_frames[0]);
    assert!((out.sync.offset_us - 400_000.0).abs() < 1.0);
}

#[test]
fn low_rate_stream_is_counted_exactly() {
    let scene = short_scene(11, 5.0, 2.0);
    let source = SimulatedSource::new(scene.clone()).unwrap();
    let config = PipelineConfig::default();
    let out = run_with_source(&config, &source, &scene.stereo_rig().unwrap()).unwrap();
    let (n, volume) = ledger(&source, config.counting_row);
    assert!(n >= 5);
    assert_eq!(out.report.bubble_count, n);
    assert!((out.report.total_volume_ml / volume - 1.0).abs() < 0.05, "{} vs {volume}", out.report.total_volume_ml);
    assert_eq!(out.report.merged_bubbles, 0);
    let rise = out.report.rise_velocity_cm_s.mean;
    assert!((rise - 28.0).abs() < 1.0, "rise {rise}");
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let scene = short_scene(5, 2.0, 3.0);
    let source = SimulatedSource::new(scene.clone()).unwrap();
    let rig = scene.stereo_rig().unwrap();
    let one = run_with_source(&PipelineConfig { threads: 1, ..Default::default() }, &source, &rig).unwrap();
    let many = run_with_source(&PipelineConfig { threads: 3, ..Default::default() }, &source, &rig).unwrap();
    assert_eq!(serde_json::to_string(&one.report).unwrap(), serde_json::to_string(&many.report).unwrap());
}

#[test]
fn self_calibration_repairs_a_perturbed_rig() {
    let scene = SceneConfig {
        bubbles: BubbleConfig { rate_hz: 4.0, diameter: DiameterDistribution::Fixed { diameter_mm: 6.0 }, ..Default::default() },
        ..short_scene(8, 5.0, 4.0)
    };
    let source = SimulatedSource::new(scene.clone()).unwrap();
    let truth = scene.stereo_rig().unwrap();
    let bad = perturb_rig(&truth, [0.596, -0.557, 0.708], [0.0, 3.0, 0.0]);
    let mut config = PipelineConfig::default();
    let plain = run_with_source(&config, &source, &truth).unwrap();
    config.self_calibration.enabled = true;
    let repaired = run_with_source(&config, &source, &bad).unwrap();
    let sc = repaired.report.diagnostics.as_ref().unwrap().self_calibration.clone().unwrap();
    assert!(sc.epipolar_before_px > 3.0, "{sc:?}");
    assert!(sc.epipolar_after_px < 1.0, "{sc:?}");
    assert_eq!(repaired.report.bubble_count, plain.report.bubble_count);
    let ratio = repaired.report.total_volume_ml / plain.report.total_volume_ml;
    assert!((ratio - 1.0).abs() < 0.03, "volume ratio {ratio}");
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bubblestereo"))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

#[test]
fn cli_round_trip_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = short_scene(2, 2.0, 2.0);
    write_json(&d.join("scene.json"), &scene);
    write_json(&d.join("rig.json"), &CalibrationFile::from_rig(&scene.stereo_rig().unwrap(), false));
    let status = cli().args(["simulate", "--config"]).arg(d.join("scene.json")).arg("--out").arg(d.join("sim")).status().unwrap();
    assert!(status.success());
    let again = cli().args(["simulate", "--config"]).arg(d.join("scene.json")).arg("--out").arg(d.join("sim")).output().unwrap();
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("error"));

    std::fs::write(d.join("pipe.json"), r#"{"cam1_dir": "sim", "calibration": "rig.json", "output_dir": "out"}"#).unwrap();
    let status = cli().args(["run", "--config"]).arg(d.join("pipe.json")).status().unwrap();
    assert!(status.success());
    for f in ["report.json", "bubbles.csv", "diameter_histogram.csv", "volume_histogram.csv", "velocity_histogram.csv", "counted.json"] {
        assert!(d.join("out").join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();

    let status = cli().args(["report", "--counted"]).arg(d.join("out/counted.json")).arg("--out").arg(d.join("again")).status().unwrap();
    assert!(status.success());
    let rebuilt: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("again/report.json")).unwrap()).unwrap();
    assert_eq!(rebuilt["bubble_count"], report["bubble_count"]);
    assert_eq!(rebuilt["total_volume_ml"], report["total_volume_ml"]);
    assert_eq!(rebuilt["diameter_histogram_mm"], report["diameter_histogram_mm"]);

    let defaults = cli().args(["defaults", "pipeline"]).output().unwrap();
    let parsed: PipelineConfig = serde_json::from_slice(&defaults.stdout).unwrap();
    assert_eq!(parsed.counting_row, PipelineConfig::default().counting_row);

    let missing = cli().args(["run", "--config"]).arg(d.join("nope.json")).status().unwrap();
    assert_eq!(missing.code(), Some(2));
    std::fs::write(d.join("typo.json"), r#"{"cam1_dir": "sim", "calibraton": "rig.json"}"#).unwrap();
    assert_eq!(cli().args(["run", "--config"]).arg(d.join("typo.json")).status().unwrap().code(), Some(2));

    // without its black frames camera 2 cannot be related to camera 1
    for entry in std::fs::read_dir(d.join("sim")).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_owned();
        if name.starts_with("2_") && (name.starts_with("2_00000000_") || name.starts_with("2_00000200_")) {
            std::fs::remove_file(&p).unwrap();
        }
    }
    let unsync = cli().args(["run", "--config"]).arg(d.join("pipe.json")).output().unwrap();
    assert_eq!(unsync.status.code(), Some(3), "{}", String::from_utf8_lossy(&unsync.stderr));
}
