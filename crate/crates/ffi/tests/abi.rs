use std::ffi::{CStr, CString};
use std::ptr;

use bubblestereo::geometry::{CameraId, StereoRig};
use bubblestereo::simulator::{load_ground_truth, BubbleConfig, DiameterDistribution, SceneConfig, GROUND_TRUTH_FILE};
use bubblestereo_ffi::*;

fn last_error() -> String {
    let p = bs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

struct Rig(*mut BsRig);

impl Drop for Rig {
    fn drop(&mut self) {
        unsafe { bs_rig_free(self.0) }
    }
}

fn lab() -> Rig {
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { bs_rig_laboratory(&mut r) }, BsStatus::Ok);
    Rig(r)
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(bs_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported_not_dereferenced() {
    assert_eq!(unsafe { bs_rig_laboratory(ptr::null_mut()) }, BsStatus::NullArgument);
    assert!(last_error().contains("out"));
    let mut d = 0.0;
    let x = [0.0, 0.0];
    assert_eq!(unsafe { bs_rig_epipolar_distance(ptr::null(), &x, &x, &mut d) }, BsStatus::NullArgument);
    assert_eq!(unsafe { bs_run(ptr::null(), ptr::null_mut()) }, BsStatus::NullArgument);
    unsafe {
        bs_rig_free(ptr::null_mut());
        bs_report_free(ptr::null_mut());
        bs_string_free(ptr::null_mut());
    }
}

#[test]
fn axes_crossing_and_epipolar_distance_agree_with_the_core() {
    let rig = lab();
    let core = StereoRig::laboratory_reference();
    let mut c = [0.0; 3];
    assert_eq!(unsafe { bs_rig_axes_crossing(rig.0, &mut c) }, BsStatus::Ok);
    let want = core.axes_crossing().unwrap();
    assert!((nalgebra::Point3::from(c) - want).norm() < 1e-12);

    let x = want + nalgebra::Vector3::new(3.0, -7.0, 2.0);
    let p1 = core.camera(CameraId::One).project_ideal(&x).unwrap();
    let p2 = core.camera(CameraId::Two).project_ideal(&x).unwrap();
    let mut d = f64::NAN;
    assert_eq!(unsafe { bs_rig_epipolar_distance(rig.0, &[p1.x, p1.y], &[p2.x, p2.y], &mut d) }, BsStatus::Ok);
    assert!(d < 1e-6, "{d}");
    assert_eq!(unsafe { bs_rig_epipolar_distance(rig.0, &[p1.x, p1.y], &[p2.x, p2.y + 10.0], &mut d) }, BsStatus::Ok);
    assert!(d > 1.0);
}

#[test]
fn projected_outlines_reconstruct_the_ellipsoid() {
    let rig = lab();
    let mut c = [0.0; 3];
    assert_eq!(unsafe { bs_rig_axes_crossing(rig.0, &mut c) }, BsStatus::Ok);
    let (ca, sa) = (0.3f64.cos(), 0.3f64.sin());
    let truth = BsEllipsoid {
        center: [c[0] + 4.0, c[1] - 6.0, c[2] + 3.0],
        rotation: [ca, 0.0, sa, 0.0, 1.0, 0.0, -sa, 0.0, ca],
        semi_axes: [3.4, 2.6, 3.4],
    };
    let mut e1 = BsEllipse { u: 0.0, v: 0.0, a: 0.0, b: 0.0, theta: 0.0 };
    let mut e2 = e1;
    assert_eq!(unsafe { bs_project_ellipsoid(rig.0, &truth, 1, &mut e1) }, BsStatus::Ok);
    assert_eq!(unsafe { bs_project_ellipsoid(rig.0, &truth, 2, &mut e2) }, BsStatus::Ok);
    assert_eq!(unsafe { bs_project_ellipsoid(rig.0, &truth, 3, &mut e2) }, BsStatus::InvalidArgument);

    let mut got = truth;
    let mut rms = f64::NAN;
    assert_eq!(unsafe { bs_reconstruct(rig.0, &e1, &e2, 64, &mut got, &mut rms) }, BsStatus::Ok);
    assert!(rms < 1e-3, "{rms}");
    let (mut d_true, mut d_got) = (0.0, 0.0);
    assert_eq!(unsafe { bs_equivalent_diameter(&truth, &mut d_true) }, BsStatus::Ok);
    assert_eq!(unsafe { bs_equivalent_diameter(&got, &mut d_got) }, BsStatus::Ok);
    assert!((d_true - 2.0 * (3.4f64 * 2.6 * 3.4).cbrt()).abs() < 1e-12);
    assert!((d_got - d_true).abs() < 1e-3 * d_true, "{d_got} vs {d_true}");
    for k in 0..3 {
        assert!((got.center[k] - truth.center[k]).abs() < 1e-2);
    }

    assert_eq!(unsafe { bs_reconstruct(rig.0, &e1, &e2, 3, &mut got, ptr::null_mut()) }, BsStatus::InvalidArgument);
    let flat = BsEllipse { b: 0.0, ..e1 };
    assert_eq!(unsafe { bs_reconstruct(rig.0, &flat, &e2, 64, &mut got, ptr::null_mut()) }, BsStatus::InvalidArgument);
    let skew = BsEllipsoid { rotation: [1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], ..truth };
    assert_eq!(unsafe { bs_project_ellipsoid(rig.0, &skew, 1, &mut e1) }, BsStatus::InvalidArgument);
}

fn brute_force(costs: &[f64], n: usize) -> f64 {
    fn go(costs: &[f64], n: usize, row: usize, used: &mut [bool]) -> f64 {
        if row == n {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                best = best.min(costs[row * n + j] + go(costs, n, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(costs, n, 0, &mut vec![false; n])
}

#[test]
fn dense_assignment_matches_exhaustive_search() {
    let costs = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
    let mut rows = [0i64; 3];
    let mut total = f64::NAN;
    assert_eq!(unsafe { bs_solve_assignment(costs.as_ptr(), 3, 3, rows.as_mut_ptr(), &mut total) }, BsStatus::Ok);
    assert_eq!(total, brute_force(&costs, 3));
    let sum: f64 = rows.iter().enumerate().map(|(i, &j)| costs[i * 3 + j as usize]).sum();
    assert_eq!(sum, total);
}

#[test]
fn forbidden_pairs_leave_rows_unmatched() {
    let inf = f64::INFINITY;
    let costs = [1.0, inf, inf, inf, f64::NAN, inf];
    let mut rows = [7i64; 2];
    assert_eq!(unsafe { bs_solve_assignment(costs.as_ptr(), 2, 3, rows.as_mut_ptr(), ptr::null_mut()) }, BsStatus::Ok);
    assert_eq!(rows, [0, -1]);
    let negative = [-1.0];
    assert_eq!(unsafe { bs_solve_assignment(negative.as_ptr(), 1, 1, rows.as_mut_ptr(), ptr::null_mut()) }, BsStatus::InvalidArgument);
    assert_eq!(unsafe { bs_solve_assignment(ptr::null(), 0, 0, ptr::null_mut(), ptr::null_mut()) }, BsStatus::Ok);
}

#[test]
fn calibration_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = cpath(&dir.path().join("rig.json"));
    let rig = lab();
    assert_eq!(unsafe { bs_rig_save(rig.0, path.as_ptr(), false) }, BsStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { bs_rig_load(path.as_ptr(), &mut loaded) }, BsStatus::Ok);
    let loaded = Rig(loaded);
    let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
    unsafe {
        bs_rig_axes_crossing(rig.0, &mut a);
        bs_rig_axes_crossing(loaded.0, &mut b);
    }
    for k in 0..3 {
        assert!((a[k] - b[k]).abs() < 1e-9);
    }
    let missing = cpath(&dir.path().join("absent.json"));
    let mut r = ptr::null_mut();
    assert_ne!(unsafe { bs_rig_load(missing.as_ptr(), &mut r) }, BsStatus::Ok);
    assert!(r.is_null());
    assert!(last_error().contains("absent.json"));
}

#[test]
fn simulate_then_run_counts_the_rendered_bubbles() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneConfig {
        duration_s: 2.5,
        black_frame_interval: 100,
        bubbles: BubbleConfig { rate_hz: 2.0, diameter: DiameterDistribution::Fixed { diameter_mm: 5.0 }, ..Default::default() },
        ..Default::default()
    };
    let scene_path = dir.path().join("scene.json");
    std::fs::write(&scene_path, serde_json::to_string(&scene).unwrap()).unwrap();
    let rig = lab();
    let rig_path = dir.path().join("rig.json");
    assert_eq!(unsafe { bs_rig_save(rig.0, cpath(&rig_path).as_ptr(), false) }, BsStatus::Ok);
    let sim = dir.path().join("sim");
    assert_eq!(unsafe { bs_simulate(cpath(&scene_path).as_ptr(), cpath(&sim).as_ptr()) }, BsStatus::Ok);
    assert_eq!(unsafe { bs_simulate(cpath(&scene_path).as_ptr(), cpath(&sim).as_ptr()) }, BsStatus::Config);

    let truth = load_ground_truth(&sim.join(GROUND_TRUTH_FILE)).unwrap();
    let expected = truth.crossings(400.0).len();
    assert!(expected >= 2);

    let config = dir.path().join("pipeline.json");
    std::fs::write(&config, r#"{"cam1_dir": "sim", "calibration": "rig.json", "background_window": 61}"#).unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { bs_run(cpath(&config).as_ptr(), &mut report) }, BsStatus::Ok, "{}", last_error());
    let mut s = BsReportSummary::default();
    assert_eq!(unsafe { bs_report_summary(report, &mut s) }, BsStatus::Ok);
    assert_eq!(s.bubble_count as usize, expected);
    assert!((s.mean_diameter_mm - 5.0).abs() < 0.15, "{}", s.mean_diameter_mm);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { bs_report_json(report, &mut json) }, BsStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { bs_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["bubble_count"].as_u64(), Some(s.bubble_count));

    let out = dir.path().join("out");
    assert_eq!(unsafe { bs_report_write(report, cpath(&out).as_ptr()) }, BsStatus::Ok);
    assert!(out.join("report.json").is_file());
    unsafe { bs_report_free(report) };

    std::fs::write(&config, r#"{"cam1_dir": "nowhere", "calibration": "rig.json"}"#).unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { bs_run(cpath(&config).as_ptr(), &mut report) }, BsStatus::Config);
    assert!(report.is_null());
}

#[test]
fn header_declares_every_exported_function() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/bubblestereo.h")).unwrap();
    let source = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let names: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(names.len() >= 15, "{names:?}");
    for n in names {
        assert!(header.contains(&format!("{n}(")), "{n} missing from the header");
    }
    for t in ["typedef struct BsRig BsRig;", "typedef struct BsReport BsReport;", "BS_STATUS_OK = 0"] {
        assert!(header.contains(t), "{t}");
    }
}
