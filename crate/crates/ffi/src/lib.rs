//! C ABI over the `bubblestereo` toolkit.
//!
//! Every function returns a [`BsStatus`]; on failure the message is available from
//! [`bs_last_error`] on the same thread until the next failing call. Handles are
//! opaque and must be released with their `_free` function. Panics never cross
//! the boundary; they surface as [`BsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use bubblestereo::geometry::{epipolar_distance, CalibrationFile, CameraId, StereoRig};
use bubblestereo::matching::{solve_assignment, Edge};
use bubblestereo::pipeline::{self, PipelineConfig, StreamReport};
use bubblestereo::quadrics::{init_ellipsoid, project_ellipsoid, refine_ellipsoid, Conic2D, EllipseParams, Ellipsoid, LmSettings, MIN_CONTOUR_POINTS};
use bubblestereo::simulator::{generate, SceneConfig};
use bubblestereo::Error;
use nalgebra::{Matrix3, Point2, Point3, Rotation3, Vector3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    /// Bad configuration or calibration input.
    Config = 3,
    /// The two clocks could not be related.
    Unsynchronizable = 4,
    /// A geometric computation had no valid answer.
    Geometry = 5,
    Io = 6,
    Panic = 7,
}

/// Parametric ellipse in ideal pixels; `a ≥ b`, `theta` is the major-axis angle.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsEllipse {
    pub u: f64,
    pub v: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

/// Ellipsoid in camera-1 coordinates (mm). `rotation` is row-major; its columns are the axis directions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsEllipsoid {
    pub center: [f64; 3],
    pub rotation: [f64; 9],
    pub semi_axes: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BsReportSummary {
    pub bubble_count: u64,
    pub duration_s: f64,
    pub total_volume_ml: f64,
    pub flow_rate_ml_s: f64,
    pub mean_diameter_mm: f64,
    pub std_diameter_mm: f64,
    pub mean_rise_velocity_cm_s: f64,
    pub merged_bubbles: u64,
}

/// Opaque stereo rig.
pub struct BsRig(StereoRig);

/// Opaque stream report.
pub struct BsReport(StreamReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BsStatus {
    match e.root() {
        Error::Config(_) | Error::Json(_) => BsStatus::Config,
        Error::Unsynchronizable(_) => BsStatus::Unsynchronizable,
        Error::Io { .. } | Error::Format { .. } => BsStatus::Io,
        _ => BsStatus::Geometry,
    }
}

struct Fail(BsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
            src = s.source();
        }
        Fail(status_of(&e), msg)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BsStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(BsStatus::NullArgument, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(BsStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| invalid(format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or_else(|| null(name))
}

fn camera_id(camera: u32) -> Result<CameraId, Fail> {
    match camera {
        1 => Ok(CameraId::One),
        2 => Ok(CameraId::Two),
        c => Err(invalid(format!("camera must be 1 or 2, got {c}"))),
    }
}

impl From<EllipseParams> for BsEllipse {
    fn from(e: EllipseParams) -> Self {
        Self { u: e.u, v: e.v, a: e.a, b: e.b, theta: e.theta }
    }
}

impl BsEllipse {
    fn to_params(self) -> Result<EllipseParams, Fail> {
        let finite = [self.u, self.v, self.a, self.b, self.theta].iter().all(|x| x.is_finite());
        if !finite || self.a <= 0.0 || self.b <= 0.0 {
            return Err(invalid(format!("ellipse needs finite values and positive semi-axes, got {self:?}")));
        }
        Ok(EllipseParams::new(Point2::new(self.u, self.v), self.a, self.b, self.theta))
    }
}

impl From<&Ellipsoid> for BsEllipsoid {
    fn from(e: &Ellipsoid) -> Self {
        let m = e.rotation.matrix();
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[3 * r + c] = m[(r, c)];
            }
        }
        Self { center: e.center.coords.into(), rotation, semi_axes: e.semi_axes.into() }
    }
}

impl BsEllipsoid {
    fn to_ellipsoid(self) -> Result<Ellipsoid, Fail> {
        if self.semi_axes.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(invalid(format!("semi-axes must be positive, got {:?}", self.semi_axes)));
        }
        let m = Matrix3::from_row_slice(&self.rotation);
        let orthonormal = (m.transpose() * m - Matrix3::identity()).norm() < 1e-6 && m.determinant() > 0.0;
        if !orthonormal {
            return Err(invalid("rotation is not a proper rotation matrix"));
        }
        let rotation = Rotation3::from_matrix_unchecked(m);
        Ok(Ellipsoid::new(Point3::from(self.center), rotation, Vector3::from(self.semi_axes)))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn bs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or come from a `bs_*` function that returns an owned string.
#[no_mangle]
pub unsafe extern "C" fn bs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// The built-in laboratory rig.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_rig_laboratory(out: *mut *mut BsRig) -> BsStatus {
    guard(|| {
        let out = unsafe { out_arg(out, "out") }?;
        *out = Box::into_raw(Box::new(BsRig(StereoRig::laboratory_reference())));
        Ok(())
    })
}

/// Loads a calibration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_rig_load(path: *const c_char, out: *mut *mut BsRig) -> BsStatus {
    guard(|| {
        let path = unsafe { path_arg(path, "path") }?;
        let out = unsafe { out_arg(out, "out") }?;
        let rig = CalibrationFile::load(&path)?.to_rig()?;
        *out = Box::into_raw(Box::new(BsRig(rig)));
        Ok(())
    })
}

/// Writes a calibration file.
///
/// # Safety
/// `rig` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bs_rig_save(rig: *const BsRig, path: *const c_char, recalibrated: bool) -> BsStatus {
    guard(|| {
        let rig = unsafe { ref_arg(rig, "rig") }?;
        let path = unsafe { path_arg(path, "path") }?;
        CalibrationFile::from_rig(&rig.0, recalibrated).save(&path)?;
        Ok(())
    })
}

/// # Safety
/// `rig` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn bs_rig_free(rig: *mut BsRig) {
    if !rig.is_null() {
        drop(unsafe { Box::from_raw(rig) });
    }
}

/// Symmetric epipolar distance (px) of an ideal-pixel correspondence.
///
/// # Safety
/// `rig` must be a live handle, `x1`/`x2` point to two doubles, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_rig_epipolar_distance(rig: *const BsRig, x1: *const [f64; 2], x2: *const [f64; 2], out: *mut f64) -> BsStatus {
    guard(|| {
        let rig = unsafe { ref_arg(rig, "rig") }?;
        let (x1, x2) = unsafe { (ref_arg(x1, "x1")?, ref_arg(x2, "x2")?) };
        let out = unsafe { out_arg(out, "out") }?;
        *out = epipolar_distance(&rig.0, Point2::from(*x1), Point2::from(*x2));
        Ok(())
    })
}

/// Point closest to both optical axes, camera-1 frame (mm).
///
/// # Safety
/// `rig` must be a live handle and `out` point to three writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bs_rig_axes_crossing(rig: *const BsRig, out: *mut [f64; 3]) -> BsStatus {
    guard(|| {
        let rig = unsafe { ref_arg(rig, "rig") }?;
        let out = unsafe { out_arg(out, "out") }?;
        *out = rig.0.axes_crossing()?.coords.into();
        Ok(())
    })
}

/// Outline of an ellipsoid in one camera (1 or 2), ideal pixels.
///
/// # Safety
/// Pointers must be valid; `rig` a live handle.
#[no_mangle]
pub unsafe extern "C" fn bs_project_ellipsoid(rig: *const BsRig, ellipsoid: *const BsEllipsoid, camera: u32, out: *mut BsEllipse) -> BsStatus {
    guard(|| {
        let rig = unsafe { ref_arg(rig, "rig") }?;
        let e = unsafe { ref_arg(ellipsoid, "ellipsoid") }?.to_ellipsoid()?;
        let out = unsafe { out_arg(out, "out") }?;
        let conic = project_ellipsoid(&rig.0.camera(camera_id(camera)?), &e)?;
        *out = conic.to_ellipse().into();
        Ok(())
    })
}

/// Ellipsoid from one outline per camera: closed-form start, then least-squares
/// refinement against `samples` points of each outline. `rms_px` may be null.
///
/// # Safety
/// Pointers must be valid; `rig` a live handle.
#[no_mangle]
pub unsafe extern "C" fn bs_reconstruct(
    rig: *const BsRig,
    ellipse1: *const BsEllipse,
    ellipse2: *const BsEllipse,
    samples: usize,
    out: *mut BsEllipsoid,
    rms_px: *mut f64,
) -> BsStatus {
    guard(|| {
        let rig = unsafe { ref_arg(rig, "rig") }?;
        let e1 = unsafe { ref_arg(ellipse1, "ellipse1") }?.to_params()?;
        let e2 = unsafe { ref_arg(ellipse2, "ellipse2") }?.to_params()?;
        let out = unsafe { out_arg(out, "out") }?;
        if samples < MIN_CONTOUR_POINTS {
            return Err(invalid(format!("samples must be at least {MIN_CONTOUR_POINTS}, got {samples}")));
        }
        let init = init_ellipsoid(&rig.0, &Conic2D::from_ellipse(&e1), &Conic2D::from_ellipse(&e2))?;
        let refined = refine_ellipsoid(&rig.0, &init, &e1.sample(samples), &e2.sample(samples), &LmSettings::default())?;
        *out = (&refined.ellipsoid).into();
        if let Some(r) = unsafe { rms_px.as_mut() } {
            *r = refined.rms(2 * samples);
        }
        Ok(())
    })
}

/// Diameter of the sphere with the ellipsoid's volume, mm.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_equivalent_diameter(ellipsoid: *const BsEllipsoid, out: *mut f64) -> BsStatus {
    guard(|| {
        let e = unsafe { ref_arg(ellipsoid, "ellipsoid") }?.to_ellipsoid()?;
        *unsafe { out_arg(out, "out") }? = e.equivalent_diameter();
        Ok(())
    })
}

/// Minimum-cost maximum-cardinality assignment on a dense `rows × cols` cost
/// matrix (row-major). Non-finite entries mark forbidden pairs. `row_to_col[i]`
/// receives the matched column or -1; `total_cost` may be null.
///
/// # Safety
/// `costs` must hold `rows * cols` doubles and `row_to_col` `rows` writable slots.
#[no_mangle]
pub unsafe extern "C" fn bs_solve_assignment(costs: *const f64, rows: usize, cols: usize, row_to_col: *mut i64, total_cost: *mut f64) -> BsStatus {
    guard(|| {
        let n = rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))?;
        if n > 0 && costs.is_null() {
            return Err(null("costs"));
        }
        if rows > 0 && row_to_col.is_null() {
            return Err(null("row_to_col"));
        }
        let costs = if n == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(costs, n) } };
        let mut edges = Vec::new();
        for (k, &c) in costs.iter().enumerate() {
            if c.is_finite() {
                if c < 0.0 {
                    return Err(invalid(format!("cost {c} at ({}, {}) is negative", k / cols, k % cols)));
                }
                edges.push(Edge { left: k / cols, right: k % cols, cost: c });
            }
        }
        let asg = solve_assignment(&edges, rows, cols);
        if rows > 0 {
            let out = unsafe { std::slice::from_raw_parts_mut(row_to_col, rows) };
            out.fill(-1);
            for &(i, j) in &asg.pairs {
                out[i] = j as i64;
            }
        }
        if let Some(t) = unsafe { total_cost.as_mut() } {
            *t = asg.total_cost;
        }
        Ok(())
    })
}

/// Renders a synthetic scene into `out_dir` (which must be empty or absent).
/// `scene_config` may be null for the defaults.
///
/// # Safety
/// Strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bs_simulate(scene_config: *const c_char, out_dir: *const c_char) -> BsStatus {
    guard(|| {
        let cfg = if scene_config.is_null() {
            SceneConfig::default()
        } else {
            SceneConfig::load(&unsafe { path_arg(scene_config, "scene_config") }?)?
        };
        let out = unsafe { path_arg(out_dir, "out_dir") }?;
        generate(&cfg, &out)?;
        Ok(())
    })
}

/// Runs the whole pipeline from a JSON config file.
///
/// # Safety
/// `config` must be NUL-terminated and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_run(config: *const c_char, out: *mut *mut BsReport) -> BsStatus {
    guard(|| {
        let path = unsafe { path_arg(config, "config") }?;
        let out = unsafe { out_arg(out, "out") }?;
        let cfg = PipelineConfig::load(&path)?;
        let result = pipeline::run(&cfg)?;
        *out = Box::into_raw(Box::new(BsReport(result.report)));
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid; `report` a live handle.
#[no_mangle]
pub unsafe extern "C" fn bs_report_summary(report: *const BsReport, out: *mut BsReportSummary) -> BsStatus {
    guard(|| {
        let r = &unsafe { ref_arg(report, "report") }?.0;
        *unsafe { out_arg(out, "out") }? = BsReportSummary {
            bubble_count: r.bubble_count as u64,
            duration_s: r.duration_s,
            total_volume_ml: r.total_volume_ml,
            flow_rate_ml_s: r.flow_rate_ml_s,
            mean_diameter_mm: r.equivalent_diameter_mm.mean,
            std_diameter_mm: r.equivalent_diameter_mm.std,
            mean_rise_velocity_cm_s: r.rise_velocity_cm_s.mean,
            merged_bubbles: r.merged_bubbles as u64,
        };
        Ok(())
    })
}

/// The full report as JSON; release with [`bs_string_free`].
///
/// # Safety
/// Pointers must be valid; `report` a live handle.
#[no_mangle]
pub unsafe extern "C" fn bs_report_json(report: *const BsReport, out: *mut *mut c_char) -> BsStatus {
    guard(|| {
        let r = &unsafe { ref_arg(report, "report") }?.0;
        let out = unsafe { out_arg(out, "out") }?;
        let json = serde_json::to_string_pretty(r).map_err(Error::from)?;
        *out = CString::new(json).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// Writes report.json and the CSV files into `dir`.
///
/// # Safety
/// `report` must be a live handle and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bs_report_write(report: *const BsReport, dir: *const c_char) -> BsStatus {
    guard(|| {
        let r = &unsafe { ref_arg(report, "report") }?.0;
        let dir = unsafe { path_arg(dir, "dir") }?;
        r.write_all(Path::new(&dir))?;
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn bs_report_free(report: *mut BsReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}
