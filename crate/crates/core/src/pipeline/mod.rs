//! End-to-end processing: synchronize, remove backgrounds, detect, match,
//! reconstruct, optionally self-calibrate, track, count and aggregate.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{HistogramParams, PipelineConfig, ReconstructionParams, SelfCalConfig};
pub use report::{aggregate, CountedDump, Diagnostics, Histogram, SelfCalSummary, StreamReport, Summary};

use crate::error::{Error, Result};
use crate::geometry::{epipolar_distance, CalibrationFile, CameraId, StereoRig};
use crate::imaging::{
    detect_bubbles, for_each_with_background, is_black_frame, remove_background, synchronize, BBox, BubbleDetection,
    DirectorySource, Frame, FrameMeta, FrameSource, SyncResult, TimedSequence, Undistorter,
};
use crate::matching::{match_detections, MatchParams};
use crate::quadrics::{
    init_ellipsoid, refine_ellipsoid, self_calibrate, ContourSampling, Ellipsoid, SelfCalibration, SilhouettePair,
};
use crate::tracking::{count_at_surface, CountedBubble, CountingSurface, Observation, Track, Tracker};

/// Frames handed to the detector at once.
const DETECT_BATCH: usize = 16;

/// Per-camera result of background removal and detection.
#[derive(Debug, Clone, Default)]
pub struct CameraPass {
    pub metas: Vec<FrameMeta>,
    pub black: Vec<u64>,
    pub detections: BTreeMap<u64, Vec<BubbleDetection>>,
    pub width: usize,
    pub height: usize,
}

impl CameraPass {
    pub fn detection_count(&self) -> usize {
        self.detections.values().map(Vec::len).sum()
    }

    fn at(&self, index: u64) -> &[BubbleDetection] {
        self.detections.get(&index).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// A bubble reconstructed from one matched detection pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstructed {
    pub det1: usize,
    pub det2: usize,
    pub ellipsoid: Ellipsoid,
    /// Camera-1 box, used by the tracker.
    pub bbox: BBox,
    pub merged: bool,
    pub rms_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub index1: u64,
    pub index2: u64,
    pub time_s: f64,
    pub bubbles: Vec<Reconstructed>,
    pub failures: usize,
}

/// Everything a run produced; `report` is what gets written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: StreamReport,
    pub rig: StereoRig,
    pub sync: SyncResult,
    pub passes: [CameraPass; 2],
    pub pairs: Vec<PairResult>,
    pub tracks: Vec<Track>,
    pub counted: Vec<CountedBubble>,
    pub self_calibration: Option<SelfCalibration>,
}

fn in_stage<T>(r: Result<T>, stage: &'static str, frame: Option<u64>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => e.in_stage(stage, frame),
    })
}

/// Streams one camera through black-frame screening, sliding-median background
/// removal and detection.
pub fn process_camera(source: &dyn FrameSource, camera: CameraId, rig: &StereoRig, config: &PipelineConfig) -> Result<CameraPass> {
    let mut pass = CameraPass::default();
    let frames = in_stage(source.frames(camera), "ingest", None)?;
    let mut metas = Vec::new();
    let mut black = Vec::new();
    let screened = frames.filter(|r| match r {
        Ok(f) => {
            metas.push(f.meta);
            if is_black_frame(f) {
                black.push(f.meta.index);
                false
            } else {
                true
            }
        }
        Err(_) => true,
    });
    let mut undistorter: Option<Undistorter> = None;
    let mut size = (0, 0);
    let mut batch: Vec<Frame> = Vec::with_capacity(DETECT_BATCH);
    let mut detections = BTreeMap::new();
    let flush = |batch: &mut Vec<Frame>, out: &mut BTreeMap<u64, Vec<BubbleDetection>>| {
        let found: Vec<(u64, Vec<BubbleDetection>)> = batch
            .par_iter()
            .map(|fg| {
                let dets = detect_bubbles(fg, &config.detect)
                    .into_iter()
                    .filter(|d| inside(&d.bbox, fg.width, fg.height, config.border_margin_px))
                    .collect();
                (fg.meta.index, dets)
            })
            .collect();
        for (k, d) in found {
            if !d.is_empty() {
                out.insert(k, d);
            }
        }
        batch.clear();
    };
    let streamed = for_each_with_background(screened, config.background_window, |frame, bg| {
        let und = undistorter.get_or_insert_with(|| {
            size = (frame.width, frame.height);
            Undistorter::new(rig.intrinsics(camera), frame.width, frame.height)
        });
        let fg = in_stage(remove_background(frame, bg, und), "background", Some(frame.meta.index))?;
        batch.push(fg);
        if batch.len() == DETECT_BATCH {
            flush(&mut batch, &mut detections);
        }
        Ok(())
    });
    in_stage(streamed, "background", None)?;
    flush(&mut batch, &mut detections);
    pass.metas = metas;
    pass.black = black;
    pass.detections = detections;
    (pass.width, pass.height) = size;
    Ok(pass)
}

fn inside(b: &BBox, w: usize, h: usize, margin: f64) -> bool {
    b.u_min >= margin && b.v_min >= margin && b.u_max <= w as f64 - 1.0 - margin && b.v_max <= h as f64 - 1.0 - margin
}

fn silhouette(d: &BubbleDetection, params: &ReconstructionParams) -> Vec<nalgebra::Point2<f64>> {
    match params.sampling {
        ContourSampling::FittedEllipse => d.ellipse.sample(params.samples),
        ContourSampling::RawContour => d.contour.clone(),
    }
}

/// Matches the detections of one synchronized pair and reconstructs each match.
pub fn reconstruct_pair(
    rig: &StereoRig,
    d1: &[BubbleDetection],
    d2: &[BubbleDetection],
    matching: &MatchParams,
    params: &ReconstructionParams,
) -> (Vec<Reconstructed>, usize) {
    let assignment = match_detections(rig, d1, d2, matching);
    let mut out = Vec::new();
    let mut failures = 0;
    for &(i, j) in &assignment.pairs {
        let (a, b) = (&d1[i], &d2[j]);
        let s1 = silhouette(a, params);
        let s2 = silhouette(b, params);
        let result = init_ellipsoid(rig, &a.conic(), &b.conic())
            .and_then(|e0| refine_ellipsoid(rig, &e0, &s1, &s2, &params.lm));
        match result {
            Ok(r) => out.push(Reconstructed {
                det1: i,
                det2: j,
                ellipsoid: r.ellipsoid,
                bbox: a.bbox,
                merged: a.merged || b.merged,
                rms_px: r.rms(s1.len() + s2.len()),
            }),
            Err(_) => failures += 1,
        }
    }
    (out, failures)
}

/// Usable pairs: both frames present and neither black.
fn usable_pairs(sync: &SyncResult, passes: &[CameraPass; 2]) -> Vec<(u64, u64, i64)> {
    let black1: std::collections::HashSet<u64> = passes[0].black.iter().copied().collect();
    let black2: std::collections::HashSet<u64> = passes[1].black.iter().copied().collect();
    sync.pairs
        .iter()
        .filter(|p| !black1.contains(&p.left.index) && !black2.contains(&p.right.index))
        .map(|p| (p.left.index, p.right.index, p.pair_time_us))
        .collect()
}

fn reconstruct_all(rig: &StereoRig, pairs: &[(u64, u64, i64)], passes: &[CameraPass; 2], t0: i64, config: &PipelineConfig) -> Vec<PairResult> {
    pairs
        .par_iter()
        .map(|&(i1, i2, t)| {
            let (bubbles, failures) =
                reconstruct_pair(rig, passes[0].at(i1), passes[1].at(i2), &config.matching, &config.reconstruction);
            PairResult { index1: i1, index2: i2, time_s: (t - t0) as f64 * 1e-6, bubbles, failures }
        })
        .collect()
}

/// Silhouette pairs gathered under a wide epipolar gate from the first pairs.
pub fn collect_calibration_bubbles(
    rig: &StereoRig,
    pairs: &[(u64, u64, i64)],
    passes: &[CameraPass; 2],
    config: &PipelineConfig,
) -> Vec<SilhouettePair> {
    let sc = &config.self_calibration;
    let wide = MatchParams { gate_px: sc.gate_px, ..config.matching.clone() };
    let mut all = Vec::new();
    for &(i1, i2, _) in pairs.iter().take(sc.pairs) {
        let (d1, d2) = (passes[0].at(i1), passes[1].at(i2));
        // ambiguous frames are left out: the rig is not trusted yet
        if d1.len() != 1 || d2.len() != 1 || d1[0].merged || d2[0].merged {
            continue;
        }
        if match_detections(rig, d1, d2, &wide).pairs.len() != 1 {
            continue;
        }
        all.push(SilhouettePair {
            view1: silhouette(&d1[0], &config.reconstruction),
            view2: silhouette(&d2[0], &config.reconstruction),
        });
    }
    if all.len() <= sc.max_observations {
        return all;
    }
    let n = all.len();
    (0..sc.max_observations).map(|k| all[k * n / sc.max_observations].clone()).collect()
}

fn mean_center_epipolar(rig: &StereoRig, obs: &[SilhouettePair]) -> f64 {
    let centers = |pts: &[nalgebra::Point2<f64>]| {
        crate::quadrics::fit_ellipse(pts).ok().map(|c| c.to_ellipse().center())
    };
    let d: Vec<f64> = obs
        .iter()
        .filter_map(|o| Some(epipolar_distance(rig, centers(&o.view1)?, centers(&o.view2)?)))
        .collect();
    if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Processes both sequences of `source` with the initial calibration `rig0`.
pub fn run_with_source(config: &PipelineConfig, source: &dyn FrameSource, rig0: &StereoRig) -> Result<RunOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(config, source, rig0))
}

/// Both camera passes and their synchronization.
fn front_end(config: &PipelineConfig, source: &dyn FrameSource, rig0: &StereoRig) -> Result<([CameraPass; 2], SyncResult)> {
    let pass1 = process_camera(source, CameraId::One, rig0, config)?;
    let pass2 = process_camera(source, CameraId::Two, rig0, config)?;
    let sync = in_stage(
        synchronize(
            &TimedSequence { frames: pass1.metas.clone(), black: pass1.black.clone() },
            &TimedSequence { frames: pass2.metas.clone(), black: pass2.black.clone() },
        ),
        "synchronize",
        None,
    )?;
    Ok(([pass1, pass2], sync))
}

/// Camera-1 image displacement per frame of a bubble rising at `speed_cm_s` through the axes crossing.
fn rise_prior_px(rig: &StereoRig, up: &[f64; 3], speed_cm_s: f64, frame_s: f64) -> Option<[f64; 2]> {
    let up = Vector3::from(*up).try_normalize(0.0)?;
    let x0 = rig.axes_crossing().ok()?;
    let x1 = x0 + up * (speed_cm_s * 10.0 * frame_s);
    let cam = rig.camera(CameraId::One);
    let (p0, p1) = (cam.project_ideal(&x0).ok()?, cam.project_ideal(&x1).ok()?);
    let d = p1 - p0;
    (d.x.is_finite() && d.y.is_finite()).then_some([d.x, d.y])
}

fn run_inner(config: &PipelineConfig, source: &dyn FrameSource, rig0: &StereoRig) -> Result<RunOutput> {
    let (passes, sync) = front_end(config, source, rig0)?;
    let surface = in_stage(CountingSurface::new(config.counting_row, passes[0].height.max(1)), "count", None)?;
    let pairs = usable_pairs(&sync, &passes);
    let t0 = passes[0].metas.first().map(|m| m.timestamp_us).unwrap_or(0);

    let mut rig = *rig0;
    let mut selfcal = None;
    let mut selfcal_summary = None;
    if config.self_calibration.enabled {
        let obs = collect_calibration_bubbles(&rig, &pairs, &passes, config);
        let cal = in_stage(self_calibrate(&rig, &obs, &config.self_calibration.settings), "self-calibrate", None)?;
        selfcal_summary = Some(SelfCalSummary {
            observations: obs.len(),
            epipolar_before_px: mean_center_epipolar(&rig, &obs),
            epipolar_after_px: mean_center_epipolar(&cal.rig, &obs),
            converged: cal.converged,
        });
        rig = cal.rig;
        selfcal = Some(cal);
    }

    let results = reconstruct_all(&rig, &pairs, &passes, t0, config);

    let mut tracker_params = config.tracker.clone();
    if let Some(speed) = config.rise_prior_cm_s {
        if let Some(v) = rise_prior_px(&rig, &config.count.up, speed, sync.frame_interval_us * 1e-6) {
            tracker_params.kalman.initial_velocity = v;
        }
    }
    let mut tracker = Tracker::new(tracker_params);
    for p in &results {
        let obs = p
            .bubbles
            .iter()
            .map(|b| Observation { bbox: b.bbox, ellipsoid: b.ellipsoid, merged: b.merged })
            .collect();
        tracker.step(p.index1, p.time_s, obs);
    }
    let tracks = tracker.finish();
    let counted = count_at_surface(&tracks, &surface, &config.count);

    let metas = &passes[0].metas;
    let duration_s = match (metas.first(), metas.last()) {
        (Some(a), Some(b)) => (b.timestamp_us - a.timestamp_us) as f64 * 1e-6 + sync.frame_interval_us * 1e-6,
        _ => 0.0,
    };
    let mut report = in_stage(aggregate(&counted, duration_s, &config.histograms), "aggregate", None)?;
    report.start_time_us = t0;
    let mut merged_frames: Vec<u64> =
        results.iter().filter(|p| p.bubbles.iter().any(|b| b.merged)).map(|p| p.index1).collect();
    merged_frames.dedup();
    report.diagnostics = Some(Diagnostics {
        frames: [passes[0].metas.len(), passes[1].metas.len()],
        black_frames: [passes[0].black.len(), passes[1].black.len()],
        pairs: pairs.len(),
        clock_offset_us: sync.offset_us,
        clock_drift_us_per_s: sync.drift_us_per_s,
        drops: sync.drops.clone(),
        detections: [passes[0].detection_count(), passes[1].detection_count()],
        matched: results.iter().map(|p| p.bubbles.len() + p.failures).sum(),
        reconstruction_failures: results.iter().map(|p| p.failures).sum(),
        tracks: tracks.len(),
        merged_frames,
        self_calibration: selfcal_summary,
    });
    Ok(RunOutput { report, rig, sync, passes, pairs: results, tracks, counted, self_calibration: selfcal })
}

/// Loads the sequences and calibration named in `config` and processes them.
pub fn run(config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    config.validate_paths()?;
    let rig = CalibrationFile::load(&config.calibration)
        .and_then(|c| c.to_rig())
        .map_err(|e| Error::Config(format!("{}: {e}", config.calibration.display())))?;
    let source = in_stage(DirectorySource::open(&config.cam1_dir, config.cam2_dir()), "ingest", None)?;
    run_with_source(config, &source, &rig)
}

/// Writes the report files plus `counted.json` (the input format of `aggregate`).
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<()> {
    out.report.write_all(dir)?;
    let dump = CountedDump { start_time_us: out.report.start_time_us, duration_s: out.report.duration_s, bubbles: out.counted.clone() };
    let path = dir.join("counted.json");
    std::fs::write(&path, serde_json::to_string_pretty(&dump)? + "\n").map_err(|e| Error::io(&path, e))
}

/// Self-calibration only: returns the refined rig.
pub fn recalibrate(config: &PipelineConfig, source: &dyn FrameSource, rig0: &StereoRig) -> Result<(StereoRig, SelfCalSummary)> {
    config.validate()?;
    let (passes, sync) = front_end(config, source, rig0)?;
    let pairs = usable_pairs(&sync, &passes);
    let obs = collect_calibration_bubbles(rig0, &pairs, &passes, config);
    let cal = in_stage(self_calibrate(rig0, &obs, &config.self_calibration.settings), "self-calibrate", None)?;
    let summary = SelfCalSummary {
        observations: obs.len(),
        epipolar_before_px: mean_center_epipolar(rig0, &obs),
        epipolar_after_px: mean_center_epipolar(&cal.rig, &obs),
        converged: cal.converged,
    };
    Ok((cal.rig, summary))
}

/// Process exit code for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) => 2,
        Error::Unsynchronizable(_) => 3,
        _ => 4,
    }
}
