use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DetectParams, DEFAULT_WINDOW};
use crate::matching::MatchParams;
use crate::quadrics::{ContourSampling, LmSettings, SelfCalSettings, DEFAULT_SAMPLES, MIN_CONTOUR_POINTS};
use crate::tracking::{CountParams, TrackerParams};

/// Everything `run` needs. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cam1_dir: PathBuf,
    /// Defaults to `cam1_dir` (both cameras in one directory).
    pub cam2_dir: Option<PathBuf>,
    pub calibration: PathBuf,
    pub output_dir: PathBuf,
    /// Camera-1 image row of the counting surface.
    pub counting_row: f64,
    pub background_window: usize,
    pub detect: DetectParams,
    /// Detections whose box comes closer than this to the image border are dropped.
    pub border_margin_px: f64,
    pub matching: MatchParams,
    pub reconstruction: ReconstructionParams,
    pub self_calibration: SelfCalConfig,
    pub tracker: TrackerParams,
    /// Expected rise speed; seeds the velocity of new tracks (converted to px/frame at the axes crossing).
    /// `null` keeps `tracker.kalman.initial_velocity`.
    pub rise_prior_cm_s: Option<f64>,
    pub count: CountParams,
    pub histograms: HistogramParams,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cam1_dir: PathBuf::new(),
            cam2_dir: None,
            calibration: PathBuf::new(),
            output_dir: PathBuf::from("report"),
            counting_row: 400.0,
            background_window: DEFAULT_WINDOW,
            detect: DetectParams::default(),
            border_margin_px: 2.0,
            matching: MatchParams::default(),
            reconstruction: ReconstructionParams::default(),
            self_calibration: SelfCalConfig::default(),
            tracker: TrackerParams::default(),
            rise_prior_cm_s: Some(28.0),
            count: CountParams::default(),
            histograms: HistogramParams::default(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionParams {
    pub sampling: ContourSampling,
    /// Points per view when sampling the fitted ellipse.
    pub samples: usize,
    pub lm: LmSettings,
}

impl Default for ReconstructionParams {
    fn default() -> Self {
        Self { sampling: ContourSampling::FittedEllipse, samples: DEFAULT_SAMPLES, lm: LmSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfCalConfig {
    pub enabled: bool,
    /// Synchronized pairs from the start of the sequence that feed the adjustment.
    pub pairs: usize,
    /// Epipolar gate for collecting bubbles under the uncorrected rig, px.
    pub gate_px: f64,
    /// Bubble observations used, spread evenly over the collected ones.
    pub max_observations: usize,
    pub settings: SelfCalSettings,
}

impl Default for SelfCalConfig {
    fn default() -> Self {
        Self { enabled: false, pairs: 500, gate_px: 60.0, max_observations: 200, settings: SelfCalSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramParams {
    pub diameter_bin_mm: f64,
    pub volume_bin_ml: f64,
    pub velocity_bin_cm_s: f64,
}

impl Default for HistogramParams {
    fn default() -> Self {
        Self { diameter_bin_mm: 0.25, volume_bin_ml: 0.01, velocity_bin_cm_s: 1.0 }
    }
}

impl HistogramParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("diameter_bin_mm", self.diameter_bin_mm),
            ("volume_bin_ml", self.volume_bin_ml),
            ("velocity_bin_cm_s", self.velocity_bin_cm_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths become relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.cam1_dir);
        if let Some(p) = cfg.cam2_dir.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.calibration);
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn cam2_dir(&self) -> &Path {
        self.cam2_dir.as_deref().unwrap_or(&self.cam1_dir)
    }

    /// Stage parameters only; paths are checked by [`validate_paths`](Self::validate_paths).
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.counting_row > 0.0 && self.counting_row.is_finite()) {
            return bad(format!("counting_row must be positive, got {}", self.counting_row));
        }
        if self.background_window == 0 {
            return bad("background_window must be at least 1".into());
        }
        if !(self.border_margin_px >= 0.0) {
            return bad(format!("border_margin_px must be non-negative, got {}", self.border_margin_px));
        }
        self.detect.validate()?;
        self.matching.validate()?;
        self.tracker.validate()?;
        if self.rise_prior_cm_s.is_some_and(|v| !v.is_finite()) {
            return bad(format!("rise_prior_cm_s must be finite, got {:?}", self.rise_prior_cm_s));
        }
        self.histograms.validate()?;
        if self.count.up.iter().all(|&u| u == 0.0) || self.count.up.iter().any(|u| !u.is_finite()) {
            return bad(format!("count.up must be a non-zero vector, got {:?}", self.count.up));
        }
        if self.reconstruction.samples < MIN_CONTOUR_POINTS {
            return bad(format!("reconstruction.samples must be at least {MIN_CONTOUR_POINTS}"));
        }
        let sc = &self.self_calibration;
        if sc.enabled && (sc.pairs == 0 || sc.max_observations == 0 || !(sc.gate_px > 0.0)) {
            return bad(format!("self_calibration parameters out of range: {sc:?}"));
        }
        Ok(())
    }

    pub fn validate_paths(&self) -> Result<()> {
        for (name, p) in [("cam1_dir", self.cam1_dir.as_path()), ("cam2_dir", self.cam2_dir())] {
            if !p.is_dir() {
                return Err(Error::Config(format!("{name} {} is not a directory", p.display())));
            }
        }
        if !self.calibration.is_file() {
            return Err(Error::Config(format!("calibration file {} not found", self.calibration.display())));
        }
        Ok(())
    }
}
