use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CalibrationFile, CameraId, StereoRig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub rig: CalibrationFile,
    pub width: usize,
    pub height: usize,
    pub frame_rate_hz: f64,
    pub duration_s: f64,
    /// Camera-1 clock at the first trigger, µs since the epoch.
    pub start_time_us: i64,
    pub bubbles: BubbleConfig,
    pub corridor: Corridor,
    /// Gaussian pixel noise, gray levels.
    pub noise_sigma: f64,
    /// Radial displacement noise of rendered outlines, px.
    pub contour_jitter_px: f64,
    /// Camera-2 clock minus camera-1 clock, seconds.
    pub clock_offset_s: f64,
    /// Camera-2 clock rate error, parts per million.
    pub clock_drift_ppm: f64,
    pub black_frame_interval: u64,
    pub dropped_frames: Vec<DroppedFrame>,
    pub appearance: Appearance,
    pub sediment: Vec<Sediment>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            rig: CalibrationFile::from_rig(&StereoRig::laboratory_reference(), false),
            width: 1024,
            height: 800,
            frame_rate_hz: 80.0,
            duration_s: 5.0,
            start_time_us: 1_700_000_000_000_000,
            bubbles: BubbleConfig::default(),
            corridor: Corridor::default(),
            noise_sigma: 2.0,
            contour_jitter_px: 0.0,
            clock_offset_s: 0.0,
            clock_drift_ppm: 0.0,
            black_frame_interval: 5000,
            dropped_frames: Vec::new(),
            appearance: Appearance::default(),
            sediment: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BubbleConfig {
    /// Mean emission rate, bubbles per second. Ignored when `schedule` is given.
    pub rate_hz: f64,
    pub emission: EmissionProcess,
    pub diameter: DiameterDistribution,
    /// Vertical over horizontal semi-axis at equal volume (< 1 is oblate).
    pub aspect_ratio: f64,
    /// Vertical speed, cm/s; negative values fall.
    pub speed_cm_s: f64,
    pub helix_radius_mm: f64,
    pub helix_period_s: f64,
    /// Vertical oscillation superimposed on the rise.
    pub wobble_amplitude_mm: f64,
    pub wobble_period_s: f64,
    /// Emission points are uniform in a horizontal disc of this radius.
    pub nozzle_spread_mm: f64,
    pub emission_start_s: f64,
    /// Defaults to the last time at which a bubble still completes its transit.
    pub emission_end_s: Option<f64>,
    /// Explicit emissions; replaces the random process when non-empty.
    pub schedule: Vec<ScheduledBubble>,
}

impl Default for BubbleConfig {
    fn default() -> Self {
        Self {
            rate_hz: 2.0,
            emission: EmissionProcess::Regular,
            diameter: DiameterDistribution::LogNormal { median_mm: 5.5, sigma: 0.15, min_mm: 2.0, max_mm: 12.0 },
            aspect_ratio: 1.0,
            speed_cm_s: 28.0,
            helix_radius_mm: 0.0,
            helix_period_s: 0.5,
            wobble_amplitude_mm: 0.0,
            wobble_period_s: 0.25,
            nozzle_spread_mm: 10.0,
            emission_start_s: 0.0,
            emission_end_s: None,
            schedule: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionProcess {
    Regular,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiameterDistribution {
    /// Equivalent diameter `median · exp(σ·N(0,1))`, clamped.
    LogNormal { median_mm: f64, sigma: f64, min_mm: f64, max_mm: f64 },
    Fixed { diameter_mm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledBubble {
    pub time_s: f64,
    pub diameter_mm: f64,
    /// Horizontal offset `[x, z]` from the corridor axis, mm.
    #[serde(default)]
    pub offset_mm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Corridor {
    /// Defaults to the point where the optical axes cross.
    pub center_mm: Option<[f64; 3]>,
    /// Bubbles enter this far below the center and leave this far above it.
    pub half_height_mm: f64,
}

impl Default for Corridor {
    fn default() -> Self {
        Self { center_mm: None, half_height_mm: 80.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroppedFrame {
    pub camera: CameraId,
    pub trigger: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Appearance {
    pub background: f64,
    pub rim: f64,
    pub interior: f64,
    pub rim_width_px: f64,
    /// Amplitude of a smooth static illumination pattern, gray levels.
    pub texture_amplitude: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Self { background: 200.0, rim: 20.0, interior: 170.0, rim_width_px: 2.0, texture_amplitude: 0.0 }
    }
}

/// Static dark blob stuck to a port window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sediment {
    pub camera: CameraId,
    pub u: f64,
    pub v: f64,
    pub radius_px: f64,
    pub intensity: f64,
}

impl SceneConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stereo_rig(&self) -> Result<StereoRig> {
        self.rig.to_rig()
    }

    pub fn trigger_count(&self) -> u64 {
        (self.duration_s * self.frame_rate_hz).floor() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.stereo_rig()?;
        if !(self.frame_rate_hz > 0.0) {
            return bad(format!("frame_rate_hz must be positive, got {}", self.frame_rate_hz));
        }
        if !(self.duration_s > 0.0) || self.trigger_count() == 0 {
            return bad(format!("duration_s {} yields no frames", self.duration_s));
        }
        if self.width < 16 || self.height < 16 {
            return bad(format!("image {}×{} too small", self.width, self.height));
        }
        if self.black_frame_interval < 2 {
            return bad("black_frame_interval must be at least 2".into());
        }
        if self.noise_sigma < 0.0 || self.contour_jitter_px < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        let b = &self.bubbles;
        if b.rate_hz < 0.0 || !(b.aspect_ratio > 0.0) || b.nozzle_spread_mm < 0.0 || b.helix_radius_mm < 0.0 {
            return bad(format!("bubble parameters out of range: {b:?}"));
        }
        if b.schedule.is_empty() && b.rate_hz > 0.0 && b.speed_cm_s == 0.0 {
            return bad("emitted bubbles need a non-zero speed".into());
        }
        if (b.helix_radius_mm > 0.0 && !(b.helix_period_s > 0.0)) || (b.wobble_amplitude_mm > 0.0 && !(b.wobble_period_s > 0.0)) {
            return bad("oscillation periods must be positive".into());
        }
        match b.diameter {
            DiameterDistribution::LogNormal { median_mm, sigma, min_mm, max_mm } => {
                if !(median_mm > 0.0 && sigma >= 0.0 && min_mm > 0.0 && max_mm >= min_mm) {
                    return bad(format!("diameter distribution out of range: {:?}", b.diameter));
                }
            }
            DiameterDistribution::Fixed { diameter_mm } => {
                if !(diameter_mm > 0.0) {
                    return bad(format!("diameter must be positive, got {diameter_mm}"));
                }
            }
        }
        if b.schedule.iter().any(|s| !(s.diameter_mm > 0.0) || !s.time_s.is_finite()) {
            return bad("scheduled bubbles need positive diameters and finite times".into());
        }
        // every bubble must fit inside the corridor it travels through
        let max_d = match b.diameter {
            DiameterDistribution::LogNormal { max_mm, .. } => max_mm,
            DiameterDistribution::Fixed { diameter_mm } => diameter_mm,
        }
        .max(b.schedule.iter().map(|s| s.diameter_mm).fold(0.0, f64::max));
        if max_d >= self.corridor.half_height_mm {
            return bad(format!("bubble diameter {max_d} mm does not fit the corridor"));
        }
        Ok(())
    }
}
