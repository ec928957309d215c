use std::f64::consts::PI;

use nalgebra::{Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{DiameterDistribution, EmissionProcess, SceneConfig};
use crate::error::{Error, Result};
use crate::geometry::{CameraId, StereoRig};
use crate::imaging::FrameMeta;
use crate::quadrics::{project_ellipsoid, EllipseParams, Ellipsoid};

/// One emitted bubble and its motion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleTruth {
    pub id: u64,
    pub emitted_s: f64,
    pub equivalent_diameter_mm: f64,
    pub volume_mm3: f64,
    pub semi_axes_mm: [f64; 3],
    /// Signed vertical speed, cm/s (positive rises).
    pub rise_velocity_cm_s: f64,
    /// Emission point.
    pub start_mm: [f64; 3],
    pub helix_phase: f64,
    pub wobble_phase: f64,
}

/// A bubble as seen at one trigger. Ellipses are in ideal pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleView {
    pub id: u64,
    pub ellipsoid: Ellipsoid,
    pub ellipse1: Option<EllipseParams>,
    pub ellipse2: Option<EllipseParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerTruth {
    pub trigger: u64,
    pub time_s: f64,
    pub black: bool,
    /// `None` when that camera dropped the frame.
    pub cam1: Option<FrameMeta>,
    pub cam2: Option<FrameMeta>,
    pub bubbles: Vec<BubbleView>,
}

/// Everything the generator knows about a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame_rate_hz: f64,
    pub width: usize,
    pub height: usize,
    pub clock_offset_s: f64,
    pub clock_drift_ppm: f64,
    pub bubbles: Vec<BubbleTruth>,
    pub triggers: Vec<TriggerTruth>,
}

/// First upward pass of a bubble's camera-1 ellipse center through an image row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub id: u64,
    pub time_s: f64,
}

impl GroundTruth {
    /// Emitted-volume ledger, mm³.
    pub fn emitted_volume_mm3(&self) -> f64 {
        self.bubbles.iter().map(|b| b.volume_mm3).sum()
    }

    /// Camera-2 frame index exposed at the same trigger as camera-1 frame `index1`.
    pub fn partner_of(&self, index1: u64) -> Option<u64> {
        self.triggers
            .iter()
            .find(|t| t.cam1.is_some_and(|m| m.index == index1))
            .and_then(|t| t.cam2.map(|m| m.index))
    }

    /// True `(index1, index2)` pairs, excluding triggers where either camera dropped the frame.
    pub fn true_pairs(&self) -> Vec<(u64, u64)> {
        self.triggers.iter().filter_map(|t| Some((t.cam1?.index, t.cam2?.index))).collect()
    }

    /// Bubbles whose camera-1 center moves up through `row`, first visible below it.
    pub fn crossings(&self, row: f64) -> Vec<Crossing> {
        let mut out = Vec::new();
        for b in &self.bubbles {
            let track: Vec<(f64, f64)> = self
                .triggers
                .iter()
                .filter_map(|t| {
                    let view = t.bubbles.iter().find(|v| v.id == b.id)?;
                    Some((t.time_s, view.ellipse1?.v))
                })
                .collect();
            let Some(&(_, v0)) = track.first() else { continue };
            if v0 <= row {
                continue;
            }
            if let Some(w) = track.windows(2).find(|w| w[0].1 > row && w[1].1 <= row) {
                let ((t0, v0), (t1, v1)) = (w[0], w[1]);
                let f = (v0 - row) / (v0 - v1);
                out.push(Crossing { id: b.id, time_s: t0 + f * (t1 - t0) });
            }
        }
        out
    }

    pub fn bubble(&self, id: u64) -> Option<&BubbleTruth> {
        self.bubbles.iter().find(|b| b.id == id)
    }
}

/// Deterministic scene: emitted bubbles and their trajectories.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub rig: StereoRig,
    pub bubbles: Vec<BubbleTruth>,
    center: Point3<f64>,
    up: Vector3<f64>,
}

const UP: [f64; 3] = [0.0, -1.0, 0.0];

impl Scene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let rig = config.stereo_rig()?;
        let center = match config.corridor.center_mm {
            Some(c) => Point3::from(c),
            None => rig.axes_crossing()?,
        };
        let up = Vector3::from(UP);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let b = &config.bubbles;
        let transit = transit_time(&config);

        let mut emissions: Vec<(f64, f64, [f64; 2])> = Vec::new();
        if !b.schedule.is_empty() {
            for s in &b.schedule {
                emissions.push((s.time_s, s.diameter_mm, s.offset_mm));
            }
        } else if b.rate_hz > 0.0 {
            let end = b.emission_end_s.unwrap_or(config.duration_s - transit);
            let exp = Exp::new(b.rate_hz).map_err(|e| Error::Config(e.to_string()))?;
            let mut t = b.emission_start_s;
            let mut k = 0u64;
            loop {
                t = match b.emission {
                    EmissionProcess::Regular => b.emission_start_s + (k as f64 + 0.5) / b.rate_hz,
                    EmissionProcess::Poisson => t + exp.sample(&mut rng),
                };
                if t > end {
                    break;
                }
                let d = match b.diameter {
                    DiameterDistribution::LogNormal { median_mm, sigma, min_mm, max_mm } => {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (median_mm * (sigma * z).exp()).clamp(min_mm, max_mm)
                    }
                    DiameterDistribution::Fixed { diameter_mm } => diameter_mm,
                };
                let r = b.nozzle_spread_mm * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..2.0 * PI);
                emissions.push((t, d, [r * phi.cos(), r * phi.sin()]));
                k += 1;
            }
        }

        let speed_mm_s = b.speed_cm_s * 10.0;
        // rising bubbles enter below the corridor, falling ones above it
        let entry = if speed_mm_s >= 0.0 { -config.corridor.half_height_mm } else { config.corridor.half_height_mm };
        let bubbles = emissions
            .into_iter()
            .enumerate()
            .map(|(i, (t, d, off))| {
                let r = d / 2.0;
                let horiz = r / b.aspect_ratio.cbrt();
                let vert = horiz * b.aspect_ratio;
                let start = center + up * entry + Vector3::new(off[0], 0.0, off[1]);
                BubbleTruth {
                    id: i as u64 + 1,
                    emitted_s: t,
                    equivalent_diameter_mm: d,
                    volume_mm3: PI / 6.0 * d * d * d,
                    semi_axes_mm: [horiz, vert, horiz],
                    rise_velocity_cm_s: b.speed_cm_s,
                    start_mm: start.coords.into(),
                    helix_phase: rng.random_range(0.0..2.0 * PI),
                    wobble_phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        Ok(Self { config, rig, bubbles, center, up })
    }

    pub fn corridor_center(&self) -> Point3<f64> {
        self.center
    }

    pub fn trigger_time(&self, trigger: u64) -> f64 {
        trigger as f64 / self.config.frame_rate_hz
    }

    /// Shape and position of a bubble at scene time `t`, or `None` outside its life span.
    pub fn ellipsoid_at(&self, b: &BubbleTruth, t: f64) -> Option<Ellipsoid> {
        let tau = t - b.emitted_s;
        if tau < 0.0 {
            return None;
        }
        let cfg = &self.config.bubbles;
        let speed = b.rise_velocity_cm_s * 10.0;
        if speed != 0.0 {
            let span = 2.0 * self.config.corridor.half_height_mm + 2.0 * self.max_extent(b);
            if tau * speed.abs() > span {
                return None;
            }
        }
        let mut c = Point3::from(b.start_mm) + self.up * (speed * tau);
        if cfg.helix_radius_mm > 0.0 {
            let w = 2.0 * PI / cfg.helix_period_s;
            let (p0, p) = (b.helix_phase, b.helix_phase + w * tau);
            c += Vector3::new(p.cos() - p0.cos(), 0.0, p.sin() - p0.sin()) * cfg.helix_radius_mm;
        }
        if cfg.wobble_amplitude_mm > 0.0 {
            let w = 2.0 * PI / cfg.wobble_period_s;
            let (p0, p) = (b.wobble_phase, b.wobble_phase + w * tau);
            c += self.up * (cfg.wobble_amplitude_mm * (p.sin() - p0.sin()));
        }
        Some(Ellipsoid::new(c, Rotation3::identity(), Vector3::from(b.semi_axes_mm)))
    }

    fn max_extent(&self, b: &BubbleTruth) -> f64 {
        b.semi_axes_mm.iter().cloned().fold(0.0, f64::max) + self.config.bubbles.wobble_amplitude_mm * 2.0
    }

    /// Bubbles alive at `t` with their projections (ideal pixels; `None` when not projectable
    /// or entirely outside the image).
    pub fn views_at(&self, t: f64) -> Vec<BubbleView> {
        let cams = [self.rig.camera(CameraId::One), self.rig.camera(CameraId::Two)];
        let (w, h) = (self.config.width as f64, self.config.height as f64);
        let margin = 2.0 * self.config.appearance.rim_width_px + 4.0;
        self.bubbles
            .iter()
            .filter_map(|b| {
                let e = self.ellipsoid_at(b, t)?;
                let [e1, e2] = [&cams[0], &cams[1]].map(|cam| {
                    let ell = project_ellipsoid(cam, &e).ok()?.to_ellipse();
                    let (lo, hi) = ell.bounds();
                    (hi.x > -margin && hi.y > -margin && lo.x < w + margin && lo.y < h + margin).then_some(ell)
                });
                (e1.is_some() || e2.is_some()).then_some(BubbleView { id: b.id, ellipsoid: e, ellipse1: e1, ellipse2: e2 })
            })
            .collect()
    }

    pub fn is_black(&self, trigger: u64) -> bool {
        trigger % self.config.black_frame_interval == 0
    }

    pub fn is_dropped(&self, camera: CameraId, trigger: u64) -> bool {
        self.config.dropped_frames.iter().any(|d| d.camera == camera && d.trigger == trigger)
    }

    /// Camera clock reading at scene time `t`, µs.
    pub fn timestamp_us(&self, camera: CameraId, t: f64) -> i64 {
        let local = match camera {
            CameraId::One => t,
            CameraId::Two => self.config.clock_offset_s + t * (1.0 + self.config.clock_drift_ppm * 1e-6),
        };
        self.config.start_time_us + (local * 1e6).round() as i64
    }

    /// Frame identity of every trigger per camera (`None` for dropped frames).
    pub fn frame_metas(&self, camera: CameraId) -> Vec<Option<FrameMeta>> {
        let mut index = 0u64;
        (0..self.config.trigger_count())
            .map(|k| {
                if self.is_dropped(camera, k) {
                    return None;
                }
                let meta = FrameMeta { camera, index, timestamp_us: self.timestamp_us(camera, self.trigger_time(k)) };
                index += 1;
                Some(meta)
            })
            .collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let m1 = self.frame_metas(CameraId::One);
        let m2 = self.frame_metas(CameraId::Two);
        let triggers = (0..self.config.trigger_count())
            .map(|k| {
                let t = self.trigger_time(k);
                TriggerTruth {
                    trigger: k,
                    time_s: t,
                    black: self.is_black(k),
                    cam1: m1[k as usize],
                    cam2: m2[k as usize],
                    bubbles: self.views_at(t),
                }
            })
            .collect();
        GroundTruth {
            frame_rate_hz: self.config.frame_rate_hz,
            width: self.config.width,
            height: self.config.height,
            clock_offset_s: self.config.clock_offset_s,
            clock_drift_ppm: self.config.clock_drift_ppm,
            bubbles: self.bubbles.clone(),
            triggers,
        }
    }
}

/// Time a bubble needs to traverse the corridor.
pub fn transit_time(config: &SceneConfig) -> f64 {
    let speed = config.bubbles.speed_cm_s.abs() * 10.0;
    if speed == 0.0 {
        return 0.0;
    }
    (2.0 * config.corridor.half_height_mm + 2.0 * config.bubbles.wobble_amplitude_mm) / speed
}
