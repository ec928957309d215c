//! SORT-style tracking of reconstructed bubbles and single counting at a reference row.

mod kalman;

pub use kalman::{BoxFilter, KalmanParams};

use std::io::Write;

use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BBox;
use crate::matching::{solve_assignment, Assignment, Edge};
use crate::quadrics::Ellipsoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub iou_min: f64,
    /// Downward motion (px, image v increasing) tolerated per elapsed frame.
    pub down_slack_px: f64,
    /// Sideward motion allowed per elapsed frame, px.
    pub side_gate_px: f64,
    pub max_age: u32,
    pub min_hits: u32,
    pub kalman: KalmanParams,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self { iou_min: 0.1, down_slack_px: 2.0, side_gate_px: 25.0, max_age: 3, min_hits: 3, kalman: KalmanParams::default() }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.iou_min)
            && self.down_slack_px >= 0.0
            && self.side_gate_px > 0.0
            && self.max_age >= 1
            && self.min_hits >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("tracker parameters out of range: {self:?}")))
        }
    }
}

/// A reconstructed bubble in one stereo frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Camera-1 bounding box.
    pub bbox: BBox,
    pub ellipsoid: Ellipsoid,
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub frame_index: u64,
    pub time_s: f64,
    pub bbox: BBox,
    pub ellipsoid: Ellipsoid,
    pub merged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Active,
    Lost,
    Finished,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub states: Vec<TrackState>,
    pub status: TrackStatus,
    pub hits: u32,
    /// Consecutive frames without an update.
    pub misses: u32,
    filter: BoxFilter,
    predicted: BBox,
}

impl Track {
    pub fn filter(&self) -> &BoxFilter {
        &self.filter
    }

    pub fn last(&self) -> &TrackState {
        self.states.last().expect("tracks are created with one state")
    }

    pub fn json_record(&self) -> serde_json::Value {
        serde_json::json!({ "id": self.id, "status": self.status, "hits": self.hits, "states": self.states })
    }
}

/// Constant-velocity prediction of the track's box one frame ahead.
pub fn predict(track: &mut Track, params: &KalmanParams) -> BBox {
    track.predicted = track.filter.predict(params);
    track.predicted
}

/// Maximum-IoU assignment of tracks to the detections of frame `frame_index`
/// under the motion gates.
pub fn associate(tracks: &[Track], detections: &[BBox], frame_index: u64, params: &TrackerParams) -> Assignment {
    let mut edges = Vec::new();
    for (i, t) in tracks.iter().enumerate() {
        let last = t.last();
        let elapsed = frame_index.saturating_sub(last.frame_index).max(1) as f64;
        let last = last.bbox.center();
        for (j, d) in detections.iter().enumerate() {
            let c = d.center();
            if c.y > last.y + params.down_slack_px * elapsed || (c.x - last.x).abs() > params.side_gate_px * elapsed {
                continue;
            }
            let iou = t.predicted.iou(d);
            if iou >= params.iou_min && iou > 0.0 {
                edges.push(Edge { left: i, right: j, cost: 1.0 - iou });
            }
        }
    }
    solve_assignment(&edges, tracks.len(), detections.len())
}

pub struct Tracker {
    params: TrackerParams,
    active: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self { params, active: Vec::new(), finished: Vec::new(), next_id: 0, last_frame: None }
    }

    pub fn active(&self) -> &[Track] {
        &self.active
    }

    /// Advances all tracks to `frame_index` and absorbs that frame's observations.
    /// Skipped frame indices (black or unpaired frames) are predicted through.
    pub fn step(&mut self, frame_index: u64, time_s: f64, observations: Vec<Observation>) {
        let gap = self.last_frame.map_or(1, |f| frame_index.saturating_sub(f).max(1));
        self.last_frame = Some(frame_index);
        for t in &mut self.active {
            for _ in 0..gap {
                predict(t, &self.params.kalman);
            }
        }
        let boxes: Vec<BBox> = observations.iter().map(|o| o.bbox).collect();
        let asg = associate(&self.active, &boxes, frame_index, &self.params);
        let mut slots: Vec<Option<Observation>> = observations.into_iter().map(Some).collect();
        let mut updated = vec![false; self.active.len()];
        for &(ti, di) in &asg.pairs {
            let obs = slots[di].take().expect("assigned once");
            let t = &mut self.active[ti];
            t.filter.update(&obs.bbox, &self.params.kalman);
            t.states.push(TrackState { frame_index, time_s, bbox: obs.bbox, ellipsoid: obs.ellipsoid, merged: obs.merged });
            t.hits += 1;
            t.misses = 0;
            t.status = TrackStatus::Active;
            updated[ti] = true;
        }
        let mut keep = Vec::with_capacity(self.active.len());
        for (t, up) in self.active.drain(..).zip(updated) {
            let mut t = t;
            if !up {
                t.misses += 1;
                t.status = TrackStatus::Lost;
            }
            if t.misses >= self.params.max_age {
                t.status = TrackStatus::Finished;
                self.finished.push(t);
            } else {
                keep.push(t);
            }
        }
        self.active = keep;
        let kalman = KalmanParams { initial_velocity: self.velocity_prior(), ..self.params.kalman.clone() };
        for obs in slots.into_iter().flatten() {
            let filter = BoxFilter::new(&obs.bbox, &kalman);
            self.active.push(Track {
                id: self.next_id,
                states: vec![TrackState { frame_index, time_s, bbox: obs.bbox, ellipsoid: obs.ellipsoid, merged: obs.merged }],
                status: TrackStatus::Active,
                hits: 1,
                misses: 0,
                predicted: obs.bbox,
                filter,
            });
            self.next_id += 1;
        }
    }

    /// Median velocity of confirmed tracks updated this frame, else the configured prior.
    fn velocity_prior(&self) -> [f64; 2] {
        let (mut vu, mut vv): (Vec<f64>, Vec<f64>) = self
            .active
            .iter()
            .filter(|t| t.misses == 0 && t.hits >= self.params.min_hits)
            .map(|t| {
                let v = t.filter.velocity();
                (v[0], v[1])
            })
            .unzip();
        if vu.is_empty() {
            return self.params.kalman.initial_velocity;
        }
        let med = |x: &mut Vec<f64>| {
            x.sort_by(f64::total_cmp);
            let n = x.len();
            if n % 2 == 1 { x[n / 2] } else { 0.5 * (x[n / 2 - 1] + x[n / 2]) }
        };
        [med(&mut vu), med(&mut vv)]
    }

    /// All tracks ever created, ordered by id.
    pub fn finish(mut self) -> Vec<Track> {
        for mut t in self.active.drain(..) {
            t.status = TrackStatus::Finished;
            self.finished.push(t);
        }
        self.finished.sort_by_key(|t| t.id);
        self.finished
    }
}

pub fn write_tracks<W: Write>(mut w: W, tracks: &[Track]) -> std::io::Result<()> {
    for t in tracks {
        serde_json::to_writer(&mut w, &t.json_record())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Horizontal reference row in camera 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingSurface {
    pub row: f64,
}

impl CountingSurface {
    pub fn new(row: f64, image_height: usize) -> Result<Self> {
        if row > 0.0 && row < image_height as f64 {
            Ok(Self { row })
        } else {
            Err(Error::Config(format!("counting row {row} outside (0, {image_height})")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountParams {
    pub min_hits: u32,
    /// States on each side of the crossing used for the rise velocity.
    pub velocity_half_window: usize,
    /// World "up" direction (camera-1 frame).
    pub up: [f64; 3],
}

impl Default for CountParams {
    fn default() -> Self {
        Self { min_hits: 3, velocity_half_window: 5, up: [0.0, -1.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountedBubble {
    pub track_id: u64,
    pub frame_index: u64,
    pub crossing_time_s: f64,
    pub equivalent_diameter_mm: f64,
    pub volume_mm3: f64,
    pub rise_velocity_cm_s: f64,
    pub center_mm: [f64; 3],
    pub merged: bool,
}

impl CountedBubble {
    pub fn from_ellipsoid(track_id: u64, frame_index: u64, crossing_time_s: f64, e: &Ellipsoid, rise_velocity_cm_s: f64, merged: bool) -> Self {
        let volume_mm3 = e.volume();
        Self {
            track_id,
            frame_index,
            crossing_time_s,
            equivalent_diameter_mm: (6.0 * volume_mm3 / std::f64::consts::PI).cbrt(),
            volume_mm3,
            rise_velocity_cm_s,
            center_mm: e.center.coords.into(),
            merged,
        }
    }
}

fn v_of(s: &TrackState) -> f64 {
    s.bbox.center().y
}

/// One record per track whose camera-1 center first moves up through the row.
///
/// Tracks whose first state is already at or above the row are ignored. Size
/// comes from the straddling state nearest to the row, velocity from the
/// displacement along `up` across ±`velocity_half_window` states.
pub fn count_at_surface(tracks: &[Track], surface: &CountingSurface, params: &CountParams) -> Vec<CountedBubble> {
    let up = Vector3::from(params.up).normalize();
    let mut out = Vec::new();
    for t in tracks {
        if t.hits < params.min_hits || t.states.len() < 3 || v_of(&t.states[0]) <= surface.row {
            continue;
        }
        let Some(k) = t.states.windows(2).position(|w| v_of(&w[0]) > surface.row && v_of(&w[1]) <= surface.row) else {
            continue;
        };
        let (a, b) = (&t.states[k], &t.states[k + 1]);
        let frac = (v_of(a) - surface.row) / (v_of(a) - v_of(b));
        let crossing_time_s = a.time_s + frac * (b.time_s - a.time_s);
        let nearest = if frac <= 0.5 { k } else { k + 1 };
        let lo = nearest.saturating_sub(params.velocity_half_window);
        let hi = (nearest + params.velocity_half_window).min(t.states.len() - 1);
        let (s0, s1) = (&t.states[lo], &t.states[hi]);
        let dt = s1.time_s - s0.time_s;
        let rise_mm_s = if dt > 0.0 { (s1.ellipsoid.center - s0.ellipsoid.center).dot(&up) / dt } else { 0.0 };
        let merged = t.states[lo..=hi].iter().any(|s| s.merged);
        let s = &t.states[nearest];
        out.push(CountedBubble::from_ellipsoid(t.id, s.frame_index, crossing_time_s, &s.ellipsoid, rise_mm_s / 10.0, merged));
    }
    out.sort_by(|a, b| a.crossing_time_s.total_cmp(&b.crossing_time_s).then(a.track_id.cmp(&b.track_id)));
    out
}

/// Center of a track state in camera 1, for callers that only hold boxes.
pub fn state_center(s: &TrackState) -> Point2<f64> {
    s.bbox.center()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn obs(u: f64, v: f64, y_mm: f64) -> Observation {
        Observation {
            bbox: BBox::from_center(u, v, 30.0, 30.0),
            ellipsoid: Ellipsoid::sphere(Point3::new(0.0, y_mm, 300.0), 3.0),
            merged: false,
        }
    }

    fn run(frames: &[Vec<Observation>]) -> Vec<Track> {
        let mut tr = Tracker::new(TrackerParams::default());
        for (k, o) in frames.iter().enumerate() {
            tr.step(k as u64, k as f64 / 80.0, o.clone());
        }
        tr.finish()
    }

    #[test]
    fn identical_boxes_give_identity_assignment() {
        let boxes: Vec<BBox> = (0..4).map(|i| BBox::from_center(50.0 * i as f64, 100.0, 20.0, 20.0)).collect();
        let tracks: Vec<Track> = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Track {
                id: i as u64,
                states: vec![TrackState { frame_index: 0, time_s: 0.0, bbox: *b, ellipsoid: Ellipsoid::sphere(Point3::origin(), 1.0), merged: false }],
                status: TrackStatus::Active,
                hits: 1,
                misses: 0,
                filter: BoxFilter::new(b, &KalmanParams::default()),
                predicted: *b,
            })
            .collect();
        let a = associate(&tracks, &boxes, 1, &TrackerParams::default());
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        // total IoU = pairs − Σ(1 − IoU)
        assert!((a.pairs.len() as f64 - a.total_cost - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rising_bubble_is_one_track() {
        let frames: Vec<Vec<Observation>> = (0..30).map(|k| vec![obs(300.0, 600.0 - 4.0 * k as f64, -0.7 * k as f64)]).collect();
        let tracks = run(&frames);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].states.len(), 30);
        assert!(tracks[0].states.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
    }

    #[test]
    fn skipped_frames_are_predicted_through() {
        // a fast riser and a slow sinker, with every 10th frame index missing
        let mut tr = Tracker::new(TrackerParams::default());
        for k in (0..40u64).filter(|k| k % 10 != 5) {
            let f = k as f64;
            tr.step(k, f / 80.0, vec![obs(200.0, 700.0 - 15.0 * f, -2.6 * f), obs(600.0, 300.0 + 1.5 * f, 0.3 * f)]);
        }
        let tracks = tr.finish();
        assert_eq!(tracks.len(), 2, "{:?}", tracks.iter().map(|t| t.states.len()).collect::<Vec<_>>());
        assert!(tracks.iter().all(|t| t.states.len() == 36));
    }

    #[test]
    fn downward_jump_spawns_new_track() {
        let mut frames: Vec<Vec<Observation>> = (0..5).map(|k| vec![obs(300.0, 600.0 - 4.0 * k as f64, 0.0)]).collect();
        frames.push(vec![obs(300.0, 600.0 - 16.0 + 6.0, 0.0)]);
        let tracks = run(&frames);
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[1].states[0].frame_index, 5);
    }

    #[test]
    fn sideward_jump_is_forbidden() {
        let mut frames: Vec<Vec<Observation>> = (0..5).map(|k| vec![obs(300.0, 600.0 - 4.0 * k as f64, 0.0)]).collect();
        frames.push(vec![obs(330.0, 600.0 - 20.0, 0.0)]);
        assert_eq!(run(&frames).len(), 2);
    }

    #[test]
    fn track_survives_short_gap_and_ends_after_max_age() {
        let mut frames: Vec<Vec<Observation>> = (0..12).map(|k| vec![obs(300.0, 600.0 - 4.0 * k as f64, 0.0)]).collect();
        frames[6].clear();
        frames[7].clear();
        let tracks = run(&frames);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].states.len(), 10);
        let mut frames: Vec<Vec<Observation>> = (0..12).map(|k| vec![obs(300.0, 600.0 - 4.0 * k as f64, 0.0)]).collect();
        for f in &mut frames[5..8] {
            f.clear();
        }
        assert_eq!(run(&frames).len(), 2);
    }

    #[test]
    fn counting_rules() {
        let surface = CountingSurface::new(400.0, 800).unwrap();
        // rises 28 cm/s: 3.5 mm per frame at 80 Hz
        let rising: Vec<Vec<Observation>> = (0..40).map(|k| vec![obs(300.0, 560.0 - 8.0 * k as f64, -3.5 * k as f64)]).collect();
        let counted = count_at_surface(&run(&rising), &surface, &CountParams::default());
        assert_eq!(counted.len(), 1);
        let c = &counted[0];
        assert!((c.rise_velocity_cm_s - 28.0).abs() < 1e-9);
        assert!((c.crossing_time_s - 20.0 / 80.0).abs() < 1e-12);
        assert!((c.volume_mm3 - std::f64::consts::PI / 6.0 * c.equivalent_diameter_mm.powi(3)).abs() < 1e-9 * c.volume_mm3);
        // starts above the row
        let above: Vec<Vec<Observation>> = (0..20).map(|k| vec![obs(300.0, 380.0 - 8.0 * k as f64, 0.0)]).collect();
        assert!(count_at_surface(&run(&above), &surface, &CountParams::default()).is_empty());
        // oscillates across the row: counted once
        let wobble: Vec<Vec<Observation>> =
            (0..60).map(|k| vec![obs(300.0, 430.0 - 1.5 * k as f64 + 10.0 * (0.3 * k as f64).sin(), 0.0)]).collect();
        let tracks = run(&wobble);
        assert_eq!(tracks.len(), 1);
        let v: Vec<f64> = tracks[0].states.iter().map(v_of).collect();
        let crossings = v.windows(2).filter(|w| (w[0] - 400.0).signum() != (w[1] - 400.0).signum()).count();
        assert!(crossings >= 3, "{crossings}");
        assert_eq!(count_at_surface(&tracks, &surface, &CountParams::default()).len(), 1);
    }

    #[test]
    fn short_tracks_are_not_counted() {
        let surface = CountingSurface::new(400.0, 800).unwrap();
        let frames: Vec<Vec<Observation>> = (0..2).map(|k| vec![obs(300.0, 404.0 - 8.0 * k as f64, 0.0)]).collect();
        assert!(count_at_surface(&run(&frames), &surface, &CountParams::default()).is_empty());
        assert!(CountingSurface::new(0.0, 800).is_err());
        assert!(CountingSurface::new(800.0, 800).is_err());
    }
}
