//! Synthetic stereo bubble streams with exact ground truth.
//!
//! Ground-truth JSON (`ground_truth.json` next to the frames):
//!
//! ```text
//! { frame_rate_hz, width, height, clock_offset_s, clock_drift_ppm,
//!   bubbles:  [{ id, emitted_s, equivalent_diameter_mm, volume_mm3, semi_axes_mm,
//!                rise_velocity_cm_s, start_mm, helix_phase, wobble_phase }],
//!   triggers: [{ trigger, time_s, black,
//!                cam1: {camera, index, timestamp_us} | null, cam2: ... | null,
//!                bubbles: [{ id, ellipsoid: {center, q, semi_axes},
//!                            ellipse1: {u, v, A, B, theta} | null, ellipse2: ... }] }] }
//! ```
//!
//! Ellipses are in ideal (undistorted) pixels of the respective camera.

mod config;
mod render;
mod scene;

use std::io::BufWriter;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{
    Appearance, BubbleConfig, Corridor, DiameterDistribution, DroppedFrame, EmissionProcess, ScheduledBubble,
    SceneConfig, Sediment,
};
pub use render::{CameraRenderer, Silhouette};
pub use scene::{transit_time, BubbleTruth, BubbleView, Crossing, GroundTruth, Scene, TriggerTruth};

use crate::error::{Error, Result};
use crate::geometry::{rotation_from_euler_deg, CameraId, StereoRig};
use crate::imaging::{frame_file_name, write_pgm, Frame, FrameIter, FrameMeta, FrameSource};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Scene rendered on demand; frames are identical to what [`generate`] writes.
pub struct SimulatedSource {
    scene: Scene,
    renderers: [CameraRenderer; 2],
    metas: [Vec<Option<FrameMeta>>; 2],
}

impl SimulatedSource {
    pub fn new(config: SceneConfig) -> Result<Self> {
        let scene = Scene::new(config)?;
        let renderers = [CameraRenderer::new(&scene.config, CameraId::One)?, CameraRenderer::new(&scene.config, CameraId::Two)?];
        let metas = [scene.frame_metas(CameraId::One), scene.frame_metas(CameraId::Two)];
        Ok(Self { scene, renderers, metas })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn ground_truth(&self) -> GroundTruth {
        self.scene.ground_truth()
    }

    /// The frame a camera saved at `trigger`, or `None` if it dropped it.
    pub fn render_trigger(&self, camera: CameraId, trigger: u64) -> Option<Frame> {
        let meta = (*self.metas[camera.number() as usize - 1].get(trigger as usize)?)?;
        let renderer = &self.renderers[camera.number() as usize - 1];
        let mut rng = ChaCha8Rng::seed_from_u64(self.scene.config.seed);
        rng.set_stream(1 + ((camera.number() as u64) << 40) + trigger);
        let black = self.scene.is_black(trigger);
        let silhouettes: Vec<Silhouette> = if black {
            Vec::new()
        } else {
            self.scene
                .views_at(self.scene.trigger_time(trigger))
                .into_iter()
                .filter_map(|v| match camera {
                    CameraId::One => v.ellipse1,
                    CameraId::Two => v.ellipse2,
                })
                .map(|ellipse| Silhouette { jitter: renderer.draw_jitter(&ellipse, &mut rng), ellipse })
                .collect()
        };
        let pixels = renderer.render(&silhouettes, black, &mut rng);
        Some(Frame { meta, width: self.scene.config.width, height: self.scene.config.height, pixels })
    }
}

impl FrameSource for SimulatedSource {
    fn frames(&self, camera: CameraId) -> Result<FrameIter<'_>> {
        let n = self.scene.config.trigger_count();
        Ok(Box::new((0..n).filter_map(move |k| self.render_trigger(camera, k).map(Ok))))
    }

    fn frame_count(&self, camera: CameraId) -> Result<usize> {
        Ok(self.metas[camera.number() as usize - 1].iter().flatten().count())
    }
}

/// Writes both PGM sequences and the ground truth into `out_dir`, which must be
/// empty or absent.
pub fn generate(config: &SceneConfig, out_dir: &Path) -> Result<GroundTruth> {
    if out_dir.exists() {
        let mut entries = std::fs::read_dir(out_dir).map_err(|e| Error::io(out_dir, e))?;
        if entries.next().is_some() {
            return Err(Error::Config(format!("output directory {} is not empty", out_dir.display())));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let source = SimulatedSource::new(config.clone())?;
    let n = config.trigger_count();
    const CHUNK: u64 = 32;
    for camera in [CameraId::One, CameraId::Two] {
        for start in (0..n).step_by(CHUNK as usize) {
            let frames: Vec<Frame> =
                (start..(start + CHUNK).min(n)).into_par_iter().filter_map(|k| source.render_trigger(camera, k)).collect();
            for f in &frames {
                write_pgm(&out_dir.join(frame_file_name(&f.meta)), f)?;
            }
        }
    }
    let truth = source.ground_truth();
    let path = out_dir.join(GROUND_TRUTH_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer(BufWriter::new(file), &truth)?;
    Ok(truth)
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { what: "ground truth", detail: e.to_string() })
}

/// Rotates camera 2 by XYZ Euler angles (degrees) and shifts its translation by
/// `t_dir_mm`, rescaled so that the baseline length is unchanged.
pub fn perturb_rig(rig: &StereoRig, rot_deg: [f64; 3], t_dir_mm: [f64; 3]) -> StereoRig {
    let mut out = *rig;
    if rot_deg != [0.0; 3] {
        out.pose2.rotation = rotation_from_euler_deg(rot_deg) * rig.pose2.rotation;
    }
    let delta = Vector3::from(t_dir_mm);
    if delta != Vector3::zeros() {
        let t = rig.pose2.translation + delta;
        out.pose2.translation = t * (rig.pose2.translation.norm() / t.norm());
    }
    out
}
