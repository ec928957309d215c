use std::f64::consts::PI;

use nalgebra::Point2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::{Appearance, SceneConfig};
use crate::geometry::{CameraId, Intrinsics};
use crate::quadrics::{Conic2D, EllipseParams};

/// Subsample offsets of the 2×2 pattern.
const SUB: [f64; 2] = [-0.25, 0.25];

/// Renders one camera's view. Bubble outlines are given in ideal pixels and drawn
/// into raw (distorted) pixels through a precomputed subsample map.
pub struct CameraRenderer {
    width: usize,
    height: usize,
    intrinsics: Intrinsics,
    /// Ideal position of every subsample, `(2v+sy)·2w + 2u+sx`; empty without distortion.
    ideal: Vec<[f32; 2]>,
    background: Vec<f32>,
    appearance: Appearance,
    noise_sigma: f64,
    jitter_px: f64,
}

/// One outline to draw.
pub struct Silhouette {
    pub ellipse: EllipseParams,
    /// Radial outline displacement (px, outward positive) at equally spaced parametric angles.
    pub jitter: Vec<f64>,
}

impl CameraRenderer {
    pub fn new(config: &SceneConfig, camera: CameraId) -> crate::Result<Self> {
        let rig = config.stereo_rig()?;
        let intrinsics = *rig.intrinsics(camera);
        let (w, h) = (config.width, config.height);
        let ideal = if intrinsics.is_distortion_free() {
            Vec::new()
        } else {
            (0..2 * h)
                .into_par_iter()
                .flat_map_iter(|sv| {
                    let y = (sv / 2) as f64 + SUB[sv % 2];
                    (0..2 * w).map(move |su| {
                        let x = (su / 2) as f64 + SUB[su % 2];
                        let p = intrinsics.undistort_pixel(Point2::new(x, y));
                        [p.x as f32, p.y as f32]
                    })
                })
                .collect()
        };
        let background = background_layer(config, camera);
        Ok(Self {
            width: w,
            height: h,
            intrinsics,
            ideal,
            background,
            appearance: config.appearance.clone(),
            noise_sigma: config.noise_sigma,
            jitter_px: config.contour_jitter_px,
        })
    }

    pub fn background(&self) -> &[f32] {
        &self.background
    }

    #[inline]
    fn ideal_at(&self, u: usize, v: usize, sx: usize, sy: usize) -> Point2<f64> {
        if self.ideal.is_empty() {
            Point2::new(u as f64 + SUB[sx], v as f64 + SUB[sy])
        } else {
            let p = self.ideal[(2 * v + sy) * 2 * self.width + 2 * u + sx];
            Point2::new(p[0] as f64, p[1] as f64)
        }
    }

    /// Random outline displacement for an ellipse, nodes about 2 px apart.
    pub fn draw_jitter(&self, ellipse: &EllipseParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
        if self.jitter_px == 0.0 {
            return Vec::new();
        }
        let perimeter = PI * (3.0 * (ellipse.a + ellipse.b) - ((3.0 * ellipse.a + ellipse.b) * (ellipse.a + 3.0 * ellipse.b)).sqrt());
        let n = ((perimeter / 2.0).ceil() as usize).max(16);
        // linear interpolation between independent nodes averages the variance down by 2/3
        let sigma = self.jitter_px * 1.5f64.sqrt();
        (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Raw-pixel rectangle that may be touched by an ideal-pixel rectangle.
    fn raw_box(&self, lo: Point2<f64>, hi: Point2<f64>) -> Option<(usize, usize, usize, usize)> {
        let (mut a, mut b) = (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN));
        let n = 8;
        for i in 0..=n {
            let f = i as f64 / n as f64;
            for p in [
                Point2::new(lo.x + f * (hi.x - lo.x), lo.y),
                Point2::new(lo.x + f * (hi.x - lo.x), hi.y),
                Point2::new(lo.x, lo.y + f * (hi.y - lo.y)),
                Point2::new(hi.x, lo.y + f * (hi.y - lo.y)),
            ] {
                let r = self.intrinsics.distort_pixel(p);
                a = Point2::new(a.x.min(r.x), a.y.min(r.y));
                b = Point2::new(b.x.max(r.x), b.y.max(r.y));
            }
        }
        let pad = 2.0;
        let u0 = (a.x - pad).floor().max(0.0);
        let v0 = (a.y - pad).floor().max(0.0);
        let u1 = (b.x + pad).ceil().min(self.width as f64 - 1.0);
        let v1 = (b.y + pad).ceil().min(self.height as f64 - 1.0);
        (u0 <= u1 && v0 <= v1).then_some((u0 as usize, v0 as usize, u1 as usize, v1 as usize))
    }

    /// Noise-free image with the given outlines, darker contributions winning.
    pub fn shade(&self, silhouettes: &[Silhouette]) -> Vec<f32> {
        let mut img = self.background.clone();
        let ap = &self.appearance;
        let rim = ap.rim_width_px;
        for s in silhouettes {
            let e = &s.ellipse;
            let conic = Conic2D::from_ellipse(e);
            let jmax = s.jitter.iter().fold(0.0f64, |m, j| m.max(j.abs()));
            let (lo, hi) = e.bounds();
            let m = 2.0 + jmax;
            let (lo, hi) = (Point2::new(lo.x - m, lo.y - m), Point2::new(hi.x + m, hi.y + m));
            let Some((u0, v0, u1, v1)) = self.raw_box(lo, hi) else { continue };
            let (major, minor) = (e.major_dir(), e.minor_dir());
            for v in v0..=v1 {
                for u in u0..=u1 {
                    let bg = self.background[v * self.width + u] as f64;
                    let mut acc = 0.0;
                    for sy in 0..2 {
                        for sx in 0..2 {
                            let p = self.ideal_at(u, v, sx, sy);
                            if p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y {
                                acc += bg;
                                continue;
                            }
                            let mut d = conic.sampson(p);
                            if !s.jitter.is_empty() {
                                let q = p - e.center();
                                let phi = (q.dot(&minor) / e.b).atan2(q.dot(&major) / e.a);
                                d -= interp_periodic(&s.jitter, phi);
                            }
                            // linear ramps over the subsample footprint give exact box coverage of straight edges
                            let c_out = (0.5 - d / 0.5).clamp(0.0, 1.0);
                            let c_in = (0.5 - (d + rim) / 0.5).clamp(0.0, 1.0);
                            acc += bg * (1.0 - c_out) + ap.rim * (c_out - c_in) + ap.interior * c_in;
                        }
                    }
                    let val = (acc / 4.0) as f32;
                    let px = &mut img[v * self.width + u];
                    if val < *px {
                        *px = val;
                    }
                }
            }
        }
        img
    }

    /// Final 8-bit image: shaded outlines plus Gaussian noise, or an under-exposed black frame.
    pub fn render(&self, silhouettes: &[Silhouette], black: bool, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let n = self.width * self.height;
        if black {
            let s = self.noise_sigma.min(1.0);
            return (0..n)
                .map(|_| {
                    let z: f64 = if s > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
                    (2.0 + s * z).round().clamp(0.0, 7.0) as u8
                })
                .collect();
        }
        let img = self.shade(silhouettes);
        let sigma = self.noise_sigma as f32;
        img.iter()
            .map(|&x| {
                let z: f32 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                // truncation of a non-negative value is floor
                ((x + sigma * z + 0.5).max(0.0) as u32).min(255) as u8
            })
            .collect()
    }
}

fn interp_periodic(nodes: &[f64], phi: f64) -> f64 {
    let n = nodes.len();
    let x = phi.rem_euclid(2.0 * PI) / (2.0 * PI) * n as f64;
    let i = (x.floor() as usize) % n;
    let f = x - x.floor();
    nodes[i] * (1.0 - f) + nodes[(i + 1) % n] * f
}

/// Static illumination with optional smooth texture and sediment blobs, raw pixels.
fn background_layer(config: &SceneConfig, camera: CameraId) -> Vec<f32> {
    let (w, h) = (config.width, config.height);
    let ap = &config.appearance;
    // texture phases depend only on the seed and the camera
    let ph = (config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ camera.number() as u64) as f64 / u64::MAX as f64 * 2.0 * PI;
    let mut bg = vec![0f32; w * h];
    for v in 0..h {
        for u in 0..w {
            let t = (2.0 * PI * u as f64 / 173.0 + ph).sin() * (2.0 * PI * v as f64 / 131.0 + 2.0 * ph).sin();
            bg[v * w + u] = (ap.background + ap.texture_amplitude * t) as f32;
        }
    }
    for s in config.sediment.iter().filter(|s| s.camera == camera) {
        let r = s.radius_px;
        let (u0, u1) = ((s.u - r - 1.0).floor().max(0.0) as usize, ((s.u + r + 1.0).ceil().max(0.0) as usize).min(w - 1));
        let (v0, v1) = ((s.v - r - 1.0).floor().max(0.0) as usize, ((s.v + r + 1.0).ceil().max(0.0) as usize).min(h - 1));
        for v in v0..=v1 {
            for u in u0..=u1 {
                let d = ((u as f64 - s.u).powi(2) + (v as f64 - s.v).powi(2)).sqrt();
                let cov = (r + 0.5 - d).clamp(0.0, 1.0) as f32;
                let px = &mut bg[v * w + u];
                *px += (s.intensity as f32 - *px) * cov;
            }
        }
    }
    bg
}
