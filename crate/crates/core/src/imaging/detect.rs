use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use crate::error::{Error, Result};
use crate::geometry::CameraId;
use crate::quadrics::{fit_ellipse, Conic2D, EllipseParams};

/// Axis-aligned rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BBox {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        Self { u_min, v_min, u_max, v_max }
    }

    pub fn from_center(u: f64, v: f64, width: f64, height: f64) -> Self {
        Self::new(u - width / 2.0, v - height / 2.0, u + width / 2.0, v + height / 2.0)
    }

    pub fn around(points: &[Point2<f64>]) -> Option<Self> {
        let first = points.first()?;
        let mut b = Self::new(first.x, first.y, first.x, first.y);
        for p in points {
            b.u_min = b.u_min.min(p.x);
            b.v_min = b.v_min.min(p.y);
            b.u_max = b.u_max.max(p.x);
            b.v_max = b.v_max.max(p.y);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new((self.u_min + self.u_max) / 2.0, (self.v_min + self.v_max) / 2.0)
    }

    pub fn contains(&self, p: Point2<f64>) -> bool {
        p.x >= self.u_min && p.x <= self.u_max && p.y >= self.v_min && p.y <= self.v_max
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.u_max.min(other.u_max) - self.u_min.max(other.u_min);
        let h = self.v_max.min(other.v_max) - self.v_min.max(other.v_min);
        w.max(0.0) * h.max(0.0)
    }

    /// Intersection over union; 0 for disjoint or empty boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectParams {
    /// Foreground level that seeds a region of interest.
    pub roi_threshold: u8,
    pub roi_margin: usize,
    /// Regions with fewer seed pixels are ignored.
    pub min_roi_pixels: usize,
    /// Fixed Canny high threshold (gray levels per pixel); Otsu when absent.
    pub high_threshold: Option<f64>,
    /// Floor applied to the Otsu threshold so flat noise never forms edges.
    pub min_high_threshold: f64,
    pub low_ratio: f64,
    pub min_contour_px: f64,
    pub merge_gap_px: f64,
    /// RMS distance of hull points to the fitted ellipse above which an outline is
    /// flagged as a merged contour.
    pub merge_residual_px: f64,
    /// Depth of the deepest notch between the outline and its hull above which an
    /// outline is flagged as merged.
    pub merge_concavity_px: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            roi_threshold: 10,
            roi_margin: 4,
            min_roi_pixels: 3,
            high_threshold: None,
            min_high_threshold: 8.0,
            low_ratio: 0.4,
            min_contour_px: 30.0,
            merge_gap_px: 3.0,
            merge_residual_px: 0.75,
            merge_concavity_px: 2.0,
        }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.low_ratio > 0.0
            && self.low_ratio <= 1.0
            && self.min_high_threshold > 0.0
            && self.min_contour_px >= 0.0
            && self.merge_gap_px >= 0.0
            && self.merge_residual_px > 0.0
            && self.merge_concavity_px > 0.0
            && self.high_threshold.is_none_or(|h| h > 0.0)
            && self.roi_margin >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("detection parameters out of range: {self:?}")))
        }
    }
}

/// One bubble outline in ideal pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleDetection {
    pub camera: CameraId,
    pub frame_index: u64,
    /// Convex hull of the edge group, counter-clockwise in image coordinates.
    pub contour: Vec<Point2<f64>>,
    pub ellipse: EllipseParams,
    pub bbox: BBox,
    /// Hull perimeter, px.
    pub contour_len: f64,
    /// Outline assembled from several edge groups or not elliptic.
    pub merged: bool,
    pub fit_rms: f64,
}

impl BubbleDetection {
    pub fn conic(&self) -> Conic2D {
        Conic2D::from_ellipse(&self.ellipse)
    }

    pub fn center(&self) -> Point2<f64> {
        self.ellipse.center()
    }

    pub fn json_record(&self) -> serde_json::Value {
        serde_json::json!({
            "frame_index": self.frame_index,
            "camera_id": self.camera.number(),
            "ellipse": self.ellipse,
            "bbox": self.bbox,
            "contour_len": self.contour_len,
            "merged": self.merged,
        })
    }
}

/// Writes one JSON object per line.
pub fn write_detections<W: Write>(mut w: W, detections: &[BubbleDetection]) -> std::io::Result<()> {
    for d in detections {
        serde_json::to_writer(&mut w, &d.json_record())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Roi {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Roi {
    fn overlaps(&self, o: &Roi) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    fn union(&self, o: &Roi) -> Roi {
        Roi { x0: self.x0.min(o.x0), y0: self.y0.min(o.y0), x1: self.x1.max(o.x1), y1: self.y1.max(o.y1) }
    }
}

const NEIGHBORS8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

fn regions_of_interest(fg: &Frame, p: &DetectParams) -> Vec<Roi> {
    let (w, h) = (fg.width, fg.height);
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut rois: Vec<Roi> = Vec::new();
    for start in 0..w * h {
        if seen[start] || fg.pixels[start] <= p.roi_threshold {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut count = 0;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            count += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for (dx, dy) in NEIGHBORS8 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && fg.pixels[j] > p.roi_threshold {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if count >= p.min_roi_pixels {
            let m = p.roi_margin;
            rois.push(Roi { x0: x0.saturating_sub(m), y0: y0.saturating_sub(m), x1: (x1 + m + 1).min(w), y1: (y1 + m + 1).min(h) });
        }
    }
    // merge overlapping boxes until stable
    let mut merged = true;
    while merged {
        merged = false;
        let mut out: Vec<Roi> = Vec::with_capacity(rois.len());
        for r in rois {
            if let Some(o) = out.iter_mut().find(|o| o.overlaps(&r)) {
                *o = o.union(&r);
                merged = true;
            } else {
                out.push(r);
            }
        }
        rois = out;
    }
    rois.sort_by_key(|r| (r.y0, r.x0));
    rois
}

/// Otsu threshold of a set of non-negative values over 256 bins.
pub fn otsu_threshold(values: &[f32]) -> f64 {
    let max = values.iter().copied().fold(0.0f32, f32::max) as f64;
    if max <= 0.0 || values.is_empty() {
        return 0.0;
    }
    let mut hist = [0u64; 256];
    for &v in values {
        hist[((v as f64 / max * 255.0) as usize).min(255)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0usize);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    (best_t as f64 + 1.0) / 256.0 * max
}

struct EdgeMap {
    w: usize,
    h: usize,
    /// Subpixel edge position per local pixel, NaN where there is no edge.
    pos: Vec<Point2<f64>>,
    edge: Vec<bool>,
}

/// Canny inside one region: Sobel, non-maximum suppression, hysteresis and
/// parabolic subpixel refinement along the gradient.
fn canny(fg: &Frame, roi: &Roi, p: &DetectParams) -> EdgeMap {
    let (w, h) = (roi.x1 - roi.x0, roi.y1 - roi.y0);
    let at = |x: usize, y: usize| fg.get(roi.x0 + x, roi.y0 + y) as f32;
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    let mut mag = vec![0f32; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            let sx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)) - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let sy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)) - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y * w + x;
            gx[i] = sx / 8.0;
            gy[i] = sy / 8.0;
            mag[i] = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
        }
    }
    let high = p.high_threshold.unwrap_or_else(|| otsu_threshold(&mag)).max(p.min_high_threshold) as f32;
    let low = high * p.low_ratio as f32;

    let tan22 = 0.414_213_56f32;
    let mut step = vec![(0isize, 0isize); w * h];
    let mut candidate = vec![0u8; w * h]; // 0 none, 1 weak, 2 strong
    for y in 2..h.saturating_sub(2) {
        for x in 2..w - 2 {
            let i = y * w + x;
            let m = mag[i];
            if m < low {
                continue;
            }
            let (ax, ay) = (gx[i].abs(), gy[i].abs());
            let d = if ay <= tan22 * ax {
                (1, 0)
            } else if ax <= tan22 * ay {
                (0, 1)
            } else if gx[i] * gy[i] > 0.0 {
                (1, 1)
            } else {
                (1, -1)
            };
            let fwd = mag[(y as isize + d.1) as usize * w + (x as isize + d.0) as usize];
            let back = mag[(y as isize - d.1) as usize * w + (x as isize - d.0) as usize];
            if m > back && m >= fwd {
                step[i] = d;
                candidate[i] = if m >= high { 2 } else { 1 };
            }
        }
    }
    let mut edge = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| candidate[i] == 2).collect();
    for &i in &stack {
        edge[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in NEIGHBORS8 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !edge[j] && candidate[j] == 1 {
                edge[j] = true;
                stack.push(j);
            }
        }
    }
    let mut pos = vec![Point2::new(f64::NAN, f64::NAN); w * h];
    for i in (0..w * h).filter(|&i| edge[i]) {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        let d = step[i];
        let m0 = mag[i] as f64;
        let mf = mag[(y + d.1) as usize * w + (x + d.0) as usize] as f64;
        let mb = mag[(y - d.1) as usize * w + (x - d.0) as usize] as f64;
        let denom = mb - 2.0 * m0 + mf;
        let delta = if denom < 0.0 { (0.5 * (mb - mf) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        let g = Vector2::new(gx[i] as f64, gy[i] as f64).normalize();
        let off = Vector2::new(d.0 as f64, d.1 as f64) * delta;
        let shift = g * off.dot(&g);
        pos[i] = Point2::new(roi.x0 as f64 + x as f64 + shift.x, roi.y0 as f64 + y as f64 + shift.y);
    }
    EdgeMap { w, h, pos, edge }
}

fn edge_groups(map: &EdgeMap) -> Vec<Vec<Point2<f64>>> {
    let mut seen = vec![false; map.w * map.h];
    let mut groups = Vec::new();
    let mut stack = Vec::new();
    for start in 0..map.w * map.h {
        if !map.edge[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut g = Vec::new();
        while let Some(i) = stack.pop() {
            g.push(map.pos[i]);
            let (x, y) = ((i % map.w) as isize, (i / map.w) as isize);
            for (dx, dy) in NEIGHBORS8 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= map.w as isize || ny >= map.h as isize {
                    continue;
                }
                let j = ny as usize * map.w + nx as usize;
                if map.edge[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        groups.push(g);
    }
    groups
}

fn cross(o: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by Andrew's monotone chain; collinear points dropped.
pub fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2<f64>>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

pub fn polygon_perimeter(poly: &[Point2<f64>]) -> f64 {
    match poly.len() {
        0 | 1 => 0.0,
        2 => 2.0 * (poly[1] - poly[0]).norm(),
        n => (0..n).map(|i| (poly[(i + 1) % n] - poly[i]).norm()).sum(),
    }
}

fn inside_convex(poly: &[Point2<f64>], p: Point2<f64>) -> bool {
    poly.len() >= 3 && (0..poly.len()).all(|i| cross(poly[i], poly[(i + 1) % poly.len()], p) >= -1e-9)
}

fn segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let t = if l2 == 0.0 { 0.0 } else { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}

fn segments_cross(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> bool {
    let (d1, d2) = (cross(a, b, c), cross(a, b, d));
    let (d3, d4) = (cross(c, d, a), cross(c, d, b));
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0)
}

fn edges(poly: &[Point2<f64>]) -> impl Iterator<Item = (Point2<f64>, Point2<f64>)> + '_ {
    let n = poly.len();
    (0..if n > 1 { n } else { 0 }).map(move |i| (poly[i], poly[(i + 1) % n])).chain((n == 1).then(|| (poly[0], poly[0])))
}

/// Gap between two convex polygons; 0 when they touch or overlap.
pub fn hull_gap(a: &[Point2<f64>], b: &[Point2<f64>]) -> f64 {
    if a.iter().any(|&p| inside_convex(b, p)) || b.iter().any(|&p| inside_convex(a, p)) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in edges(a) {
        for (r, s) in edges(b) {
            if segments_cross(p, q, r, s) {
                return 0.0;
            }
            best = best.min(segment_distance(p, r, s)).min(segment_distance(q, r, s));
            best = best.min(segment_distance(r, p, q)).min(segment_distance(s, p, q));
        }
    }
    best
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Edge points farther inside the hull than this belong to the inner side of the rim.
const OUTER_EDGE_TOL_PX: f64 = 1.0;

/// Points within `tol` of the closed polygon `hull`.
fn near_boundary(points: &[Point2<f64>], hull: &[Point2<f64>], tol: f64) -> Vec<Point2<f64>> {
    if hull.len() < 2 {
        return Vec::new();
    }
    points
        .iter()
        .copied()
        .filter(|&p| (0..hull.len()).any(|i| segment_distance(p, hull[i], hull[(i + 1) % hull.len()]) <= tol))
        .collect()
}

const NOTCH_SECTOR_PX: f64 = 4.0;

/// Distance from `c` along `dir` to the boundary of the convex polygon `hull` containing `c`.
fn ray_to_hull(hull: &[Point2<f64>], c: Point2<f64>, dir: Vector2<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let e = b - a;
        let den = dir.x * e.y - dir.y * e.x;
        if den.abs() < 1e-12 {
            continue;
        }
        let w = a - c;
        let t = (w.x * e.y - w.y * e.x) / den;
        let s = (w.x * dir.y - w.y * dir.x) / den;
        if t >= 0.0 && (-1e-9..=1.0 + 1e-9).contains(&s) {
            best = best.min(t);
        }
    }
    best
}

/// Deepest notch of an outline: in each angular sector around the hull centroid,
/// how far (radially) the outermost edge point stays inside the hull. Sectors span about
/// `NOTCH_SECTOR_PX` of hull perimeter so that every one holds outer edge pixels.
fn concavity_depth(points: &[Point2<f64>], hull: &[Point2<f64>]) -> f64 {
    if hull.len() < 3 {
        return 0.0;
    }
    let sectors = ((polygon_perimeter(hull) / NOTCH_SECTOR_PX) as usize).clamp(8, 64);
    let c = Point2::from(hull.iter().map(|p| p.coords).sum::<Vector2<f64>>() / hull.len() as f64);
    let mut shallowest = vec![f64::INFINITY; sectors];
    for &p in points {
        let d = p - c;
        let r = d.norm();
        if r < 1e-9 {
            continue;
        }
        let depth = ray_to_hull(hull, c, d / r) - r;
        if !depth.is_finite() {
            continue;
        }
        let k = (((d.y.atan2(d.x) + PI) / (2.0 * PI) * sectors as f64) as usize).min(sectors - 1);
        shallowest[k] = shallowest[k].min(depth);
    }
    shallowest.iter().filter(|d| d.is_finite()).fold(0.0, |m, &d| m.max(d))
}

/// Finds bubble outlines in a background-free, undistorted frame.
pub fn detect_bubbles(fg: &Frame, params: &DetectParams) -> Vec<BubbleDetection> {
    let mut out = Vec::new();
    for roi in regions_of_interest(fg, params) {
        if roi.x1 - roi.x0 < 5 || roi.y1 - roi.y0 < 5 {
            continue;
        }
        let map = canny(fg, &roi, params);
        let groups = edge_groups(&map);
        let hulls: Vec<Vec<Point2<f64>>> = groups.iter().map(|g| convex_hull(g)).collect();
        let boxes: Vec<Option<BBox>> = hulls.iter().map(|h| BBox::around(h)).collect();
        let n = groups.len();
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in i + 1..n {
                let (Some(bi), Some(bj)) = (boxes[i], boxes[j]) else { continue };
                let g = params.merge_gap_px;
                if bi.u_max + g < bj.u_min || bj.u_max + g < bi.u_min || bi.v_max + g < bj.v_min || bj.v_max + g < bi.v_min {
                    continue;
                }
                if hull_gap(&hulls[i], &hulls[j]) < g {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[rj] = ri;
                }
            }
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = find(&mut parent, i);
            members[r].push(i);
        }
        for idx in &members {
            if idx.is_empty() {
                continue;
            }
            let points: Vec<Point2<f64>> = idx.iter().flat_map(|&i| groups[i].iter().copied()).collect();
            let hull = if idx.len() == 1 { hulls[idx[0]].clone() } else { convex_hull(&points) };
            let contour_len = polygon_perimeter(&hull);
            if contour_len < params.min_contour_px {
                continue;
            }
            // hull vertices alone are the outermost noisy edge points and bias the fit outward
            let outer = near_boundary(&points, &hull, OUTER_EDGE_TOL_PX);
            let fit_points = if outer.len() >= 6 { &outer } else if hull.len() >= 6 { &hull } else { &points };
            let Ok(conic) = fit_ellipse(fit_points) else { continue };
            let ellipse = conic.to_ellipse();
            let Some(bbox) = BBox::around(&hull) else { continue };
            let c = ellipse.center();
            let plausible = ellipse.a.is_finite()
                && ellipse.b > 0.0
                && ellipse.a <= bbox.width().max(bbox.height())
                && inside_convex(&hull, c);
            if !plausible {
                continue;
            }
            let fit_rms = (hull.iter().map(|&p| conic.sampson(p).powi(2)).sum::<f64>() / hull.len() as f64).sqrt();
            let merged = fit_rms > params.merge_residual_px || concavity_depth(&points, &hull) > params.merge_concavity_px;
            out.push(BubbleDetection {
                camera: fg.meta.camera,
                frame_index: fg.meta.index,
                contour: hull,
                ellipse,
                bbox,
                contour_len,
                merged,
                fit_rms,
            });
        }
    }
    out.sort_by(|a, b| a.ellipse.v.total_cmp(&b.ellipse.v).then(a.ellipse.u.total_cmp(&b.ellipse.u)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::FrameMeta;

    fn meta() -> FrameMeta {
        FrameMeta { camera: CameraId::One, index: 3, timestamp_us: 0 }
    }

    /// Foreground of a dark-rim ellipse over a 200 background: 4×4 supersampled
    /// coverage of the rim band (2 px inside the outline) and the interior.
    fn render_fg(w: usize, h: usize, ellipses: &[EllipseParams]) -> Frame {
        let mut f = Frame::filled(meta(), w, h, 0);
        for v in 0..h {
            for u in 0..w {
                let mut acc = 0.0;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let p = Point2::new(u as f64 - 0.375 + sx as f64 * 0.25, v as f64 - 0.375 + sy as f64 * 0.25);
                        let mut val: f64 = 200.0;
                        for e in ellipses {
                            let d = (p - e.center()).norm();
                            let q = p - e.center();
                            let (c, s) = (e.theta.cos(), e.theta.sin());
                            let (x, y) = (c * q.x + s * q.y, -s * q.x + c * q.y);
                            let r = ((x / e.a).powi(2) + (y / e.b).powi(2)).sqrt();
                            // distance to outline along the ray, scaled
                            let inside = if r < 1.0 { d * (1.0 / r - 1.0) } else { -1.0 };
                            let shade = if inside < 0.0 { 200.0 } else if inside < 2.0 { 20.0 } else { 170.0 };
                            val = val.min(shade);
                        }
                        acc += val;
                    }
                }
                f.set(u, v, (200.0 - acc / 16.0).abs().round() as u8);
            }
        }
        f
    }

    #[test]
    fn blank_foreground_has_no_bubbles() {
        let f = Frame::filled(meta(), 80, 60, 0);
        assert!(detect_bubbles(&f, &DetectParams::default()).is_empty());
    }

    #[test]
    fn single_rendered_rim_is_found_and_fitted() {
        let truth = EllipseParams::new(Point2::new(61.3, 47.8), 17.0, 14.0, 0.4);
        let f = render_fg(128, 96, &[truth]);
        let dets = detect_bubbles(&f, &DetectParams::default());
        assert_eq!(dets.len(), 1, "{dets:?}");
        let d = &dets[0];
        assert!((d.center() - truth.center()).norm() < 0.5, "{:?}", d.ellipse);
        assert!((d.ellipse.a / 17.0 - 1.0).abs() < 0.03 && (d.ellipse.b / 14.0 - 1.0).abs() < 0.03, "{:?}", d.ellipse);
        assert!(!d.merged);
        assert!(d.contour_len >= 30.0);
        assert!(d.contour.iter().all(|&p| d.bbox.contains(p)));
        assert!(d.ellipse.area() > 0.0);
        assert_eq!((d.camera, d.frame_index), (CameraId::One, 3));
    }

    #[test]
    fn speck_is_rejected() {
        let f = render_fg(40, 40, &[EllipseParams::new(Point2::new(20.0, 20.0), 0.6, 0.5, 0.0)]);
        assert!(f.pixels.iter().any(|&v| v > 10));
        assert!(detect_bubbles(&f, &DetectParams::default()).is_empty());
    }

    #[test]
    fn separated_bubbles_are_separate() {
        let a = EllipseParams::new(Point2::new(40.0, 40.0), 12.0, 10.0, 0.0);
        let b = EllipseParams::new(Point2::new(100.0, 45.0), 15.0, 9.0, 1.0);
        let dets = detect_bubbles(&render_fg(150, 90, &[a, b]), &DetectParams::default());
        assert_eq!(dets.len(), 2);
        assert!(dets.iter().all(|d| !d.merged));
    }

    #[test]
    fn notch_depth_of_two_overlapping_circles() {
        let circle = |cx: f64| (0..360).map(move |k| Point2::new(cx + 13.0 * (k as f64).to_radians().cos(), 13.0 * (k as f64).to_radians().sin()));
        let single: Vec<_> = circle(0.0).collect();
        assert!(concavity_depth(&single, &convex_hull(&single)) < 0.05);
        // outer boundary of the union; the waist sits at |y| = sqrt(13² - 10²)
        let union: Vec<_> = circle(-10.0).filter(|p| p.x <= 0.0).chain(circle(10.0).filter(|p| p.x >= 0.0)).collect();
        let waist = 13.0 - (13.0f64 * 13.0 - 100.0).sqrt();
        let d = concavity_depth(&union, &convex_hull(&union));
        // the sector holding the waist also holds shallower arc points beside it
        assert!(d <= waist + 1e-9 && d > DetectParams::default().merge_concavity_px, "{d} vs {waist}");
    }

    #[test]
    fn notch_depth_of_a_notched_square() {
        // 40×40 square whose top edge has a 20 px wide, 10 px deep notch
        let mut pts = Vec::new();
        for k in 0..=40 {
            let t = k as f64;
            pts.extend([Point2::new(t, 40.0), Point2::new(0.0, t), Point2::new(40.0, t)]);
            if !(10.0..=30.0).contains(&t) {
                pts.push(Point2::new(t, 0.0));
            }
        }
        for k in 0..=20 {
            pts.push(Point2::new(10.0 + k as f64, 10.0));
        }
        for k in 0..=10 {
            pts.extend([Point2::new(10.0, k as f64), Point2::new(30.0, k as f64)]);
        }
        // the radial gap across the notch floor is 10 / cos(angle off the vertical);
        // sectors span 9°, and their edge pixels sit at most two sector widths off the axis
        let d = concavity_depth(&pts, &convex_hull(&pts));
        assert!(d >= 10.0 - 1e-9 && d <= 10.0 / 18f64.to_radians().cos(), "{d}");
    }

    #[test]
    fn overlapping_bubbles_are_flagged() {
        let a = EllipseParams::new(Point2::new(50.0, 40.0), 14.0, 12.0, 0.0);
        let b = EllipseParams::new(Point2::new(70.0, 46.0), 14.0, 12.0, 0.0);
        let dets = detect_bubbles(&render_fg(130, 90, &[a, b]), &DetectParams::default());
        assert_eq!(dets.len(), 1, "{dets:?}");
        assert!(dets[0].merged, "{:?}", dets[0].fit_rms);
    }

    #[test]
    fn iou_matches_rectangle_oracle() {
        let a = BBox::new(0.0, 0.0, 10.0, 20.0);
        assert_eq!(a.iou(&a), 1.0);
        // moved up by 20% of the height: overlap 10×16
        let b = BBox::new(0.0, -4.0, 10.0, 16.0);
        let expect = 160.0 / (200.0 + 200.0 - 160.0);
        assert!((a.iou(&b) - expect).abs() < 1e-15);
        assert_eq!(a.iou(&b), b.iou(&a));
        assert_eq!(a.iou(&BBox::new(20.0, 0.0, 30.0, 5.0)), 0.0);
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts: Vec<Point2<f64>> = [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0), (1.0, 1.0), (1.0, 0.0)]
            .iter()
            .map(|&(x, y)| Point2::new(x, y))
            .collect();
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert!((polygon_perimeter(&h) - 8.0).abs() < 1e-12);
        let far: Vec<Point2<f64>> = h.iter().map(|p| p + Vector2::new(5.0, 0.0)).collect();
        assert!((hull_gap(&h, &far) - 3.0).abs() < 1e-12);
        assert_eq!(hull_gap(&h, &h), 0.0);
    }

    #[test]
    fn otsu_splits_two_clusters() {
        let mut v = vec![1.0f32; 500];
        v.extend(vec![90.0f32; 100]);
        let t = otsu_threshold(&v);
        assert!(t > 1.0 && t < 90.0, "{t}");
    }

    #[test]
    fn dump_has_one_record_per_line() {
        let truth = EllipseParams::new(Point2::new(40.0, 40.0), 12.0, 10.0, 0.0);
        let dets = detect_bubbles(&render_fg(80, 80, &[truth]), &DetectParams::default());
        let mut buf = Vec::new();
        write_detections(&mut buf, &dets).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["frame_index", "camera_id", "ellipse", "bbox", "contour_len"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        for key in ["u", "v", "A", "B", "theta"] {
            assert!(v["ellipse"].get(key).is_some(), "{key}");
        }
    }
}
