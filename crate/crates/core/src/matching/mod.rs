//! Stereo correspondence of detections under the epipolar constraint, solved as one bipartite assignment.

mod assignment;

pub use assignment::{solve_assignment, Assignment, Edge};

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{epipolar_distance, StereoRig};
use crate::imaging::BubbleDetection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Symmetric epipolar distance above which a pair is not a candidate, px.
    pub gate_px: f64,
    /// Weight of `|ln(area1 / area2)|` added to the cost.
    pub area_weight: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { gate_px: 5.0, area_weight: 0.0 }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.gate_px > 0.0 && self.area_weight >= 0.0 && self.gate_px.is_finite() && self.area_weight.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("matching parameters out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub det1: usize,
    pub det2: usize,
    pub epi_dist: f64,
    pub cost: f64,
}

impl From<&MatchCandidate> for Edge {
    fn from(c: &MatchCandidate) -> Self {
        Edge { left: c.det1, right: c.det2, cost: c.cost }
    }
}

/// All cross pairs whose ellipse centers lie within the epipolar gate.
pub fn build_candidates(
    rig: &StereoRig,
    dets1: &[BubbleDetection],
    dets2: &[BubbleDetection],
    params: &MatchParams,
) -> Vec<MatchCandidate> {
    let c1: Vec<(Point2<f64>, f64)> = dets1.iter().map(|d| (d.center(), d.ellipse.area())).collect();
    let c2: Vec<(Point2<f64>, f64)> = dets2.iter().map(|d| (d.center(), d.ellipse.area())).collect();
    candidates_from_centers(rig, &c1, &c2, params)
}

/// Same as [`build_candidates`] on bare `(center, area)` pairs.
pub fn candidates_from_centers(
    rig: &StereoRig,
    c1: &[(Point2<f64>, f64)],
    c2: &[(Point2<f64>, f64)],
    params: &MatchParams,
) -> Vec<MatchCandidate> {
    let mut out = Vec::new();
    for (i, &(p1, a1)) in c1.iter().enumerate() {
        for (j, &(p2, a2)) in c2.iter().enumerate() {
            let epi_dist = epipolar_distance(rig, p1, p2);
            if epi_dist < params.gate_px {
                let area = if params.area_weight > 0.0 && a1 > 0.0 && a2 > 0.0 { (a1 / a2).ln().abs() } else { 0.0 };
                out.push(MatchCandidate { det1: i, det2: j, epi_dist, cost: epi_dist + params.area_weight * area });
            }
        }
    }
    out
}

/// Candidates plus the optimal assignment over them.
pub fn match_detections(
    rig: &StereoRig,
    dets1: &[BubbleDetection],
    dets2: &[BubbleDetection],
    params: &MatchParams,
) -> Assignment {
    let cands = build_candidates(rig, dets1, dets2, params);
    let edges: Vec<Edge> = cands.iter().map(Edge::from).collect();
    solve_assignment(&edges, dets1.len(), dets2.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraId;
    use crate::quadrics::{project_ellipsoid, Ellipsoid};
    use nalgebra::Vector3;

    fn project_pair(rig: &StereoRig, e: &Ellipsoid) -> ((Point2<f64>, f64), (Point2<f64>, f64)) {
        let a = project_ellipsoid(&rig.camera(CameraId::One), e).unwrap().to_ellipse();
        let b = project_ellipsoid(&rig.camera(CameraId::Two), e).unwrap().to_ellipse();
        ((a.center(), a.area()), (b.center(), b.area()))
    }

    #[test]
    fn single_bubble_gives_one_close_candidate() {
        let rig = StereoRig::laboratory_reference();
        let c = rig.axes_crossing().unwrap();
        let e = Ellipsoid::sphere(c + Vector3::new(3.0, -10.0, 2.0), 3.0);
        let (a, b) = project_pair(&rig, &e);
        let cands = candidates_from_centers(&rig, &[a], &[b], &MatchParams::default());
        assert_eq!(cands.len(), 1);
        assert!(cands[0].epi_dist < 0.5);
    }

    #[test]
    fn equal_height_bubbles_resolve_globally() {
        let rig = StereoRig::laboratory_reference();
        let c = rig.axes_crossing().unwrap();
        // same height, different depth: both epipolar lines are nearly the same row band
        let e1 = Ellipsoid::sphere(c + Vector3::new(-12.0, 5.0, 10.0), 2.5);
        let e2 = Ellipsoid::sphere(c + Vector3::new(14.0, 5.0, -8.0), 2.5);
        let (a1, b1) = project_pair(&rig, &e1);
        let (a2, b2) = project_pair(&rig, &e2);
        let cands = candidates_from_centers(&rig, &[a1, a2], &[b2, b1], &MatchParams { gate_px: 50.0, ..Default::default() });
        assert_eq!(cands.len(), 4);
        let edges: Vec<Edge> = cands.iter().map(Edge::from).collect();
        let asg = solve_assignment(&edges, 2, 2);
        let mut pairs = asg.pairs.clone();
        pairs.sort();
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn empty_detections_give_no_candidates() {
        let rig = StereoRig::laboratory_reference();
        assert!(candidates_from_centers(&rig, &[], &[], &MatchParams::default()).is_empty());
        let asg = solve_assignment(&[], 0, 3);
        assert!(asg.pairs.is_empty());
        assert_eq!(asg.unmatched2, vec![0, 1, 2]);
    }

    #[test]
    fn area_penalty_is_optional() {
        let rig = StereoRig::laboratory_reference();
        let p = Point2::new(500.0, 400.0);
        let line = crate::geometry::epipolar_line(&rig, p);
        // a point on the epipolar line
        let q = Point2::new(400.0, -(line.a * 400.0 + line.c) / line.b);
        let plain = candidates_from_centers(&rig, &[(p, 100.0)], &[(q, 400.0)], &MatchParams::default());
        let weighted = candidates_from_centers(&rig, &[(p, 100.0)], &[(q, 400.0)], &MatchParams { area_weight: 2.0, ..Default::default() });
        assert!((plain[0].cost - plain[0].epi_dist).abs() < 1e-15);
        assert!((weighted[0].cost - plain[0].cost - 2.0 * 4f64.ln()).abs() < 1e-12);
    }
}
