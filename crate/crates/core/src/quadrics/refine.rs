use nalgebra::{DVector, Point2, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::conic::Conic2D;
use super::ellipsoid::{project_dual, Ellipsoid};
use super::lm::{minimize, DenseProblem, LmSettings};
use crate::error::{Error, Result};
use crate::geometry::{CameraId, StereoRig};

/// Fewest silhouette points per view accepted by the adjustment.
pub const MIN_CONTOUR_POINTS: usize = 8;
/// Silhouette samples per view when sampling a fitted ellipse.
pub const DEFAULT_SAMPLES: usize = 64;

/// Which points of a detection feed the adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourSampling {
    /// Points uniformly spaced in the parametric angle of the fitted ellipse.
    #[default]
    FittedEllipse,
    /// The detected contour pixels themselves.
    RawContour,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub ellipsoid: Ellipsoid,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `ellipsoid` is then the best iterate.
    pub converged: bool,
}

impl Refinement {
    /// Root-mean-square silhouette residual in px.
    pub fn rms(&self, n_points: usize) -> f64 {
        (self.cost / n_points.max(1) as f64).sqrt()
    }
}

/// Local 9-dof parameterization around a reference orientation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EllipsoidChart {
    pub base_rotation: Rotation3<f64>,
}

impl EllipsoidChart {
    pub const DIM: usize = 9;

    pub fn encode(&self, e: &Ellipsoid) -> [f64; 9] {
        let rel = e.rotation * self.base_rotation.inverse();
        let w = rel.scaled_axis();
        let c = e.center;
        let s = e.semi_axes.map(f64::ln);
        [c.x, c.y, c.z, w.x, w.y, w.z, s.x, s.y, s.z]
    }

    pub fn decode(&self, x: &[f64]) -> Option<Ellipsoid> {
        let rot = Rotation3::from_scaled_axis(Vector3::new(x[3], x[4], x[5])) * self.base_rotation;
        let axes = Vector3::new(x[6].exp(), x[7].exp(), x[8].exp());
        if !axes.iter().all(|a| a.is_finite() && *a > 0.0) {
            return None;
        }
        Some(Ellipsoid::new(nalgebra::Point3::new(x[0], x[1], x[2]), rot, axes))
    }

    pub fn steps(x: &[f64]) -> [f64; 9] {
        let c = |v: f64| 1e-6 * (1.0 + v.abs());
        [c(x[0]), c(x[1]), c(x[2]), 1e-6, 1e-6, 1e-6, 1e-6, 1e-6, 1e-6]
    }
}

/// Sampson residuals of both views' silhouette points against the ellipsoid's projections.
pub(crate) fn silhouette_residuals(
    p1: &nalgebra::Matrix3x4<f64>,
    p2: &nalgebra::Matrix3x4<f64>,
    e: &Ellipsoid,
    pts1: &[Point2<f64>],
    pts2: &[Point2<f64>],
    out: &mut Vec<f64>,
) -> Option<()> {
    let dual = e.dual_matrix();
    let c1 = project_dual(p1, &dual).ok()?;
    let c2 = project_dual(p2, &dual).ok()?;
    push_residuals(&c1, pts1, out);
    push_residuals(&c2, pts2, out);
    Some(())
}

fn push_residuals(c: &Conic2D, pts: &[Point2<f64>], out: &mut Vec<f64>) {
    out.extend(pts.iter().map(|p| c.sampson(*p)));
}

/// Adjusts an ellipsoid so that its two projected outlines fit the given silhouette points
/// (ideal pixel coordinates), minimizing the summed squared Sampson distances.
pub fn refine_ellipsoid(
    rig: &StereoRig,
    e0: &Ellipsoid,
    contour1: &[Point2<f64>],
    contour2: &[Point2<f64>],
    settings: &LmSettings,
) -> Result<Refinement> {
    if contour1.len() < MIN_CONTOUR_POINTS || contour2.len() < MIN_CONTOUR_POINTS {
        return Err(Error::Underconstrained(format!(
            "refinement needs ≥ {MIN_CONTOUR_POINTS} points per view, got {} and {}",
            contour1.len(),
            contour2.len()
        )));
    }
    let p1 = rig.camera(CameraId::One).projection_matrix();
    let p2 = rig.camera(CameraId::Two).projection_matrix();
    let chart = EllipsoidChart { base_rotation: e0.rotation };
    let x0 = DVector::from_row_slice(&chart.encode(e0));
    let residuals = |x: &DVector<f64>| {
        let e = chart.decode(x.as_slice())?;
        let mut out = Vec::with_capacity(contour1.len() + contour2.len());
        silhouette_residuals(&p1, &p2, &e, contour1, contour2, &mut out)?;
        Some(DVector::from_vec(out))
    };
    let problem = DenseProblem { residuals, steps: DVector::from_row_slice(&EllipsoidChart::steps(x0.as_slice())) };
    let out = minimize(&problem, x0, settings)
        .ok_or_else(|| Error::DegenerateProjection("initial ellipsoid does not project to both views".into()))?;
    let ellipsoid = chart.decode(out.params.as_slice()).expect("accepted iterate is valid").canonical();
    Ok(Refinement {
        ellipsoid,
        initial_cost: out.initial_cost,
        cost: out.cost,
        iterations: out.iterations,
        converged: out.converged,
    })
}
