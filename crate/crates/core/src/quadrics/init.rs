use nalgebra::{Matrix3, Point2, Point3, Rotation3, Vector3};

use super::conic::{Conic2D, EllipseParams};
use super::ellipsoid::Ellipsoid;
use crate::error::Result;
use crate::geometry::{triangulate_midpoint, Camera, CameraId, Ray, StereoRig};

/// Closed-form starting ellipsoid from a matched pair of silhouette ellipses.
///
/// The center is the midpoint triangulation of the ellipse centers. The axis endpoints
/// of each ellipse are back-projected onto the plane through that center perpendicular to
/// the viewing ray; view 1's major axis and the most orthogonal axis of view 2 span the
/// frame, completed by their cross product and orthonormalized.
pub fn init_ellipsoid(rig: &StereoRig, ell1: &Conic2D, ell2: &Conic2D) -> Result<Ellipsoid> {
    let cam1 = rig.camera(CameraId::One);
    let cam2 = rig.camera(CameraId::Two);
    let e1 = ell1.to_ellipse();
    let e2 = ell2.to_ellipse();
    let r1 = cam1.back_project_ideal(e1.center());
    let r2 = cam2.back_project_ideal(e2.center());
    let (center, _gap) = triangulate_midpoint(&r1, &r2)?;

    let [major1, minor1] = axis_vectors(&cam1, &r1, &e1, &center);
    let [major2, minor2] = axis_vectors(&cam2, &r2, &e2, &center);

    let u = major1;
    let v = if cos_abs(&major2, &u) <= cos_abs(&minor2, &u) { major2 } else { minor2 };
    let w = u.cross(&v);
    let frame = Matrix3::from_columns(&[u.normalize(), v.normalize(), w.normalize()]);
    let rotation = nearest_rotation(&frame);

    let features = [major1, minor1, major2, minor2];
    let mut axes = Vector3::zeros();
    for k in 0..3 {
        let rk = rotation.matrix().column(k);
        axes[k] = features.iter().map(|f| f.dot(&rk).abs()).fold(0.0, f64::max) / 2.0;
    }
    // a silhouette never hides all extent along an axis, but guard against zeros anyway
    let floor = axes.max() * 1e-3;
    axes = axes.map(|a| a.max(floor));
    Ok(Ellipsoid::new(center, rotation, axes).canonical())
}

fn cos_abs(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).abs()
}

/// Full-length major and minor axis vectors (endpoint to endpoint) at the bubble's depth.
fn axis_vectors(cam: &Camera, center_ray: &Ray, e: &EllipseParams, center: &Point3<f64>) -> [Vector3<f64>; 2] {
    let n = center_ray.direction.into_inner();
    let on_plane = |px: Point2<f64>| {
        let ray = cam.back_project_ideal(px);
        let d = ray.direction.into_inner();
        let s = (center - ray.origin).dot(&n) / d.dot(&n);
        ray.at(s)
    };
    let c = e.center();
    let major = on_plane(c + e.major_dir() * e.a) - on_plane(c - e.major_dir() * e.a);
    let minor = on_plane(c + e.minor_dir() * e.b) - on_plane(c - e.minor_dir() * e.b);
    [major, minor]
}

/// Closest rotation in the Frobenius norm (polar factor), with determinant +1.
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let mut u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    Rotation3::from_matrix_unchecked(u * v_t)
}
