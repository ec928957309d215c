use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point3, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::conic::Conic2D;
use crate::error::{Error, Result};
use crate::geometry::Camera;

/// Bubble shape: center, orientation (columns are the principal axes) and semi-axes in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "EllipsoidRecord", try_from = "EllipsoidRecord")]
pub struct Ellipsoid {
    pub center: Point3<f64>,
    pub rotation: Rotation3<f64>,
    pub semi_axes: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct EllipsoidRecord {
    center: [f64; 3],
    /// `[w, x, y, z]`
    q: [f64; 4],
    semi_axes: [f64; 3],
}

impl From<Ellipsoid> for EllipsoidRecord {
    fn from(e: Ellipsoid) -> Self {
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&e.rotation);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        Self { center: e.center.coords.into(), q: [q.w, q.i, q.j, q.k], semi_axes: e.semi_axes.into() }
    }
}

impl TryFrom<EllipsoidRecord> for Ellipsoid {
    type Error = String;
    fn try_from(r: EllipsoidRecord) -> std::result::Result<Self, String> {
        let pose = crate::geometry::Pose::from_quaternion_wxyz(r.q, [0.0; 3]).map_err(|e| e.to_string())?;
        if r.semi_axes.iter().any(|&s| !(s > 0.0)) {
            return Err(format!("semi-axes must be positive, got {:?}", r.semi_axes));
        }
        Ok(Ellipsoid { center: r.center.into(), rotation: pose.rotation, semi_axes: r.semi_axes.into() })
    }
}

impl Ellipsoid {
    pub fn new(center: Point3<f64>, rotation: Rotation3<f64>, semi_axes: Vector3<f64>) -> Self {
        Self { center, rotation, semi_axes }
    }

    pub fn sphere(center: Point3<f64>, radius: f64) -> Self {
        Self::new(center, Rotation3::identity(), Vector3::repeat(radius))
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.semi_axes.x * self.semi_axes.y * self.semi_axes.z
    }

    /// Diameter of the sphere with the same volume.
    pub fn equivalent_diameter(&self) -> f64 {
        2.0 * (self.semi_axes.x * self.semi_axes.y * self.semi_axes.z).cbrt()
    }

    pub fn max_axis(&self) -> f64 {
        self.semi_axes.max()
    }

    /// Maps the unit sphere onto this ellipsoid: `H = [R·diag(a,b,c) | t; 0 1]`.
    pub fn point_transform(&self) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        let rd = self.rotation.matrix() * Matrix3::from_diagonal(&self.semi_axes);
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&rd);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.center.coords);
        h
    }

    /// Shape matrix `M` with `(X − t)ᵀ M (X − t) = 1` on the surface.
    pub fn shape_matrix(&self) -> Matrix3<f64> {
        let inv_sq = self.semi_axes.map(|s| 1.0 / (s * s));
        self.rotation.matrix() * Matrix3::from_diagonal(&inv_sq) * self.rotation.matrix().transpose()
    }

    /// Dual (tangent-plane) quadric `H·diag(1,1,1,−1)·Hᵀ`, computed without inversion.
    pub fn dual_matrix(&self) -> Matrix4<f64> {
        let h = self.point_transform();
        h * Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, -1.0)) * h.transpose()
    }

    /// Surface point at polar angle `theta` and azimuth `phi` in the body frame.
    pub fn surface_point(&self, theta: f64, phi: f64) -> Point3<f64> {
        let u = Vector3::new(
            self.semi_axes.x * theta.sin() * phi.cos(),
            self.semi_axes.y * theta.sin() * phi.sin(),
            self.semi_axes.z * theta.cos(),
        );
        self.center + self.rotation * u
    }

    /// `(X − t)ᵀ M (X − t) − 1`: negative inside.
    pub fn implicit(&self, x: &Point3<f64>) -> f64 {
        let d = x - self.center;
        d.dot(&(self.shape_matrix() * d)) - 1.0
    }

    /// Axes sorted descending with deterministic column signs.
    pub fn canonical(&self) -> Self {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| self.semi_axes[j].total_cmp(&self.semi_axes[i]));
        let r = self.rotation.matrix();
        let cols: Vec<Vector3<f64>> = order.iter().map(|&i| r.column(i).into_owned()).collect();
        let axes = Vector3::new(self.semi_axes[order[0]], self.semi_axes[order[1]], self.semi_axes[order[2]]);
        Self::new(self.center, canonical_frame(cols[0], cols[1]), axes)
    }
}

/// Rotation whose first two columns are `c0`, `c1` up to sign (largest component made
/// positive) and whose third column completes a right-handed frame.
fn canonical_frame(c0: Vector3<f64>, c1: Vector3<f64>) -> Rotation3<f64> {
    let fix = |c: Vector3<f64>| {
        let k = c.iamax();
        if c[k] < 0.0 {
            -c
        } else {
            c
        }
    };
    let c0 = fix(c0);
    let c1 = fix(c1);
    let c2 = c0.cross(&c1);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[c0, c1, c2]))
}

/// Symmetric 4×4 point quadric `X̃ᵀ Q X̃ = 0`, stored with unit Frobenius norm and the
/// sign that makes the leading 3×3 block's trace positive (interior negative for ellipsoids).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadric {
    m: Matrix4<f64>,
}

impl Quadric {
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        let asym = (m - m.transpose()).norm();
        let norm = m.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::NotAnEllipsoid("quadric matrix is zero or non-finite".into()));
        }
        if asym > 1e-12 * norm {
            return Err(Error::NotAnEllipsoid(format!("quadric is not symmetric (asymmetry {asym:e})")));
        }
        let mut q = (m + m.transpose()) * (0.5 / norm);
        if q.fixed_view::<3, 3>(0, 0).trace() < 0.0 {
            q = -q;
        }
        Ok(Self { m: q })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    pub fn evaluate(&self, x: &Point3<f64>) -> f64 {
        let h = x.to_homogeneous();
        h.dot(&(self.m * h))
    }

    /// `Q* = Q⁻¹`, scaled so that `Q*₃₃ = −1` for an ellipsoid.
    pub fn dual(&self) -> Result<Matrix4<f64>> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::NotAnEllipsoid("quadric is rank deficient".into()))?;
        if inv[(3, 3)] == 0.0 || !inv[(3, 3)].is_finite() {
            return Err(Error::NotAnEllipsoid("dual quadric has no finite center".into()));
        }
        Ok(inv / -inv[(3, 3)])
    }
}

pub fn ellipsoid_to_quadric(e: &Ellipsoid) -> Quadric {
    let m = e.shape_matrix();
    let mt = m * e.center.coords;
    let mut q = Matrix4::zeros();
    q.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    q.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-mt));
    q.fixed_view_mut::<1, 3>(3, 0).copy_from(&(-mt).transpose());
    q[(3, 3)] = e.center.coords.dot(&mt) - 1.0;
    let q = (q + q.transpose()) * 0.5;
    Quadric { m: q / q.norm() }
}

pub fn quadric_to_ellipsoid(q: &Quadric) -> Result<Ellipsoid> {
    let m = q.matrix();
    let a = m.fixed_view::<3, 3>(0, 0).into_owned();
    let b = m.fixed_view::<3, 1>(0, 3).into_owned();
    let eig = a.symmetric_eigen();
    let max = eig.eigenvalues.abs().max();
    if eig.eigenvalues.min() <= 1e-13 * max {
        return Err(Error::NotAnEllipsoid(format!(
            "leading block is not positive definite (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let a_inv = a.try_inverse().ok_or_else(|| Error::NotAnEllipsoid("singular leading block".into()))?;
    let t0 = -(a_inv * b);
    // one refinement step; the center feeds the scale k through a large cancellation
    let t = t0 + a_inv * (-b - a * t0);
    let k = m[(3, 3)] + b.dot(&t);
    if !(k < 0.0) {
        return Err(Error::NotAnEllipsoid(format!("quadric has no real points (k = {k:e})")));
    }
    let axes = eig.eigenvalues.map(|l| (-k / l).sqrt());
    let mut r = eig.eigenvectors;
    if r.determinant() < 0.0 {
        r.column_mut(2).neg_mut();
    }
    Ok(Ellipsoid::new(Point3::from(t), Rotation3::from_matrix_unchecked(r), axes).canonical())
}

/// Image conic of a dual quadric under `P` (undistorted pixels).
pub fn project_dual(p: &Matrix3x4<f64>, dual: &Matrix4<f64>) -> Result<Conic2D> {
    let mut p = *p;
    if p.fixed_view::<3, 3>(0, 0).determinant() < 0.0 {
        p = -p;
    }
    let d = dual / -dual[(3, 3)];
    if !d[(3, 3)].is_finite() {
        return Err(Error::DegenerateProjection("dual quadric has no finite center".into()));
    }
    let t = -d.fixed_view::<3, 1>(0, 3).into_owned();
    let spread = d.fixed_view::<3, 3>(0, 0) + t * t.transpose();
    let max_axis = spread.symmetric_eigenvalues().max().max(0.0).sqrt();

    let c = camera_center(&p)?;
    let dist = (c - t).norm();
    if let Some(shape) = spread.try_inverse() {
        if (c - t).dot(&(shape * (c - t))) <= 1.0 {
            return Err(Error::DegenerateProjection("camera center lies inside the quadric".into()));
        }
    }
    let plane: Vector4<f64> = p.row(2).transpose();
    if plane.dot(&t.push(1.0)) <= 0.0 || plane.dot(&(d * plane)) >= 0.0 {
        return Err(Error::DegenerateProjection("quadric is not entirely in front of the camera".into()));
    }
    if dist <= 3.0 * max_axis {
        return Err(Error::DegenerateProjection(format!(
            "camera-to-center distance {dist:.3} mm is within 3× the largest semi-axis {max_axis:.3} mm"
        )));
    }
    let c_star = p * d * p.transpose();
    let conic = c_star
        .try_inverse()
        .ok_or_else(|| Error::DegenerateProjection("projected dual conic is singular".into()))?;
    Conic2D::from_matrix(conic)
}

pub fn project_quadric(p: &Matrix3x4<f64>, q: &Quadric) -> Result<Conic2D> {
    let dual = q.dual().map_err(|e| Error::DegenerateProjection(e.to_string()))?;
    project_dual(p, &dual)
}

/// Silhouette of an ellipsoid in a camera's ideal (undistorted) image.
pub fn project_ellipsoid(camera: &Camera, e: &Ellipsoid) -> Result<Conic2D> {
    project_dual(&camera.projection_matrix(), &e.dual_matrix())
}

fn camera_center(p: &Matrix3x4<f64>) -> Result<Vector3<f64>> {
    let minor = |skip: usize| {
        let cols: Vec<_> = (0..4).filter(|&j| j != skip).map(|j| p.column(j).into_owned()).collect();
        Matrix3::from_columns(&cols).determinant()
    };
    let h = Vector4::new(minor(0), -minor(1), minor(2), -minor(3));
    if h.w.abs() < 1e-300 {
        return Err(Error::DegenerateProjection("camera at infinity".into()));
    }
    Ok(h.xyz() / h.w)
}
