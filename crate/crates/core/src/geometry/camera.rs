use nalgebra::{Matrix3, Matrix3x4, Point2, Point3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration cap for the fixed-point undistortion.
pub const UNDISTORT_MAX_ITERS: usize = 20;
/// Step size (normalized coordinates) at which undistortion stops iterating.
pub const UNDISTORT_TOL: f64 = 1e-12;

/// Perspective intrinsics with Brown–Conrady distortion (two radial, two tangential terms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
}

impl Intrinsics {
    /// Distortion-free pinhole intrinsics.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy, k1: 0.0, k2: 0.0, p1: 0.0, p2: 0.0 }
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64, p1: f64, p2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self.p1 = p1;
        self.p2 = p2;
        self
    }

    /// Same focal lengths and principal point, distortion removed.
    pub fn without_distortion(&self) -> Self {
        Self::pinhole(self.fx, self.fy, self.cx, self.cy)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.p1, self.p2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("intrinsics contain non-finite values".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy)));
        }
        Ok(())
    }

    pub fn is_distortion_free(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Applies the distortion model to a point in normalized image coordinates.
    pub fn distort_normalized(&self, p: Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        Vector2::new(x * radial + dx, y * radial + dy)
    }

    /// Inverts [`distort_normalized`](Self::distort_normalized) by fixed-point iteration.
    pub fn undistort_normalized(&self, pd: Vector2<f64>) -> Vector2<f64> {
        if self.is_distortion_free() {
            return pd;
        }
        let mut p = pd;
        for _ in 0..UNDISTORT_MAX_ITERS {
            let (x, y) = (p.x, p.y);
            let r2 = x * x + y * y;
            let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
            let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            let next = Vector2::new((pd.x - dx) / radial, (pd.y - dy) / radial);
            let step = (next - p).norm();
            p = next;
            if step < UNDISTORT_TOL {
                break;
            }
        }
        p
    }

    pub fn pixel_to_normalized(&self, px: Point2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    pub fn normalized_to_pixel(&self, n: Vector2<f64>) -> Point2<f64> {
        Point2::new(self.fx * n.x + self.cx, self.fy * n.y + self.cy)
    }

    /// Maps an ideal (undistorted) pixel to where the lens images it.
    pub fn distort_pixel(&self, ideal: Point2<f64>) -> Point2<f64> {
        self.normalized_to_pixel(self.distort_normalized(self.pixel_to_normalized(ideal)))
    }

    /// Maps a raw pixel to its ideal (undistorted) position.
    pub fn undistort_pixel(&self, raw: Point2<f64>) -> Point2<f64> {
        self.normalized_to_pixel(self.undistort_normalized(self.pixel_to_normalized(raw)))
    }
}

/// Rigid world-to-camera transform, `x_cam = R · x_world + t`, translation in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds a pose from a `[w, x, y, z]` quaternion (normalized here) and a translation.
    pub fn from_quaternion_wxyz(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::Config(format!("quaternion {q:?} cannot be normalized")));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Ok(Self { rotation: unit.to_rotation_matrix(), translation: Vector3::from(t) })
    }

    /// Rotation as `[w, x, y, z]` with non-negative real part.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    pub fn transform_point(&self, x: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * x.coords + self.translation)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn camera_center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest deviation of `RᵀR` from identity, plus `|det R − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation.matrix();
        let e = (r.transpose() * r - Matrix3::identity()).abs().max();
        e.max((r.determinant() - 1.0).abs())
    }
}

/// A viewing ray in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Unit<Vector3<f64>>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Self {
        Self { origin, direction: Unit::new_normalize(direction) }
    }

    pub fn at(&self, distance: f64) -> Point3<f64> {
        self.origin + self.direction.into_inner() * distance
    }
}

/// Intrinsics plus pose: everything needed to image a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    fn normalized(&self, x: &Point3<f64>) -> Result<Vector2<f64>> {
        let xc = self.pose.transform_point(x);
        if xc.z <= 0.0 || !xc.z.is_finite() {
            return Err(Error::BehindCamera { depth: xc.z });
        }
        Ok(Vector2::new(xc.x / xc.z, xc.y / xc.z))
    }

    /// Projects a world point to raw (distorted) pixel coordinates.
    pub fn project(&self, x: &Point3<f64>) -> Result<Point2<f64>> {
        let n = self.normalized(x)?;
        Ok(self.intrinsics.normalized_to_pixel(self.intrinsics.distort_normalized(n)))
    }

    /// Projects a world point to ideal (undistorted) pixel coordinates.
    pub fn project_ideal(&self, x: &Point3<f64>) -> Result<Point2<f64>> {
        Ok(self.intrinsics.normalized_to_pixel(self.normalized(x)?))
    }

    /// Viewing ray through a raw (distorted) pixel.
    pub fn back_project(&self, px: Point2<f64>) -> Ray {
        let n = self.intrinsics.undistort_normalized(self.intrinsics.pixel_to_normalized(px));
        self.ray_from_normalized(n)
    }

    /// Viewing ray through an ideal (undistorted) pixel.
    pub fn back_project_ideal(&self, px: Point2<f64>) -> Ray {
        self.ray_from_normalized(self.intrinsics.pixel_to_normalized(px))
    }

    fn ray_from_normalized(&self, n: Vector2<f64>) -> Ray {
        let dir_cam = Vector3::new(n.x, n.y, 1.0);
        let dir_world = self.pose.rotation.transpose() * dir_cam;
        Ray::new(self.pose.camera_center(), dir_world)
    }

    pub fn center(&self) -> Point3<f64> {
        self.pose.camera_center()
    }

    /// Undistorted projection matrix `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        self.intrinsics.k_matrix() * self.pose.matrix()
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, x: &Point3<f64>) -> f64 {
        self.pose.transform_point(x).z
    }
}

/// Closest approach of two rays: the midpoint of their common perpendicular and its length.
pub fn triangulate_midpoint(r1: &Ray, r2: &Ray) -> Result<(Point3<f64>, f64)> {
    let d1 = r1.direction.into_inner();
    let d2 = r2.direction.into_inner();
    let cross = d1.cross(&d2);
    let sin = cross.norm();
    if sin <= 1e-9 {
        return Err(Error::DegenerateTriangulation { sin_angle: sin });
    }
    // Solve for s, u minimizing |o1 + s d1 - (o2 + u d2)|.
    let w = r1.origin - r2.origin;
    let b = d1.dot(&d2);
    let d = d1.dot(&w);
    let e = d2.dot(&w);
    let denom = 1.0 - b * b;
    let s = (b * e - d) / denom;
    let u = (e - b * d) / denom;
    let p1 = r1.at(s);
    let p2 = r2.at(u);
    Ok((Point3::from((p1.coords + p2.coords) * 0.5), (p1 - p2).norm()))
}
