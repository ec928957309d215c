use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Point2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parametric ellipse: center, semi-axes `A ≥ B` and the major-axis angle in `(-π/2, π/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub u: f64,
    pub v: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub theta: f64,
}

impl EllipseParams {
    pub fn new(center: Point2<f64>, a: f64, b: f64, theta: f64) -> Self {
        let (a, b, theta) = if a >= b { (a, b, theta) } else { (b, a, theta + PI / 2.0) };
        Self { u: center.x, v: center.y, a, b, theta: wrap_half_turn(theta) }
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(self.u, self.v)
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    pub fn major_dir(&self) -> Vector2<f64> {
        Vector2::new(self.theta.cos(), self.theta.sin())
    }

    pub fn minor_dir(&self) -> Vector2<f64> {
        Vector2::new(-self.theta.sin(), self.theta.cos())
    }

    /// Point at parametric angle `t`.
    pub fn point_at(&self, t: f64) -> Point2<f64> {
        self.center() + self.major_dir() * (self.a * t.cos()) + self.minor_dir() * (self.b * t.sin())
    }

    /// `n` points uniformly spaced in the parametric angle.
    pub fn sample(&self, n: usize) -> Vec<Point2<f64>> {
        (0..n).map(|k| self.point_at(2.0 * PI * k as f64 / n as f64)).collect()
    }

    /// Tight axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point2<f64>, Point2<f64>) {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let hw = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hh = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (Point2::new(self.u - hw, self.v - hh), Point2::new(self.u + hw, self.v + hh))
    }
}

fn wrap_half_turn(theta: f64) -> f64 {
    let mut t = theta % PI;
    if t <= -PI / 2.0 {
        t += PI;
    } else if t > PI / 2.0 {
        t -= PI;
    }
    t
}

/// A real ellipse as a symmetric 3×3 matrix acting on homogeneous pixels.
///
/// Stored with unit Frobenius norm and the sign chosen so that interior points
/// give `xᵀCx < 0` (leading 2×2 block positive definite, `det C < 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic2D {
    m: Matrix3<f64>,
}

impl Conic2D {
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let sym = (m + m.transpose()) * 0.5;
        let norm = sym.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::DegenerateProjection("conic matrix is zero or non-finite".into()));
        }
        let mut sym = sym / norm;
        let lead = sym.fixed_view::<2, 2>(0, 0).into_owned();
        if lead.trace() < 0.0 {
            sym = -sym;
        }
        let lead = sym.fixed_view::<2, 2>(0, 0).into_owned();
        if lead.determinant() <= 0.0 || lead[(0, 0)] <= 0.0 || sym.determinant() >= 0.0 {
            return Err(Error::DegenerateProjection("conic is not a real ellipse".into()));
        }
        Ok(Self { m: sym })
    }

    pub fn from_ellipse(e: &EllipseParams) -> Self {
        let r = Matrix2::new(e.theta.cos(), -e.theta.sin(), e.theta.sin(), e.theta.cos());
        let d = Matrix2::new(1.0 / (e.a * e.a), 0.0, 0.0, 1.0 / (e.b * e.b));
        let m2 = r * d * r.transpose();
        let c = Vector2::new(e.u, e.v);
        let mc = m2 * c;
        let mut m = Matrix3::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&m2);
        m.fixed_view_mut::<2, 1>(0, 2).copy_from(&(-mc));
        m.fixed_view_mut::<1, 2>(2, 0).copy_from(&(-mc).transpose());
        m[(2, 2)] = c.dot(&mc) - 1.0;
        Self { m: m / m.norm() }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Recovers center, semi-axes and angle.
    pub fn to_ellipse(&self) -> EllipseParams {
        let m2 = self.m.fixed_view::<2, 2>(0, 0).into_owned();
        let b = Vector2::new(self.m[(0, 2)], self.m[(1, 2)]);
        let inv = m2.try_inverse().expect("ellipse conic has invertible leading block");
        let c = -(inv * b);
        let k = self.m[(2, 2)] + b.dot(&c);
        let s = -k;
        let (m00, m01, m11) = (m2[(0, 0)] / s, m2[(0, 1)] / s, m2[(1, 1)] / s);
        let tr = m00 + m11;
        let disc = ((m00 - m11).powi(2) + 4.0 * m01 * m01).sqrt();
        let l_small = 0.5 * (tr - disc);
        let l_big = 0.5 * (tr + disc);
        let theta = if disc == 0.0 { 0.0 } else { 0.5 * (-2.0 * m01).atan2(-(m00 - m11)) };
        EllipseParams::new(Point2::from(c), 1.0 / l_small.sqrt(), 1.0 / l_big.sqrt(), theta)
    }

    /// `xᵀCx` for the homogeneous pixel `(u, v, 1)`.
    pub fn algebraic(&self, p: Point2<f64>) -> f64 {
        let x = Vector3::new(p.x, p.y, 1.0);
        x.dot(&(self.m * x))
    }

    /// Gradient-normalized (Sampson) distance: `xᵀCx / ‖∇(xᵀCx)‖`, approximately
    /// the signed pixel distance to the outline (negative inside).
    pub fn sampson(&self, p: Point2<f64>) -> f64 {
        let x = Vector3::new(p.x, p.y, 1.0);
        let cx = self.m * x;
        let f = x.dot(&cx);
        let g = 2.0 * (cx.x * cx.x + cx.y * cx.y).sqrt();
        if g == 0.0 {
            0.0
        } else {
            f / g
        }
    }

    /// Same quantity as [`sampson`](Self::sampson) for the dual representation check:
    /// the line `l` is tangent to the conic iff `lᵀ C⁻¹ l = 0`.
    pub fn dual(&self) -> Matrix3<f64> {
        self.m.try_inverse().expect("ellipse conic is invertible")
    }
}

/// Direct least-squares ellipse fit (ellipse-specific constraint `4ac − b² = 1`),
/// in the numerically stable split form. Points are normalized internally.
pub fn fit_ellipse(points: &[Point2<f64>]) -> Result<Conic2D> {
    if points.len() < 5 {
        return Err(Error::DegenerateProjection(format!("ellipse fit needs ≥ 5 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords) / n;
    let rms = (points.iter().map(|p| (p.coords - mean).norm_squared()).sum::<f64>() / n).sqrt();
    if rms < 1e-12 {
        return Err(Error::DegenerateProjection("ellipse fit on coincident points".into()));
    }
    let scale = std::f64::consts::SQRT_2 / rms;

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let q = (p.coords - mean) * scale;
        let d1 = Vector3::new(q.x * q.x, q.x * q.y, q.y * q.y);
        let d2 = Vector3::new(q.x, q.y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::DegenerateProjection("ellipse fit points are collinear".into()))?;
    let t = -(s3_inv * s2.transpose());
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]].
    let reduced = Matrix3::new(
        m[(2, 0)] / 2.0,
        m[(2, 1)] / 2.0,
        m[(2, 2)] / 2.0,
        -m[(1, 0)],
        -m[(1, 1)],
        -m[(1, 2)],
        m[(0, 0)] / 2.0,
        m[(0, 1)] / 2.0,
        m[(0, 2)] / 2.0,
    );

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in real_eigenvalues(&reduced) {
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * lambda)) else { continue };
        let cond = 4.0 * v.x * v.z - v.y * v.y;
        if cond > 0.0 {
            // The admissible eigenvector has the smallest non-negative eigenvalue.
            if best.as_ref().is_none_or(|(l, _)| lambda.abs() < l.abs()) {
                best = Some((lambda, v));
            }
        }
    }
    let (_, a1) = best.ok_or_else(|| Error::DegenerateProjection("no elliptic solution in ellipse fit".into()))?;
    let a2 = t * a1;
    let (a, b, c, d, e, f) = (a1.x, a1.y, a1.z, a2.x, a2.y, a2.z);
    let cn = Matrix3::new(a, b / 2.0, d / 2.0, b / 2.0, c, e / 2.0, d / 2.0, e / 2.0, f);
    let tr = Matrix3::new(scale, 0.0, -scale * mean.x, 0.0, scale, -scale * mean.y, 0.0, 0.0, 1.0);
    Conic2D::from_matrix(tr.transpose() * cn * tr)
}

fn real_eigenvalues(m: &Matrix3<f64>) -> Vec<f64> {
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-9 * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect()
}

/// Null vector of a (numerically) rank-2 3×3 matrix via the best-conditioned row cross product.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let best = candidates.iter().max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
    let n = best.norm();
    (n > 0.0 && n.is_finite()).then(|| best / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn circle_has_equal_axes_and_zero_angle() {
        let c = Conic2D::from_ellipse(&EllipseParams::new(Point2::new(10.0, 20.0), 5.0, 5.0, 0.3));
        let e = c.to_ellipse();
        assert!((e.a - 5.0).abs() < 1e-9 && (e.b - 5.0).abs() < 1e-9);
        assert!((e.u - 10.0).abs() < 1e-9 && (e.v - 20.0).abs() < 1e-9);
    }

    #[test]
    fn sign_convention_interior_negative() {
        let c = Conic2D::from_ellipse(&EllipseParams::new(Point2::new(300.0, 200.0), 30.0, 12.0, 0.7));
        assert!(c.algebraic(Point2::new(300.0, 200.0)) < 0.0);
        assert!(c.algebraic(Point2::new(0.0, 0.0)) > 0.0);
        assert!(c.matrix().determinant() < 0.0);
        assert!((c.matrix().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampson_distance_is_pixel_scaled_for_circles() {
        let c = Conic2D::from_ellipse(&EllipseParams::new(Point2::new(500.0, 400.0), 20.0, 20.0, 0.0));
        // first-order accurate: (ρ² − r²) / 2ρ
        let d = c.sampson(Point2::new(521.0, 400.0));
        assert!((d - (21.0f64.powi(2) - 400.0) / 42.0).abs() < 1e-9);
        assert!(c.sampson(Point2::new(480.0, 400.0)).abs() < 1e-9);
    }

    #[test]
    fn hyperbola_is_rejected() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Conic2D::from_matrix(m).is_err());
    }

    #[test]
    fn fit_recovers_exact_ellipse() {
        let truth = EllipseParams::new(Point2::new(612.3, 377.9), 17.0, 14.0, 0.4);
        let fit = fit_ellipse(&truth.sample(40)).unwrap().to_ellipse();
        assert!((fit.u - truth.u).abs() < 1e-6);
        assert!((fit.v - truth.v).abs() < 1e-6);
        assert!((fit.a - truth.a).abs() < 1e-6 && (fit.b - truth.b).abs() < 1e-6);
        assert!((fit.theta - truth.theta).abs() < 1e-6);
    }

    #[test]
    fn fit_rejects_collinear_points() {
        let pts: Vec<_> = (0..10).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(fit_ellipse(&pts).is_err());
    }

    proptest! {
        #[test]
        fn parametric_matrix_round_trip(
            u in 0.0f64..1500.0, v in 0.0f64..1500.0,
            b in 2.0f64..100.0, ratio in 0.05f64..0.99, theta in -1.5f64..1.5,
        ) {
            let a = b / ratio;
            let e = EllipseParams::new(Point2::new(u, v), a, b, theta);
            let back = Conic2D::from_ellipse(&e).to_ellipse();
            prop_assert!(rel_close(back.u, e.u, 1e-9));
            prop_assert!(rel_close(back.v, e.v, 1e-9));
            prop_assert!(rel_close(back.a, e.a, 1e-9));
            prop_assert!(rel_close(back.b, e.b, 1e-9));
            let dtheta = wrap_half_turn(back.theta - e.theta).abs();
            prop_assert!(dtheta < 1e-7, "theta {} vs {}", back.theta, e.theta);
        }

        #[test]
        fn sampled_points_lie_on_conic(b in 2.0f64..100.0, ratio in 0.1f64..1.0, theta in -1.5f64..1.5) {
            let e = EllipseParams::new(Point2::new(400.0, 300.0), b / ratio, b, theta);
            let c = Conic2D::from_ellipse(&e);
            for p in e.sample(64) {
                prop_assert!(c.sampson(p).abs() < 1e-9);
            }
        }
    }
}
