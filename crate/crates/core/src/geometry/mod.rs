//! Camera models, projection, triangulation and epipolar geometry.
//!
//! Conventions: 3D quantities are in millimeters, 2D in pixels. Camera 1 is
//! the world frame. "Ideal" pixels are undistorted pinhole coordinates; all
//! stages after background removal work in ideal pixels.

mod camera;
mod rig;

pub use camera::{
    triangulate_midpoint, Camera, Intrinsics, Pose, Ray, UNDISTORT_MAX_ITERS, UNDISTORT_TOL,
};
pub use rig::{
    epipolar_distance, epipolar_line, epipolar_line_in_cam1, CalibrationFile, CameraId, Line2, PoseRecord,
    StereoRig,
};

use nalgebra::{Rotation3, Vector3};

/// Rotation from XYZ Euler angles in degrees (`Rz · Ry · Rx`).
pub fn rotation_from_euler_deg(angles: [f64; 3]) -> Rotation3<f64> {
    let [x, y, z] = angles.map(f64::to_radians);
    Rotation3::from_euler_angles(x, y, z)
}

/// Rodrigues map from an axis-angle vector.
pub fn rotation_from_axis_angle(w: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::new(*w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Point2, Point3, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn left_pinhole() -> Intrinsics {
        Intrinsics::pinhole(1723.189, 1737.865, 584.490, 362.619)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = Camera::new(left_pinhole(), Pose::identity());
        for z in [1.0, 100.0, 1e4] {
            let px = cam.project(&Point3::new(0.0, 0.0, z)).unwrap();
            assert!((px.x - 584.490).abs() < 1e-12 && (px.y - 362.619).abs() < 1e-12);
        }
    }

    #[test]
    fn lateral_offset_scales_with_focal_length() {
        let cam = Camera::new(left_pinhole(), Pose::identity());
        let px = cam.project(&Point3::new(10.0, 0.0, 1000.0)).unwrap();
        assert!((px.x - (584.490 + 17.23189)).abs() < 1e-9);
        assert!((px.y - 362.619).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let cam = Camera::new(left_pinhole(), Pose::identity());
        assert!(matches!(cam.project(&Point3::new(0.0, 0.0, 0.0)), Err(crate::Error::BehindCamera { .. })));
        assert!(matches!(cam.project(&Point3::new(1.0, 0.0, -5.0)), Err(crate::Error::BehindCamera { .. })));
    }

    #[test]
    fn principal_point_back_projects_along_axis() {
        let cam = Camera::new(StereoRig::laboratory_reference().cam1, Pose::identity());
        let ray = cam.back_project(Point2::new(584.490, 362.619));
        assert!((ray.direction.into_inner() - Vector3::z()).norm() < 1e-12);
        assert!(ray.origin.coords.norm() < 1e-12);
    }

    #[test]
    fn back_projection_round_trips_through_projection() {
        let rig = StereoRig::laboratory_reference();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for id in [CameraId::One, CameraId::Two] {
            let cam = rig.camera(id);
            for _ in 0..100 {
                let px = Point2::new(rng.random_range(0.0..1024.0), rng.random_range(0.0..800.0));
                let ray = cam.back_project(px);
                assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
                let d = rng.random_range(50.0..500.0);
                let back = cam.project(&ray.at(d)).unwrap();
                assert!((back - px).norm() < 1e-6, "{px:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn undistortion_matches_direct_fixed_point_oracle() {
        // Oracle: plain fixed-point iteration run far past convergence.
        let k = StereoRig::laboratory_reference().cam2;
        let oracle = |pd: Vector2<f64>| {
            let mut p = pd;
            for _ in 0..200 {
                let r2 = p.norm_squared();
                let rad = 1.0 + k.k1 * r2 + k.k2 * r2 * r2;
                let dx = 2.0 * k.p1 * p.x * p.y + k.p2 * (r2 + 2.0 * p.x * p.x);
                let dy = k.p1 * (r2 + 2.0 * p.y * p.y) + 2.0 * k.p2 * p.x * p.y;
                p = Vector2::new((pd.x - dx) / rad, (pd.y - dy) / rad);
            }
            p
        };
        for (u, v) in [(0.0, 0.0), (1023.0, 799.0), (0.0, 799.0), (700.0, 100.0)] {
            let raw = Point2::new(u, v);
            let ideal = k.undistort_pixel(raw);
            let expect = k.normalized_to_pixel(oracle(k.pixel_to_normalized(raw)));
            assert!((ideal - expect).norm() < 1e-9);
            assert!((k.distort_pixel(ideal) - raw).norm() < 1e-6);
        }
    }

    #[test]
    fn distortion_is_injective_near_center() {
        // Grid sampling: the Jacobian determinant of the distortion map stays positive.
        let k = StereoRig::laboratory_reference().cam1;
        let h = 1e-6;
        let n = 81;
        for i in 0..n {
            for j in 0..n {
                let p = Vector2::new(-0.2 + 0.4 * i as f64 / (n - 1) as f64, -0.2 + 0.4 * j as f64 / (n - 1) as f64);
                if p.norm() >= 0.2 {
                    continue;
                }
                let dx = (k.distort_normalized(p + Vector2::new(h, 0.0)) - k.distort_normalized(p - Vector2::new(h, 0.0))) / (2.0 * h);
                let dy = (k.distort_normalized(p + Vector2::new(0.0, h)) - k.distort_normalized(p - Vector2::new(0.0, h))) / (2.0 * h);
                assert!(Matrix2::from_columns(&[dx, dy]).determinant() > 0.0);
            }
        }
    }

    /// Closest points of two lines from the 2×2 normal equations.
    fn midpoint_oracle(o1: Point3<f64>, d1: Vector3<f64>, o2: Point3<f64>, d2: Vector3<f64>) -> (Point3<f64>, f64) {
        let a = Matrix2::new(d1.dot(&d1), -d1.dot(&d2), d1.dot(&d2), -d2.dot(&d2));
        let w = o2 - o1;
        let rhs = nalgebra::Vector2::new(d1.dot(&w), d2.dot(&w));
        let st = a.lu().solve(&rhs).unwrap();
        let p = o1 + d1 * st.x;
        let q = o2 + d2 * st.y;
        (Point3::from((p.coords + q.coords) / 2.0), (p - q).norm())
    }

    #[test]
    fn triangulation_of_intersecting_rays() {
        let r1 = Ray::new(Point3::origin(), Vector3::z());
        let r2 = Ray::new(Point3::new(100.0, 0.0, 100.0), -Vector3::x());
        let (x, gap) = triangulate_midpoint(&r1, &r2).unwrap();
        let (xo, go) = midpoint_oracle(r1.origin, Vector3::z(), r2.origin, -Vector3::x());
        assert!((x - xo).norm() < 1e-12 && (gap - go).abs() < 1e-12);
        assert!((x - Point3::new(0.0, 0.0, 100.0)).norm() < 1e-12);
        assert!(gap < 1e-12);
    }

    #[test]
    fn triangulation_of_skew_rays_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let o1 = Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 0.0);
            let o2 = Point3::new(300.0, rng.random_range(-50.0..50.0), 300.0);
            let d1 = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 1.0);
            let d2 = Vector3::new(-1.0, rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
            let (x, gap) = triangulate_midpoint(&Ray::new(o1, d1), &Ray::new(o2, d2)).unwrap();
            let (xo, go) = midpoint_oracle(o1, d1.normalize(), o2, d2.normalize());
            assert!((x - xo).norm() < 1e-9);
            assert!((gap - go).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        let r1 = Ray::new(Point3::origin(), Vector3::z());
        let r2 = Ray::new(Point3::new(10.0, 0.0, 0.0), Vector3::z());
        assert!(matches!(triangulate_midpoint(&r1, &r2), Err(crate::Error::DegenerateTriangulation { .. })));
    }

    #[test]
    fn triangulation_recovers_projected_points() {
        let rig = StereoRig::laboratory_reference();
        let center = rig.axes_crossing().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = center + Vector3::new(rng.random_range(-40.0..40.0), rng.random_range(-60.0..60.0), rng.random_range(-40.0..40.0));
            let c1 = rig.camera(CameraId::One);
            let c2 = rig.camera(CameraId::Two);
            let r1 = c1.back_project(c1.project(&x).unwrap());
            let r2 = c2.back_project(c2.project(&x).unwrap());
            let (xt, _) = triangulate_midpoint(&r1, &r2).unwrap();
            assert!((xt - x).norm() < 1e-6);
        }
    }

    #[test]
    fn epipole_lies_on_every_epipolar_line() {
        let rig = StereoRig::laboratory_reference();
        let e2 = rig.epipole2();
        for (u, v) in [(0.0, 0.0), (512.0, 400.0), (1000.0, 50.0)] {
            assert!(epipolar_line(&rig, Point2::new(u, v)).distance(e2) < 1e-9);
        }
    }

    #[test]
    fn corresponding_projections_satisfy_epipolar_constraint() {
        let rig = StereoRig::laboratory_reference();
        let center = rig.axes_crossing().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = center + Vector3::new(rng.random_range(-40.0..40.0), rng.random_range(-60.0..60.0), rng.random_range(-40.0..40.0));
            let p1 = rig.camera(CameraId::One).project_ideal(&x).unwrap();
            let p2 = rig.camera(CameraId::Two).project_ideal(&x).unwrap();
            let line = epipolar_line(&rig, p1);
            assert!(((line.a * line.a + line.b * line.b) - 1.0).abs() < 1e-12);
            assert!(line.distance(p2) < 1e-9);
            assert!(epipolar_distance(&rig, p1, p2) < 1e-9);
        }
        // unrelated points
        assert!(epipolar_distance(&rig, Point2::new(100.0, 100.0), Point2::new(900.0, 700.0)) > 0.0);
    }

    #[test]
    fn small_rotation_error_produces_pixel_scale_epipolar_residuals() {
        let rig = StereoRig::laboratory_reference();
        let mut bent = rig;
        bent.pose2.rotation = rotation_from_euler_deg([0.596, -0.557, 0.708]) * rig.pose2.rotation;
        let center = rig.axes_crossing().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sum = 0.0;
        for _ in 0..100 {
            let x = center + Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-50.0..50.0), rng.random_range(-30.0..30.0));
            let p1 = rig.camera(CameraId::One).project_ideal(&x).unwrap();
            let p2 = rig.camera(CameraId::Two).project_ideal(&x).unwrap();
            sum += epipolar_distance(&bent, p1, p2);
        }
        assert!(sum / 100.0 > 3.0, "mean epipolar error {}", sum / 100.0);
    }

    #[test]
    fn calibration_file_round_trip() {
        let rig = StereoRig::laboratory_reference();
        let file = CalibrationFile::from_rig(&rig, true);
        let text = serde_json::to_string(&file).unwrap();
        for key in ["\"fx\"", "\"fy\"", "\"cx\"", "\"cy\"", "\"k1\"", "\"k2\"", "\"p1\"", "\"p2\"", "\"q\"", "\"t\"", "\"recalibrated\":true"] {
            assert!(text.contains(key), "missing {key} in {text}");
        }
        let back: CalibrationFile = serde_json::from_str(&text).unwrap();
        let rig2 = back.to_rig().unwrap();
        assert!((rig2.pose2.rotation.matrix() - rig.pose2.rotation.matrix()).abs().max() < 1e-12);
        assert_eq!(rig2.cam2, rig.cam2);
    }

    #[test]
    fn reference_pose_is_a_proper_rotation() {
        let rig = StereoRig::laboratory_reference();
        assert!(rig.pose2.orthonormality_error() < 1e-12);
        rig.validate().unwrap();
        // roughly 90 degrees between viewing directions
        let z1 = Vector3::z();
        let z2 = rig.pose2.rotation.transpose() * Vector3::z();
        let angle = z1.dot(&z2).acos().to_degrees();
        assert!((angle - 90.0).abs() < 10.0, "{angle}");
    }
}
