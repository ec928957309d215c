use std::path::Path;

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{Camera, Intrinsics, Pose};
use crate::error::{Error, Result};

/// Two calibrated cameras; camera 1 defines the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub cam1: Intrinsics,
    pub cam2: Intrinsics,
    /// World-to-camera pose of camera 2 (the relative orientation).
    pub pose2: Pose,
}

/// Which camera of the rig. Values match the on-disk camera ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CameraId {
    #[serde(rename = "1")]
    One = 1,
    #[serde(rename = "2")]
    Two = 2,
}

impl CameraId {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(CameraId::One),
            2 => Some(CameraId::Two),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn other(self) -> Self {
        match self {
            CameraId::One => CameraId::Two,
            CameraId::Two => CameraId::One,
        }
    }
}

/// Image line `a·u + b·v + c = 0`, normalized so that `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2 {
    pub fn from_homogeneous(l: Vector3<f64>) -> Self {
        let n = (l.x * l.x + l.y * l.y).sqrt();
        Self { a: l.x / n, b: l.y / n, c: l.z / n }
    }

    pub fn signed_distance(&self, p: Point2<f64>) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }

    pub fn distance(&self, p: Point2<f64>) -> f64 {
        self.signed_distance(p).abs()
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl StereoRig {
    pub fn new(cam1: Intrinsics, cam2: Intrinsics, pose2: Pose) -> Self {
        Self { cam1, cam2, pose2 }
    }

    pub fn validate(&self) -> Result<()> {
        self.cam1.validate()?;
        self.cam2.validate()?;
        if self.pose2.orthonormality_error() > 1e-9 {
            return Err(Error::Config("pose2 rotation is not orthonormal".into()));
        }
        if !(self.baseline() > 0.0) {
            return Err(Error::Config("stereo baseline must be positive".into()));
        }
        Ok(())
    }

    pub fn camera(&self, id: CameraId) -> Camera {
        match id {
            CameraId::One => Camera::new(self.cam1, Pose::identity()),
            CameraId::Two => Camera::new(self.cam2, self.pose2),
        }
    }

    pub fn intrinsics(&self, id: CameraId) -> &Intrinsics {
        match id {
            CameraId::One => &self.cam1,
            CameraId::Two => &self.cam2,
        }
    }

    /// Length of the translation between the camera centers in mm.
    pub fn baseline(&self) -> f64 {
        self.pose2.translation.norm()
    }

    /// Fundamental matrix in undistorted pixels: `x2ᵀ F x1 = 0`.
    pub fn fundamental(&self) -> Matrix3<f64> {
        let e = skew(&self.pose2.translation) * self.pose2.rotation.matrix();
        self.cam2.k_inverse().transpose() * e * self.cam1.k_inverse()
    }

    /// Epipole in camera 2: the image of camera 1's center.
    pub fn epipole2(&self) -> Point2<f64> {
        let e = self.cam2.k_matrix() * self.pose2.translation;
        Point2::new(e.x / e.z, e.y / e.z)
    }

    /// Ray intersection point closest to both principal axes.
    pub fn axes_crossing(&self) -> Result<Point3<f64>> {
        let r1 = self.camera(CameraId::One).back_project_ideal(Point2::new(self.cam1.cx, self.cam1.cy));
        let r2 = self.camera(CameraId::Two).back_project_ideal(Point2::new(self.cam2.cx, self.cam2.cy));
        Ok(super::camera::triangulate_midpoint(&r1, &r2)?.0)
    }

    /// Laboratory calibration of the reference deep-sea instrument: left/right
    /// intrinsics and the relative pose measured before deployment.
    pub fn laboratory_reference() -> Self {
        let cam1 = Intrinsics::pinhole(1723.189, 1737.865, 584.490, 362.619)
            .with_distortion(-0.1087, 0.1184, -0.0031, -0.0021);
        let cam2 = Intrinsics::pinhole(1711.854, 1719.751, 507.474, 349.812)
            .with_distortion(-0.0716, 0.0106, -0.0136, -0.0128);
        let pose2 = Pose::from_quaternion_wxyz([0.694, -0.020, 0.718, 0.033], [-287.11, -17.11, 303.88])
            .expect("reference quaternion is valid");
        Self { cam1, cam2, pose2 }
    }
}

/// Epipolar line in camera 2 of an undistorted pixel of camera 1.
pub fn epipolar_line(rig: &StereoRig, x1: Point2<f64>) -> Line2 {
    Line2::from_homogeneous(rig.fundamental() * Vector3::new(x1.x, x1.y, 1.0))
}

/// Epipolar line in camera 1 of an undistorted pixel of camera 2.
pub fn epipolar_line_in_cam1(rig: &StereoRig, x2: Point2<f64>) -> Line2 {
    Line2::from_homogeneous(rig.fundamental().transpose() * Vector3::new(x2.x, x2.y, 1.0))
}

/// Symmetric epipolar distance: mean of the two point-to-epipolar-line distances.
pub fn epipolar_distance(rig: &StereoRig, x1: Point2<f64>, x2: Point2<f64>) -> f64 {
    let f = rig.fundamental();
    symmetric_distance_with(&f, x1, x2)
}

pub(crate) fn symmetric_distance_with(f: &Matrix3<f64>, x1: Point2<f64>, x2: Point2<f64>) -> f64 {
    let h1 = Vector3::new(x1.x, x1.y, 1.0);
    let h2 = Vector3::new(x2.x, x2.y, 1.0);
    let d2 = Line2::from_homogeneous(f * h1).distance(x2);
    let d1 = Line2::from_homogeneous(f.transpose() * h2).distance(x1);
    0.5 * (d1 + d2)
}

/// On-disk calibration document. Field names are part of the file contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub cam1: Intrinsics,
    pub cam2: Intrinsics,
    pub pose2: PoseRecord,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub recalibrated: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Unit quaternion `[w, x, y, z]`.
    pub q: [f64; 4],
    /// Translation in mm.
    pub t: [f64; 3],
}

impl CalibrationFile {
    pub fn from_rig(rig: &StereoRig, recalibrated: bool) -> Self {
        Self {
            cam1: rig.cam1,
            cam2: rig.cam2,
            pose2: PoseRecord { q: rig.pose2.quaternion_wxyz(), t: rig.pose2.translation.into() },
            recalibrated,
        }
    }

    pub fn to_rig(&self) -> Result<StereoRig> {
        let rig = StereoRig::new(self.cam1, self.cam2, Pose::from_quaternion_wxyz(self.pose2.q, self.pose2.t)?);
        rig.validate()?;
        Ok(rig)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { what: "calibration file", detail: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
