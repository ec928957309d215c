//! Ellipsoids, quadrics and their image conics; bubble reconstruction and rig self-calibration.

mod conic;
mod ellipsoid;
mod init;
mod lm;
mod refine;
mod selfcal;

pub use conic::{fit_ellipse, Conic2D, EllipseParams};
pub use ellipsoid::{
    ellipsoid_to_quadric, project_dual, project_ellipsoid, project_quadric, quadric_to_ellipsoid, Ellipsoid, Quadric,
};
pub use init::init_ellipsoid;
pub use lm::{LmOutcome, LmSettings};
pub use refine::{refine_ellipsoid, ContourSampling, Refinement, DEFAULT_SAMPLES, MIN_CONTOUR_POINTS};
pub use selfcal::{self_calibrate, silhouette_cost, SelfCalSettings, SelfCalibration, SilhouettePair};
