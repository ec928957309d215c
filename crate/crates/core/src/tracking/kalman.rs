use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::imaging::BBox;

type State = SVector<f64, 7>;
type Cov = SMatrix<f64, 7, 7>;
type Meas = SVector<f64, 4>;

/// Noise model of the box filter. Fractions marked "of s" are standard
/// deviations relative to the current box area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanParams {
    /// Process variances of u, v (px²).
    pub q_position: f64,
    pub q_scale_frac: f64,
    pub q_aspect: f64,
    /// Process variances of u̇, v̇ ((px/frame)²).
    pub q_velocity: f64,
    pub q_scale_rate_frac: f64,
    /// Measurement variances of u, v (px²).
    pub r_position: f64,
    pub r_scale_frac: f64,
    pub r_aspect_frac: f64,
    /// Velocity assumed for a new track, px/frame.
    pub initial_velocity: [f64; 2],
    /// Variance of that assumption ((px/frame)²).
    pub initial_velocity_var: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            q_position: 1.0,
            q_scale_frac: 1e-2,
            q_aspect: 1e-4,
            q_velocity: 1e-1,
            q_scale_rate_frac: 1e-4,
            r_position: 1.0,
            r_scale_frac: 0.1,
            r_aspect_frac: 0.05,
            initial_velocity: [0.0, 0.0],
            initial_velocity_var: 100.0,
        }
    }
}

/// Constant-velocity filter on `(u, v, s, r, u̇, v̇, ṡ)`: box center, area,
/// aspect ratio (width / height) and rates, in frames.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxFilter {
    x: State,
    p: Cov,
}

const MIN_POSITIVE: f64 = 1e-6;

fn measurement(b: &BBox) -> Meas {
    let c = b.center();
    let (w, h) = (b.width().max(MIN_POSITIVE), b.height().max(MIN_POSITIVE));
    Meas::new(c.x, c.y, w * h, w / h)
}

impl BoxFilter {
    pub fn new(b: &BBox, params: &KalmanParams) -> Self {
        let z = measurement(b);
        let mut x = State::zeros();
        x.fixed_rows_mut::<4>(0).copy_from(&z);
        x[4] = params.initial_velocity[0];
        x[5] = params.initial_velocity[1];
        let s = z[2];
        let p = Cov::from_diagonal(&State::from_column_slice(&[
            10.0,
            10.0,
            (0.1 * s).powi(2) * 10.0,
            (0.05 * z[3]).powi(2) * 10.0,
            params.initial_velocity_var,
            params.initial_velocity_var,
            (0.1 * s).powi(2) * 10.0,
        ]));
        Self { x, p }
    }

    pub fn state(&self) -> [f64; 7] {
        self.x.into()
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.x[4], self.x[5]]
    }

    pub fn bbox(&self) -> BBox {
        let s = self.x[2].max(MIN_POSITIVE);
        let r = self.x[3].max(MIN_POSITIVE);
        let w = (s * r).sqrt();
        BBox::from_center(self.x[0], self.x[1], w, s / w)
    }

    pub fn predict(&mut self, params: &KalmanParams) -> BBox {
        if self.x[2] + self.x[6] <= 0.0 {
            self.x[6] = 0.0;
        }
        let mut f = Cov::identity();
        f[(0, 4)] = 1.0;
        f[(1, 5)] = 1.0;
        f[(2, 6)] = 1.0;
        self.x = f * self.x;
        let s = self.x[2].max(MIN_POSITIVE);
        let q = Cov::from_diagonal(&State::from_column_slice(&[
            params.q_position,
            params.q_position,
            (params.q_scale_frac * s).powi(2),
            params.q_aspect,
            params.q_velocity,
            params.q_velocity,
            (params.q_scale_rate_frac * s).powi(2),
        ]));
        self.p = f * self.p * f.transpose() + q;
        self.clamp();
        self.bbox()
    }

    pub fn update(&mut self, b: &BBox, params: &KalmanParams) {
        let z = measurement(b);
        let mut h = SMatrix::<f64, 4, 7>::zeros();
        for i in 0..4 {
            h[(i, i)] = 1.0;
        }
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&Meas::new(
            params.r_position,
            params.r_position,
            (params.r_scale_frac * z[2]).powi(2),
            (params.r_aspect_frac * z[3]).powi(2),
        ));
        let s = h * self.p * h.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            // degenerate covariance: take the measurement as is
            self.x.fixed_rows_mut::<4>(0).copy_from(&z);
            return;
        };
        let k = self.p * h.transpose() * s_inv;
        self.x += k * (z - h * self.x);
        self.p = (Cov::identity() - k * h) * self.p;
        self.p = (self.p + self.p.transpose()) * 0.5;
        self.clamp();
    }

    fn clamp(&mut self) {
        self.x[2] = self.x[2].max(MIN_POSITIVE);
        self.x[3] = self.x[3].max(MIN_POSITIVE);
    }
}
