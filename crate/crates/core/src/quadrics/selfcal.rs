use nalgebra::{DMatrix, DVector, Matrix3x4, Point2, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::conic::fit_ellipse;
use super::ellipsoid::{project_dual, Ellipsoid};
use super::init::init_ellipsoid;
use super::lm::{minimize, DenseProblem, LmSettings, Problem};
use super::refine::{silhouette_residuals, EllipsoidChart, MIN_CONTOUR_POINTS};
use crate::error::{Error, Result};
use crate::geometry::{CameraId, Line2, Pose, StereoRig};

/// Silhouette points of one bubble seen by both cameras (ideal pixels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouettePair {
    pub view1: Vec<Point2<f64>>,
    pub view2: Vec<Point2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfCalSettings {
    pub lm: LmSettings,
    /// Huber threshold in px.
    pub huber_delta: f64,
    pub min_bubbles: usize,
}

impl Default for SelfCalSettings {
    fn default() -> Self {
        Self { lm: LmSettings::default(), huber_delta: 1.0, min_bubbles: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct SelfCalibration {
    pub rig: StereoRig,
    /// Jointly adjusted bubbles, in input order; `None` where a bubble was discarded.
    pub ellipsoids: Vec<Option<Ellipsoid>>,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

const POSE_DIM: usize = 5;
const BUBBLE_DIM: usize = EllipsoidChart::DIM;

/// Relative pose of camera 2 with the baseline length held fixed: rotation increment
/// `ω` applied on the left, and the translation direction turned about two axes
/// perpendicular to it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoseChart {
    rotation0: Rotation3<f64>,
    t0: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
}

impl PoseChart {
    pub fn new(pose: &Pose) -> Self {
        let t0 = pose.translation;
        let dir = t0.normalize();
        let helper = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = dir.cross(&helper).normalize();
        let e2 = dir.cross(&e1);
        Self { rotation0: pose.rotation, t0, e1, e2 }
    }

    pub fn decode(&self, x: &[f64]) -> Pose {
        let rot = Rotation3::from_scaled_axis(Vector3::new(x[0], x[1], x[2])) * self.rotation0;
        let turn = Rotation3::from_scaled_axis(self.e1 * x[3] + self.e2 * x[4]);
        Pose::new(rot, turn * self.t0)
    }
}

fn huber(r: f64, delta: f64) -> (f64, f64) {
    let a = r.abs();
    if a <= delta {
        (r * r, 1.0)
    } else {
        (2.0 * delta * a - delta * delta, delta / a)
    }
}

struct JointProblem<'a> {
    rig0: StereoRig,
    pose_chart: PoseChart,
    charts: Vec<EllipsoidChart>,
    obs: Vec<&'a SilhouettePair>,
    delta: f64,
}

struct BubbleBlock {
    hbb: SMatrix<f64, BUBBLE_DIM, BUBBLE_DIM>,
    hpb: SMatrix<f64, POSE_DIM, BUBBLE_DIM>,
    gb: SVector<f64, BUBBLE_DIM>,
}

struct JointLinearization {
    hpp: SMatrix<f64, POSE_DIM, POSE_DIM>,
    gp: SVector<f64, POSE_DIM>,
    blocks: Vec<BubbleBlock>,
}

impl JointProblem<'_> {
    fn p1(&self) -> Matrix3x4<f64> {
        self.rig0.camera(CameraId::One).projection_matrix()
    }

    fn p2(&self, pose_x: &[f64]) -> Matrix3x4<f64> {
        self.rig0.cam2.k_matrix() * self.pose_chart.decode(pose_x).matrix()
    }

    fn bubble_slice<'x>(&self, x: &'x DVector<f64>, k: usize) -> &'x [f64] {
        let start = POSE_DIM + k * BUBBLE_DIM;
        &x.as_slice()[start..start + BUBBLE_DIM]
    }

    fn bubble_residuals(&self, k: usize, bx: &[f64], p1: &Matrix3x4<f64>, p2: &Matrix3x4<f64>, out: &mut Vec<f64>) -> Option<()> {
        let e = self.charts[k].decode(bx)?;
        silhouette_residuals(p1, p2, &e, &self.obs[k].view1, &self.obs[k].view2, out)
    }

    fn view2_residuals(&self, k: usize, bx: &[f64], p2: &Matrix3x4<f64>, out: &mut Vec<f64>) -> Option<()> {
        let e = self.charts[k].decode(bx)?;
        let c = project_dual(p2, &e.dual_matrix()).ok()?;
        out.extend(self.obs[k].view2.iter().map(|p| c.sampson(*p)));
        Some(())
    }

    fn joint_cost(&self, x: &DVector<f64>) -> Option<f64> {
        let p1 = self.p1();
        let p2 = self.p2(&x.as_slice()[..POSE_DIM]);
        let mut buf = Vec::new();
        let mut total = 0.0;
        for k in 0..self.obs.len() {
            buf.clear();
            self.bubble_residuals(k, self.bubble_slice(x, k), &p1, &p2, &mut buf)?;
            total += buf.iter().map(|&r| huber(r, self.delta).0).sum::<f64>();
        }
        total.is_finite().then_some(total)
    }
}

impl Problem for JointProblem<'_> {
    type Linearization = JointLinearization;

    fn cost(&self, x: &DVector<f64>) -> Option<f64> {
        self.joint_cost(x)
    }

    fn linearize(&self, x: &DVector<f64>) -> Option<JointLinearization> {
        let pose_x: Vec<f64> = x.as_slice()[..POSE_DIM].to_vec();
        let p1 = self.p1();
        let p2 = self.p2(&pose_x);
        const POSE_STEP: f64 = 1e-6;
        let mut p2_plus = Vec::with_capacity(POSE_DIM);
        let mut p2_minus = Vec::with_capacity(POSE_DIM);
        for j in 0..POSE_DIM {
            let mut xp = pose_x.clone();
            xp[j] += POSE_STEP;
            p2_plus.push(self.p2(&xp));
            xp[j] -= 2.0 * POSE_STEP;
            p2_minus.push(self.p2(&xp));
        }

        let mut hpp = SMatrix::<f64, POSE_DIM, POSE_DIM>::zeros();
        let mut gp = SVector::<f64, POSE_DIM>::zeros();
        let mut blocks = Vec::with_capacity(self.obs.len());
        let (mut rp, mut rm) = (Vec::new(), Vec::new());
        for k in 0..self.obs.len() {
            let bx: Vec<f64> = self.bubble_slice(x, k).to_vec();
            let mut r = Vec::new();
            self.bubble_residuals(k, &bx, &p1, &p2, &mut r)?;
            let n1 = self.obs[k].view1.len();
            let m = r.len();
            let w: Vec<f64> = r.iter().map(|&ri| huber(ri, self.delta).1).collect();

            let steps = EllipsoidChart::steps(&bx);
            let mut jb = DMatrix::<f64>::zeros(m, BUBBLE_DIM);
            let mut xb = bx.clone();
            for j in 0..BUBBLE_DIM {
                xb[j] = bx[j] + steps[j];
                rp.clear();
                let plus = self.bubble_residuals(k, &xb, &p1, &p2, &mut rp).is_some();
                xb[j] = bx[j] - steps[j];
                rm.clear();
                let minus = self.bubble_residuals(k, &xb, &p1, &p2, &mut rm).is_some();
                xb[j] = bx[j];
                for i in 0..m {
                    jb[(i, j)] = match (plus, minus) {
                        (true, true) => (rp[i] - rm[i]) / (2.0 * steps[j]),
                        (true, false) => (rp[i] - r[i]) / steps[j],
                        (false, true) => (r[i] - rm[i]) / steps[j],
                        (false, false) => return None,
                    };
                }
            }
            // Pose only affects the view-2 rows.
            let n2 = m - n1;
            let mut jp = DMatrix::<f64>::zeros(n2, POSE_DIM);
            for j in 0..POSE_DIM {
                rp.clear();
                self.view2_residuals(k, &bx, &p2_plus[j], &mut rp)?;
                rm.clear();
                self.view2_residuals(k, &bx, &p2_minus[j], &mut rm)?;
                for i in 0..n2 {
                    jp[(i, j)] = (rp[i] - rm[i]) / (2.0 * POSE_STEP);
                }
            }

            let mut block = BubbleBlock { hbb: SMatrix::zeros(), hpb: SMatrix::zeros(), gb: SVector::zeros() };
            for i in 0..m {
                let wi = w[i];
                let jbi = jb.row(i);
                for a in 0..BUBBLE_DIM {
                    block.gb[a] += wi * jbi[a] * r[i];
                    for b in 0..BUBBLE_DIM {
                        block.hbb[(a, b)] += wi * jbi[a] * jbi[b];
                    }
                }
                if i >= n1 {
                    let jpi = jp.row(i - n1);
                    for a in 0..POSE_DIM {
                        gp[a] += wi * jpi[a] * r[i];
                        for b in 0..POSE_DIM {
                            hpp[(a, b)] += wi * jpi[a] * jpi[b];
                        }
                        for b in 0..BUBBLE_DIM {
                            block.hpb[(a, b)] += wi * jpi[a] * jbi[b];
                        }
                    }
                }
            }
            blocks.push(block);
        }
        Some(JointLinearization { hpp, gp, blocks })
    }

    fn solve(&self, lin: &JointLinearization, lambda: f64) -> Option<DVector<f64>> {
        let mut s = damp(&lin.hpp, lambda);
        let mut rhs = -lin.gp;
        let mut factors = Vec::with_capacity(lin.blocks.len());
        for b in &lin.blocks {
            let chol = damp(&b.hbb, lambda).cholesky()?;
            let a_inv_hbp = chol.solve(&b.hpb.transpose());
            let a_inv_g = chol.solve(&b.gb);
            s -= b.hpb * a_inv_hbp;
            rhs += b.hpb * a_inv_g;
            factors.push(chol);
        }
        let dp = s.cholesky()?.solve(&rhs);
        let mut out = DVector::zeros(POSE_DIM + BUBBLE_DIM * lin.blocks.len());
        out.rows_mut(0, POSE_DIM).copy_from(&dp);
        for (k, (b, chol)) in lin.blocks.iter().zip(&factors).enumerate() {
            let db = chol.solve(&(-b.gb - b.hpb.transpose() * dp));
            out.rows_mut(POSE_DIM + k * BUBBLE_DIM, BUBBLE_DIM).copy_from(&db);
        }
        Some(out)
    }
}

fn damp<const N: usize>(h: &SMatrix<f64, N, N>, lambda: f64) -> SMatrix<f64, N, N> {
    let mean_diag = (h.trace() / N as f64).max(f64::MIN_POSITIVE);
    let mut a = *h;
    for i in 0..N {
        a[(i, i)] += lambda * h[(i, i)].max(1e-9 * mean_diag) + 1e-14 * mean_diag;
    }
    a
}

/// Jointly refines camera 2's relative pose and every bubble's ellipsoid against the
/// silhouettes. The baseline length is kept at its input value.
pub fn self_calibrate(rig0: &StereoRig, observations: &[SilhouettePair], settings: &SelfCalSettings) -> Result<SelfCalibration> {
    if observations.len() < settings.min_bubbles {
        return Err(Error::Underconstrained(format!(
            "self-calibration needs ≥ {} bubbles, got {}",
            settings.min_bubbles,
            observations.len()
        )));
    }

    let mut kept = Vec::new();
    let mut fits = Vec::new();
    for (i, obs) in observations.iter().enumerate() {
        if obs.view1.len() < MIN_CONTOUR_POINTS || obs.view2.len() < MIN_CONTOUR_POINTS {
            continue;
        }
        let Ok(c1) = fit_ellipse(&obs.view1) else { continue };
        let Ok(c2) = fit_ellipse(&obs.view2) else { continue };
        kept.push(i);
        fits.push((c1, c2));
    }
    if kept.len() < settings.min_bubbles {
        return Err(Error::Underconstrained(format!(
            "only {} of {} bubbles have usable silhouettes",
            kept.len(),
            observations.len()
        )));
    }

    // Stage 1: ellipse centers are near-correspondences; their epipolar residuals pull the
    // pose into the basin of the silhouette energy.
    let centers: Vec<_> = fits.iter().map(|(a, b)| (a.to_ellipse().center(), b.to_ellipse().center())).collect();
    let coarse = pose_from_centers(rig0, &centers, settings)?;

    // Stage 2: joint silhouette adjustment. Per-bubble adjustment under a still imperfect
    // rig can collapse shapes onto needles or disks, so bubbles start from the closed form.
    let mut starts = Vec::with_capacity(fits.len());
    let mut usable = Vec::with_capacity(fits.len());
    for (&i, (c1, c2)) in kept.iter().zip(&fits) {
        if let Ok(e0) = init_ellipsoid(&coarse, c1, c2) {
            usable.push(i);
            starts.push(e0);
        }
    }
    let kept = usable;
    if kept.len() < settings.min_bubbles {
        return Err(Error::Underconstrained(format!("only {} bubbles could be triangulated", kept.len())));
    }
    check_spread(&starts)?;
    let rig0 = &coarse;

    let pose_chart = PoseChart::new(&rig0.pose2);
    let charts: Vec<EllipsoidChart> = starts.iter().map(|e| EllipsoidChart { base_rotation: e.rotation }).collect();
    let mut x0 = DVector::zeros(POSE_DIM + BUBBLE_DIM * starts.len());
    for (k, (e, chart)) in starts.iter().zip(&charts).enumerate() {
        x0.rows_mut(POSE_DIM + k * BUBBLE_DIM, BUBBLE_DIM).copy_from_slice(&chart.encode(e));
    }
    let problem = JointProblem {
        rig0: *rig0,
        pose_chart,
        charts,
        obs: kept.iter().map(|&i| &observations[i]).collect(),
        delta: settings.huber_delta,
    };
    let out = minimize(&problem, x0, &settings.lm)
        .ok_or_else(|| Error::Underconstrained("initial bubbles do not project into both views".into()))?;

    let mut rig = *rig0;
    rig.pose2 = problem.pose_chart.decode(&out.params.as_slice()[..POSE_DIM]);
    let mut ellipsoids = vec![None; observations.len()];
    for (k, &i) in kept.iter().enumerate() {
        ellipsoids[i] = problem.charts[k].decode(problem.bubble_slice(&out.params, k)).map(|e| e.canonical());
    }
    Ok(SelfCalibration {
        rig,
        ellipsoids,
        initial_cost: out.initial_cost,
        cost: out.cost,
        iterations: out.iterations,
        converged: out.converged,
    })
}

fn pose_from_centers(rig0: &StereoRig, centers: &[(Point2<f64>, Point2<f64>)], settings: &SelfCalSettings) -> Result<StereoRig> {
    let chart = PoseChart::new(&rig0.pose2);
    let delta = settings.huber_delta;
    let residuals = |x: &DVector<f64>| {
        let mut rig = *rig0;
        rig.pose2 = chart.decode(x.as_slice());
        let f = rig.fundamental();
        let mut out = Vec::with_capacity(2 * centers.len());
        for (a, b) in centers {
            let l2 = Line2::from_homogeneous(f * Vector3::new(a.x, a.y, 1.0));
            let l1 = Line2::from_homogeneous(f.transpose() * Vector3::new(b.x, b.y, 1.0));
            for r in [l2.signed_distance(*b), l1.signed_distance(*a)] {
                // square root of the Huber penalty keeps the sum of squares equal to it
                out.push(r.signum() * huber(r, delta).0.sqrt());
            }
        }
        Some(DVector::from_vec(out))
    };
    let problem = DenseProblem { residuals, steps: DVector::from_element(POSE_DIM, 1e-7) };
    let out = minimize(&problem, DVector::zeros(POSE_DIM), &settings.lm)
        .ok_or_else(|| Error::Underconstrained("epipolar pre-alignment failed".into()))?;
    let mut rig = *rig0;
    rig.pose2 = chart.decode(out.params.as_slice());
    Ok(rig)
}

/// Bubble centers on a single line leave the relative pose unobservable.
fn check_spread(ellipsoids: &[Ellipsoid]) -> Result<()> {
    let n = ellipsoids.len() as f64;
    let mean = ellipsoids.iter().fold(Vector3::zeros(), |a, e| a + e.center.coords) / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for e in ellipsoids {
        let d = e.center.coords - mean;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] == 0.0 || ev[1] < 1e-3 * ev[0] {
        return Err(Error::Underconstrained("bubble centers are collinear".into()));
    }
    Ok(())
}

/// Summed Huber cost of a rig and bubble set against the silhouettes.
pub fn silhouette_cost(rig: &StereoRig, ellipsoids: &[Ellipsoid], observations: &[SilhouettePair], huber_delta: f64) -> Option<f64> {
    let p1 = rig.camera(CameraId::One).projection_matrix();
    let p2 = rig.camera(CameraId::Two).projection_matrix();
    let mut total = 0.0;
    let mut buf = Vec::new();
    for (e, obs) in ellipsoids.iter().zip(observations) {
        buf.clear();
        silhouette_residuals(&p1, &p2, e, &obs.view1, &obs.view2, &mut buf)?;
        total += buf.iter().map(|&r| huber(r, huber_delta).0).sum::<f64>();
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{epipolar_distance, rotation_from_euler_deg};
    use crate::quadrics::project_ellipsoid;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scene(rig: &StereoRig, n: usize, seed: u64) -> Vec<Ellipsoid> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c0 = rig.axes_crossing().unwrap();
        (0..n)
            .map(|_| {
                let c = c0 + Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-60.0..60.0), rng.random_range(-30.0..30.0));
                let r = rotation_from_euler_deg([rng.random_range(-30.0..30.0), rng.random_range(-180.0..180.0), rng.random_range(-30.0..30.0)]);
                let a = rng.random_range(1.5..4.0);
                Ellipsoid::new(c, r, Vector3::new(a, a * rng.random_range(0.8..1.0), a * rng.random_range(0.55..0.85)))
            })
            .collect()
    }

    fn observe(rig: &StereoRig, bubbles: &[Ellipsoid], sigma: f64, seed: u64) -> Vec<SilhouettePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        bubbles
            .iter()
            .map(|e| {
                let mut views = [CameraId::One, CameraId::Two].map(|id| {
                    project_ellipsoid(&rig.camera(id), e).unwrap().to_ellipse().sample(64)
                });
                if sigma > 0.0 {
                    for p in views.iter_mut().flatten() {
                        p.x += noise.sample(&mut rng);
                        p.y += noise.sample(&mut rng);
                    }
                }
                let [view1, view2] = views;
                SilhouettePair { view1, view2 }
            })
            .collect()
    }

    fn perturb(rig: &StereoRig) -> StereoRig {
        let mut out = *rig;
        let dr = rotation_from_euler_deg([0.596, -0.557, 0.708]);
        let t = rig.pose2.translation;
        let axis = t.cross(&Vector3::y()).normalize();
        let turn = Rotation3::from_scaled_axis(axis * (3.0 / t.norm()));
        out.pose2 = Pose::new(dr * rig.pose2.rotation, turn * t);
        out
    }

    fn held_out_error(truth: &StereoRig, estimate: &StereoRig) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let c0 = truth.axes_crossing().unwrap();
        let n = 200;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = c0 + Vector3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
            let x1 = truth.camera(CameraId::One).project_ideal(&x).unwrap();
            let x2 = truth.camera(CameraId::Two).project_ideal(&x).unwrap();
            sum += epipolar_distance(estimate, x1, x2);
        }
        sum / n as f64
    }

    #[test]
    fn perturbed_rig_is_recovered_from_silhouettes() {
        let truth = StereoRig::laboratory_reference();
        let obs = observe(&truth, &scene(&truth, 50, 7), 0.0, 0);
        let rig0 = perturb(&truth);
        let before = held_out_error(&truth, &rig0);
        assert!(before > 3.0, "before {before}");
        let out = self_calibrate(&rig0, &obs, &SelfCalSettings::default()).unwrap();
        let after = held_out_error(&truth, &out.rig);
        assert!(after < 0.2, "after {after} (before {before})");
        assert!((out.rig.baseline() - rig0.baseline()).abs() < 1e-9);
        assert!(out.cost <= out.initial_cost);
    }

    #[test]
    fn noisy_silhouettes_still_bring_epipolar_error_below_a_pixel() {
        let truth = StereoRig::laboratory_reference();
        let obs = observe(&truth, &scene(&truth, 50, 17), 0.3, 5);
        let out = self_calibrate(&perturb(&truth), &obs, &SelfCalSettings::default()).unwrap();
        let after = held_out_error(&truth, &out.rig);
        assert!(after < 1.0, "after {after}");
    }

    #[test]
    fn exact_rig_is_a_fixed_point() {
        let truth = StereoRig::laboratory_reference();
        let obs = observe(&truth, &scene(&truth, 12, 3), 0.0, 0);
        let out = self_calibrate(&truth, &obs, &SelfCalSettings::default()).unwrap();
        let dq: f64 = out
            .rig
            .pose2
            .quaternion_wxyz()
            .iter()
            .zip(truth.pose2.quaternion_wxyz())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dq < 1e-6, "rotation moved by {dq}");
        assert!((out.rig.pose2.translation - truth.pose2.translation).abs().max() < 1e-6 * truth.baseline());
    }

    #[test]
    fn two_bubbles_are_underconstrained() {
        let truth = StereoRig::laboratory_reference();
        let obs = observe(&truth, &scene(&truth, 2, 3), 0.0, 0);
        assert!(matches!(self_calibrate(&truth, &obs, &SelfCalSettings::default()), Err(Error::Underconstrained(_))));
    }

    #[test]
    fn collinear_bubbles_are_underconstrained() {
        let truth = StereoRig::laboratory_reference();
        let c0 = truth.axes_crossing().unwrap();
        let bubbles: Vec<_> = (0..12)
            .map(|i| Ellipsoid::new(c0 + Vector3::new(0.0, -50.0 + 9.0 * i as f64, 0.0), Rotation3::identity(), Vector3::new(2.5, 2.0, 1.5)))
            .collect();
        let obs = observe(&truth, &bubbles, 0.0, 0);
        assert!(matches!(self_calibrate(&truth, &obs, &SelfCalSettings::default()), Err(Error::Underconstrained(_))));
    }

    #[test]
    fn metric_scale_is_unobservable() {
        let truth = StereoRig::laboratory_reference();
        let bubbles = scene(&truth, 5, 9);
        let obs = observe(&truth, &bubbles, 0.3, 4);
        let base = silhouette_cost(&truth, &bubbles, &obs, 1.0).unwrap();
        for s in [0.5, 0.9, 1.3, 2.0] {
            let mut rig = truth;
            rig.pose2.translation *= s;
            let scaled: Vec<_> = bubbles
                .iter()
                .map(|e| Ellipsoid::new(Point3::from(e.center.coords * s), e.rotation, e.semi_axes * s))
                .collect();
            let c = silhouette_cost(&rig, &scaled, &obs, 1.0).unwrap();
            assert!((c - base).abs() < 1e-8 * base.max(1.0), "scale {s}: {c} vs {base}");
        }
    }

    #[test]
    fn huber_is_quadratic_then_linear() {
        assert_eq!(huber(0.5, 1.0), (0.25, 1.0));
        let (rho, w) = huber(3.0, 1.0);
        assert_eq!(rho, 5.0);
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
}
