use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Damped Gauss-Newton settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Relative step size below which the iteration stops.
    pub param_tol: f64,
    /// Relative cost decrease below which the iteration stops.
    pub cost_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self { max_iterations: 100, param_tol: 1e-10, cost_tol: 1e-12, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A least-squares problem that can linearize itself and solve its damped normal equations.
pub(crate) trait Problem {
    type Linearization;
    /// `None` when `x` is outside the valid domain.
    fn cost(&self, x: &DVector<f64>) -> Option<f64>;
    fn linearize(&self, x: &DVector<f64>) -> Option<Self::Linearization>;
    /// Step `δ` solving `(JᵀWJ + λ·D) δ = −JᵀWr`.
    fn solve(&self, lin: &Self::Linearization, lambda: f64) -> Option<DVector<f64>>;
}

const MAX_REJECTIONS: usize = 12;

pub(crate) fn minimize<P: Problem>(problem: &P, x0: DVector<f64>, settings: &LmSettings) -> Option<LmOutcome> {
    let mut x = x0;
    let mut cost = problem.cost(&x)?;
    let initial_cost = cost;
    let mut lambda = settings.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let Some(lin) = problem.linearize(&x) else { break };
        let mut accepted = false;
        let mut tiny_step = false;
        for _ in 0..MAX_REJECTIONS {
            let Some(step) = problem.solve(&lin, lambda) else {
                lambda *= 10.0;
                continue;
            };
            if step.norm() <= settings.param_tol * (x.norm() + settings.param_tol) {
                tiny_step = true;
                break;
            }
            let trial = &x + &step;
            match problem.cost(&trial) {
                Some(c) if c < cost => {
                    let decrease = cost - c;
                    x = trial;
                    cost = c;
                    lambda = (lambda * 0.3).max(1e-12);
                    accepted = true;
                    if decrease <= settings.cost_tol * cost.max(f64::MIN_POSITIVE) {
                        converged = true;
                    }
                    if step.norm() <= settings.param_tol * (x.norm() + settings.param_tol) {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if tiny_step || converged {
            converged = true;
            break;
        }
        if !accepted {
            // No descent direction at any damping: a stationary point to working precision.
            converged = true;
            break;
        }
    }
    Some(LmOutcome { params: x, initial_cost, cost, iterations, converged })
}

/// Dense problem with a forward residual function and central-difference Jacobian.
pub(crate) struct DenseProblem<F> {
    pub residuals: F,
    pub steps: DVector<f64>,
}

pub(crate) struct DenseLinearization {
    h: DMatrix<f64>,
    g: DVector<f64>,
}

pub(crate) fn numeric_jacobian<F>(f: &F, x: &DVector<f64>, steps: &DVector<f64>, m: usize) -> Option<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut j = DMatrix::zeros(m, x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        let h = steps[k];
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        j.column_mut(k).copy_from(&((fp - fm) / (2.0 * h)));
    }
    Some(j)
}

/// `(H + λ·diag(H)) δ = −g`, with a floor on the damping diagonal so unobservable
/// directions stay put instead of making the system singular.
pub(crate) fn damped_solve(h: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = h.nrows();
    let mean_diag = (h.trace() / n as f64).max(f64::MIN_POSITIVE);
    let mut a = h.clone();
    for i in 0..n {
        let d = h[(i, i)].max(1e-9 * mean_diag);
        a[(i, i)] += lambda * d + 1e-14 * mean_diag;
    }
    let chol = a.cholesky()?;
    Some(-chol.solve(g))
}

impl<F> Problem for DenseProblem<F>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    type Linearization = DenseLinearization;

    fn cost(&self, x: &DVector<f64>) -> Option<f64> {
        let r = (self.residuals)(x)?;
        let c = r.norm_squared();
        c.is_finite().then_some(c)
    }

    fn linearize(&self, x: &DVector<f64>) -> Option<DenseLinearization> {
        let r = (self.residuals)(x)?;
        let j = numeric_jacobian(&self.residuals, x, &self.steps, r.len())?;
        Some(DenseLinearization { h: j.tr_mul(&j), g: j.tr_mul(&r) })
    }

    fn solve(&self, lin: &DenseLinearization, lambda: f64) -> Option<DVector<f64>> {
        damped_solve(&lin.h, &lin.g, lambda)
    }
}
