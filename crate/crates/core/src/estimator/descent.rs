//! Projected descent over the feasible set of reduced weights.
//!
//! Each iteration first tries a projected Gauss-Newton step on the free
//! variables and falls back to a projected gradient step with a
//! Barzilai-Borwein trial length; both are safeguarded by Armijo
//! backtracking along the projection arc.

use nalgebra::{DMatrix, DVector};

use super::objective::{Evaluation, Objective};
use crate::simplex::project_gamma;

pub const PG_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 2000;
const ARMIJO: f64 = 1e-4;
const BOUND_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DescentRun {
    pub x: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub ridged: bool,
}

pub fn projected_gradient_norm(x: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    (x - project_gamma(&(x - grad))).amax()
}

/// Projected gradient step measured in weight units: the gradient is divided
/// by the largest curvature so that rescaling the objective (say, the noise
/// intensity by 1e6) leaves the stopping rule unchanged.
fn stationarity(x: &DVector<f64>, e: &Evaluation) -> f64 {
    let curvature = e.gn_hessian.diagonal().max();
    if curvature.is_finite() && curvature > 0.0 {
        projected_gradient_norm(x, &(&e.grad / curvature))
    } else {
        projected_gradient_norm(x, &e.grad)
    }
}

pub fn descend(obj: &Objective<'_>, start: &DVector<f64>) -> DescentRun {
    let mut x = project_gamma(start);
    let mut e = obj.evaluate(&x);
    let mut ridged = e.ridged;
    let mut converged = false;
    let mut iterations = 0;
    let mut bb_step: Option<f64> = None;
    let mut flat_steps = 0;

    if !e.value.is_finite() {
        return DescentRun {
            value: e.value,
            x,
            converged: false,
            iterations,
            ridged: true,
        };
    }

    while iterations < MAX_ITER {
        if stationarity(&x, &e) < PG_TOL {
            converged = true;
            break;
        }
        iterations += 1;

        let mut accepted = newton_direction(&x, &e).and_then(|d| line_search(obj, &x, &e, &d, 1.0));
        if accepted.is_none() {
            let t0 = bb_step.unwrap_or_else(|| 1.0 / e.grad.amax().max(1e-300));
            accepted = line_search(obj, &x, &e, &e.grad, t0);
        }
        let Some((xn, en)) = accepted else {
            // no representable decrease along the projection arc
            converged = true;
            break;
        };

        let s = &xn - &x;
        let y = &en.grad - &e.grad;
        let sy = s.dot(&y);
        bb_step = (sy > 0.0).then(|| s.norm_squared() / sy);

        let rel_change = (e.value - en.value).abs() / e.value.abs().max(1e-300);
        if s.amax() < 1e-13 && rel_change < 1e-15 {
            flat_steps += 1;
        } else {
            flat_steps = 0;
        }
        ridged |= en.ridged;
        x = xn;
        e = en;
        if flat_steps >= 3 {
            converged = true;
            break;
        }
    }

    DescentRun {
        x,
        value: e.value,
        converged,
        iterations,
        ridged,
    }
}

/// Gauss-Newton direction on the variables not pinned at a bound. When the
/// sum constraint is tight and the step would push through it, the direction
/// is restricted to the face.
fn newton_direction(x: &DVector<f64>, e: &Evaluation) -> Option<DVector<f64>> {
    let n = x.len();
    let free: Vec<usize> = (0..n)
        .filter(|&j| !(x[j] <= BOUND_TOL && e.grad[j] > 0.0))
        .collect();
    if free.is_empty() {
        return None;
    }
    let k = free.len();
    let h = DMatrix::from_fn(k, k, |a, b| e.gn_hessian[(free[a], free[b])]);
    let g = DVector::from_fn(k, |a, _| e.grad[free[a]]);
    let chol = h.cholesky()?;
    let mut d = chol.solve(&g);
    if 1.0 - x.sum() <= BOUND_TOL && d.sum() < 0.0 {
        let hinv_one = chol.solve(&DVector::from_element(k, 1.0));
        let denom = hinv_one.sum();
        if denom > 0.0 {
            d -= hinv_one * (d.sum() / denom);
        }
    }
    let mut full = DVector::zeros(n);
    for (a, &j) in free.iter().enumerate() {
        full[j] = d[a];
    }
    full.iter().all(|v| v.is_finite()).then_some(full)
}

fn line_search(
    obj: &Objective<'_>,
    x: &DVector<f64>,
    e: &Evaluation,
    direction: &DVector<f64>,
    t0: f64,
) -> Option<(DVector<f64>, Evaluation)> {
    let mut t = t0;
    for _ in 0..60 {
        let xn = project_gamma(&(x - t * direction));
        let step = &xn - x;
        if step.amax() < 1e-16 {
            return None;
        }
        let slope = e.grad.dot(&step);
        if slope < 0.0 {
            let en = obj.evaluate(&xn);
            if en.value.is_finite() && en.value <= e.value + ARMIJO * slope {
                return Some((xn, en));
            }
        }
        t *= 0.5;
    }
    None
}
