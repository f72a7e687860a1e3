//! The feasible set of reduced weights, `{x >= 0, sum(x) <= 1}`, and
//! Euclidean projections onto it.

use nalgebra::DVector;

pub fn in_gamma(x: &DVector<f64>, tol: f64) -> bool {
    x.iter().all(|v| v.is_finite() && *v >= -tol) && x.sum() <= 1.0 + tol
}

/// Euclidean projection onto the probability simplex `{x >= 0, sum(x) = 1}`.
/// Sort-based, O(m log m).
pub fn project_simplex(y: &DVector<f64>) -> DVector<f64> {
    let n = y.len();
    if n == 0 {
        return y.clone();
    }
    let mut sorted: Vec<f64> = y.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    y.map(|v| (v - tau).max(0.0))
}

/// Euclidean projection onto `{x >= 0, sum(x) <= 1}`.
pub fn project_gamma(y: &DVector<f64>) -> DVector<f64> {
    let clipped = y.map(|v| v.max(0.0));
    if clipped.sum() <= 1.0 {
        clipped
    } else {
        project_simplex(y)
    }
}

/// Vertices of the feasible set: the origin followed by each unit vector.
pub fn vertices(dim: usize) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::zeros(dim)];
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        out.push(e);
    }
    out
}

/// Indices of active constraints at `x`, using the row order
/// `[sum(x) <= 1, -x_1 <= 0, ..., -x_{m-1} <= 0]`.
pub fn active_constraints(x: &DVector<f64>, tol: f64) -> Vec<usize> {
    let mut out = Vec::new();
    if x.sum() >= 1.0 - tol {
        out.push(0);
    }
    for (j, v) in x.iter().enumerate() {
        if *v <= tol {
            out.push(j + 1);
        }
    }
    out
}

/// Regular grid over the feasible set in two dimensions.
pub fn grid_2d(step: f64) -> impl Iterator<Item = DVector<f64>> {
    let k = (1.0 / step).round() as usize;
    (0..=k).flat_map(move |i| {
        (0..=(k - i)).map(move |j| DVector::from_column_slice(&[i as f64 * step, j as f64 * step]))
    })
}
