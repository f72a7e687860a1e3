//! Primal active-set method for small, dense, strictly convex QPs:
//!
//! ```text
//! min  0.5 x'Hx + c'x
//! s.t. A_eq x  = b_eq
//!      A_in x <= b_in
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the equality rows (sign free).
    pub eq_multipliers: DVector<f64>,
    /// Multipliers of the inequality rows, nonnegative, zero when inactive.
    pub in_multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

impl QpProblem {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }

    /// Solves from the feasible starting point `x0`.
    pub fn solve(&self, x0: &DVector<f64>) -> Result<QpSolution> {
        let n = self.h.nrows();
        let n_eq = self.a_eq.nrows();
        let n_in = self.a_in.nrows();
        let scale = self.h.amax().max(self.c.amax()).max(1.0);
        let feas_tol = 1e-9;
        if (&self.a_eq * x0 - &self.b_eq).amax() > feas_tol
            || (0..n_in).any(|i| self.a_in.row(i).dot(&x0.transpose()) > self.b_in[i] + feas_tol)
        {
            return Err(Error::invalid("QP starting point is infeasible"));
        }

        let mut x = x0.clone();
        let mut working: Vec<usize> = (0..n_in)
            .filter(|&i| (self.a_in.row(i).dot(&x.transpose()) - self.b_in[i]).abs() <= 1e-14)
            .collect();
        let max_iter = 50 * (n + n_in + 1);

        for iter in 1..=max_iter {
            let k = n_eq + working.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.h);
            for r in 0..n_eq {
                for j in 0..n {
                    kkt[(n + r, j)] = self.a_eq[(r, j)];
                    kkt[(j, n + r)] = self.a_eq[(r, j)];
                }
            }
            for (r, &i) in working.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + n_eq + r, j)] = self.a_in[(i, j)];
                    kkt[(j, n + n_eq + r)] = self.a_in[(i, j)];
                }
            }
            let grad = &self.h * &x + &self.c;
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&grad));
            let sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or(Error::Singular("QP KKT system"))?;
            let p = sol.rows(0, n).into_owned();
            let nu = sol.rows(n, k).into_owned();

            if p.amax() <= 1e-13 * (1.0 + x.amax()) {
                let (worst, min_mu) = working
                    .iter()
                    .enumerate()
                    .map(|(r, _)| (r, nu[n_eq + r]))
                    .fold(
                        (usize::MAX, 0.0),
                        |acc, (r, v)| if v < acc.1 { (r, v) } else { acc },
                    );
                if min_mu >= -1e-12 * scale {
                    let mut in_mult = DVector::zeros(n_in);
                    for (r, &i) in working.iter().enumerate() {
                        in_mult[i] = nu[n_eq + r].max(0.0);
                    }
                    let mut active = working.clone();
                    active.sort_unstable();
                    return Ok(QpSolution {
                        x,
                        eq_multipliers: nu.rows(0, n_eq).into_owned(),
                        in_multipliers: in_mult,
                        active,
                        iterations: iter,
                    });
                }
                working.remove(worst);
                continue;
            }

            let mut step = 1.0;
            let mut blocking = None;
            for i in 0..n_in {
                if working.contains(&i) {
                    continue;
                }
                let ap = self.a_in.row(i).dot(&p.transpose());
                if ap > 1e-15 {
                    let slack = self.b_in[i] - self.a_in.row(i).dot(&x.transpose());
                    let t = (slack / ap).max(0.0);
                    if t < step {
                        step = t;
                        blocking = Some(i);
                    }
                }
            }
            x.axpy(step, &p, 1.0);
            if let Some(i) = blocking {
                working.push(i);
            }
        }
        Err(Error::invalid("QP active-set iteration limit reached"))
    }
}
