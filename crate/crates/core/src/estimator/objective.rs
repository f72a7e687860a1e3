use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{CovarianceSource, EstimationMode, EstimationProblem};

/// Above this (estimated) condition number the mixture covariance gets a ridge.
const MAX_CONDITION: f64 = 1e12;
const RIDGE_SCALE: f64 = 1e-10;

/// Value, gradient and Gauss-Newton curvature of the estimation objective at
/// one point of the feasible set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: DVector<f64>,
    pub gn_hessian: DMatrix<f64>,
    /// The mixture covariance needed a ridge at this point.
    pub ridged: bool,
}

/// Precomputed pieces of `F1 + F2` (or either term alone) for one problem.
pub struct Objective<'a> {
    problem: &'a EstimationProblem<'a>,
    use_prior: bool,
    use_market: bool,
    free: usize,
    mean_diffs: Vec<DVector<f64>>,
    second_moment_last: DMatrix<f64>,
    second_moment_diffs: Vec<DMatrix<f64>>,
    fixed_chol: Option<Cholesky<f64, Dyn>>,
    target: DVector<f64>,
    scale: f64,
    noise_precision: DVector<f64>,
}

/// The forward map and its Jacobian at one point.
struct ForwardEval {
    g: DVector<f64>,
    jacobian: Option<DMatrix<f64>>,
    ridged: bool,
}

impl<'a> Objective<'a> {
    pub fn new(problem: &'a EstimationProblem<'a>) -> Self {
        let comps = problem.model.components();
        let m = comps.len();
        let free = m - 1;
        let last = &comps[m - 1];
        let second = |c: &crate::gmm::GaussianComponent| c.sigma() + c.mu() * c.mu().transpose();
        let second_moment_last = second(last);
        let mean_diffs = comps[..free].iter().map(|c| c.mu() - last.mu()).collect();
        let second_moment_diffs = comps[..free]
            .iter()
            .map(|c| second(c) - &second_moment_last)
            .collect();
        let fixed_chol = match problem.covariance {
            CovarianceSource::Mixture => None,
            CovarianceSource::Fixed(s) => Cholesky::new(s.clone()),
        };
        let obs = problem.observation;
        let p = &obs.params;
        let target = (&obs.x_m - p.alpha_u * &obs.x_u_star) / p.alpha_n;
        let noise_precision =
            DVector::from_iterator(p.n_assets(), p.sigma_noise.iter().map(|s| 1.0 / (s * s)));
        let (use_prior, use_market) = match problem.mode {
            EstimationMode::Backward => (true, false),
            EstimationMode::Forward => (false, true),
            EstimationMode::Combined => (true, true),
        };
        Self {
            problem,
            use_prior,
            use_market,
            free,
            mean_diffs,
            second_moment_last,
            second_moment_diffs,
            fixed_chol,
            target,
            scale: p.alpha_i / p.alpha_n,
            noise_precision,
        }
    }

    pub fn dim(&self) -> usize {
        self.free
    }

    fn full_weights(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.free + 1);
        full.rows_mut(0, self.free).copy_from(x);
        full[self.free] = 1.0 - x.sum();
        full
    }

    fn forward(&self, x: &DVector<f64>, want_jacobian: bool) -> Option<ForwardEval> {
        let comps = self.problem.model.components();
        let delta = self.problem.observation.params.delta_i;
        let lambda = self.full_weights(x);
        let mut mu = DVector::zeros(self.problem.model.n_assets());
        for (c, &l) in comps.iter().zip(lambda.iter()) {
            mu.axpy(l, c.mu(), 1.0);
        }

        if let Some(chol) = &self.fixed_chol {
            let g = chol.solve(&mu) / delta;
            let jacobian = want_jacobian.then(|| {
                let mut j = DMatrix::zeros(mu.len(), self.free);
                for (k, a) in self.mean_diffs.iter().enumerate() {
                    j.set_column(k, &(chol.solve(a) / delta));
                }
                j
            });
            return Some(ForwardEval {
                g,
                jacobian,
                ridged: false,
            });
        }

        let mut sigma = self.second_moment_last.clone();
        for (k, d) in self.second_moment_diffs.iter().enumerate() {
            sigma += d * x[k];
        }
        sigma.ger(-1.0, &mu, &mu, 1.0);
        let (chol, ridged) = factor_with_ridge(sigma)?;
        let y = chol.solve(&mu);
        let g = &y / delta;
        let jacobian = want_jacobian.then(|| {
            let mu_y = mu.dot(&y);
            let mut j = DMatrix::zeros(mu.len(), self.free);
            for k in 0..self.free {
                let a = &self.mean_diffs[k];
                // d Sigma / d x_k = D_k - a mu' - mu a'
                let mut rhs = a * (1.0 + mu_y) - &self.second_moment_diffs[k] * &y;
                rhs.axpy(a.dot(&y), &mu, 1.0);
                j.set_column(k, &(chol.solve(&rhs) / delta));
            }
            j
        });
        Some(ForwardEval {
            g,
            jacobian,
            ridged,
        })
    }

    pub fn prior_term(&self, x: &DVector<f64>) -> f64 {
        let d = x - self.problem.prior.lambda_hat_minus();
        d.dot(&(self.problem.prior.phi_inv() * &d))
    }

    /// Forward residual term; `+inf` when the mixture covariance cannot be
    /// factored even with a ridge.
    pub fn market_term(&self, x: &DVector<f64>) -> f64 {
        match self.forward(x, false) {
            Some(f) => self.weighted_residual(&f.g),
            None => f64::INFINITY,
        }
    }

    fn residual(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.target - self.scale * g
    }

    fn weighted_residual(&self, g: &DVector<f64>) -> f64 {
        let r = self.residual(g);
        r.iter()
            .zip(self.noise_precision.iter())
            .map(|(ri, wi)| wi * ri * ri)
            .sum()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        if self.use_prior {
            v += self.prior_term(x);
        }
        if self.use_market {
            v += self.market_term(x);
        }
        v
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        let n = self.free;
        let mut value = 0.0;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut ridged = false;
        if self.use_prior {
            let phi_inv = self.problem.prior.phi_inv();
            let d = x - self.problem.prior.lambda_hat_minus();
            let pd = phi_inv * &d;
            value += d.dot(&pd);
            grad += 2.0 * pd;
            hess += 2.0 * phi_inv;
        }
        if self.use_market {
            match self.forward(x, true) {
                Some(f) => {
                    ridged = f.ridged;
                    let r = self.residual(&f.g);
                    let wr = r.component_mul(&self.noise_precision);
                    value += r.dot(&wr);
                    let j = f.jacobian.expect("jacobian requested");
                    grad -= 2.0 * self.scale * j.transpose() * &wr;
                    let mut wj = j.clone();
                    for (mut row, w) in wj.row_iter_mut().zip(self.noise_precision.iter()) {
                        row *= *w;
                    }
                    hess += 2.0 * self.scale * self.scale * j.transpose() * wj;
                }
                None => {
                    value = f64::INFINITY;
                    ridged = true;
                }
            }
        }
        Evaluation {
            value,
            grad,
            gn_hessian: hess,
            ridged,
        }
    }
}

fn factor_with_ridge(sigma: DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, bool)> {
    let n = sigma.nrows();
    if let Some(chol) = Cholesky::new(sigma.clone()) {
        let diag = chol.l_dirty().diagonal();
        let ratio = diag.max() / diag.min();
        if ratio * ratio <= MAX_CONDITION {
            return Some((chol, false));
        }
    }
    let ridge = RIDGE_SCALE * sigma.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let ridged = sigma + DMatrix::identity(n, n) * ridge;
    Cholesky::new(ridged).map(|c| (c, true))
}
