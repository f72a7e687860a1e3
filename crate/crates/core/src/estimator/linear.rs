//! The special case where both rational investors share one covariance and
//! one risk aversion, so the market portfolio is affine in the weights:
//! `x_M = q0 + P x + eps`, `eps ~ N(0, Omega)`.

use nalgebra::{DMatrix, DVector};

use super::{gamma_constraints, metric_projection, EstimationMode, EstimationResult, ACTIVE_TOL};
use crate::equilibrium::MarketParams;
use crate::error::{Error, Result};
use crate::gmm::{MixtureModel, MixtureWeights, PriorSpec};
use crate::linalg::{self, check_len};
use crate::simplex;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCase {
    pub q0: DVector<f64>,
    pub p: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl LinearCase {
    /// `q0 = a_U x_U + a_I (delta Sigma)^{-1} mu_m`,
    /// `P = a_I (delta Sigma)^{-1} [mu_1 - mu_m, ..., mu_{m-1} - mu_m]`.
    pub fn new(
        model: &MixtureModel,
        sigma: &DMatrix<f64>,
        params: &MarketParams,
        x_u_star: &DVector<f64>,
    ) -> Result<Self> {
        let n = model.n_assets();
        check_len("shared covariance", n, sigma.nrows())?;
        check_len("less-informed holding", n, x_u_star.len())?;
        params.validate()?;
        let chol = linalg::cholesky(sigma, "shared covariance")?;
        let comps = model.components();
        let m = comps.len();
        let scale = params.alpha_i / params.delta_i;
        let last = comps[m - 1].mu();
        let q0 = params.alpha_u * x_u_star + chol.solve(last) * scale;
        let mut p = DMatrix::zeros(n, m - 1);
        for (j, c) in comps[..m - 1].iter().enumerate() {
            p.set_column(j, &(chol.solve(&(c.mu() - last)) * scale));
        }
        let (g, h) = gamma_constraints(m - 1);
        Ok(Self { q0, p, g, h })
    }

    pub fn n_free(&self) -> usize {
        self.p.ncols()
    }

    fn check(&self, prior: &PriorSpec, x_m: &DVector<f64>, omega: &DMatrix<f64>) -> Result<()> {
        check_len("prior dimension", self.n_free(), prior.n_free())?;
        check_len("market portfolio", self.q0.len(), x_m.len())?;
        check_len("noise covariance", self.q0.len(), omega.nrows())?;
        check_len("noise covariance", self.q0.len(), omega.ncols())
    }

    /// Posterior precision `Phi^{-1} + P' Omega^{-1} P` and the linear term
    /// `Phi^{-1} lambda_hat + P' Omega^{-1} (x_M - q0)`.
    fn precision_and_shift(
        &self,
        prior: &PriorSpec,
        x_m: &DVector<f64>,
        omega: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.check(prior, x_m, omega)?;
        let om = linalg::cholesky(omega, "noise covariance")?;
        let om_p = om.solve(&self.p);
        let mut precision = prior.phi_inv() + self.p.transpose() * &om_p;
        linalg::symmetrize(&mut precision);
        let shift =
            prior.phi_inv() * prior.lambda_hat_minus() + om_p.transpose() * (x_m - &self.q0);
        Ok((precision, shift))
    }

    /// `|x_M - q0 - P x|^2` in the `Omega^{-1}` metric.
    pub fn market_term(
        &self,
        x: &DVector<f64>,
        x_m: &DVector<f64>,
        omega: &DMatrix<f64>,
    ) -> Result<f64> {
        let r = x_m - &self.q0 - &self.p * x;
        let om = linalg::cholesky(omega, "noise covariance")?;
        Ok(r.dot(&om.solve(&r)))
    }
}

/// Closed-form combined estimate. When the unconstrained mode leaves the
/// feasible set the equivalent QP `min |x - Lambda^{-1} kappa|^2_Lambda` is
/// solved and its multipliers are returned.
pub fn solve_combined_linear(
    case: &LinearCase,
    prior: &PriorSpec,
    x_m: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<EstimationResult> {
    let (precision, shift) = case.precision_and_shift(prior, x_m, omega)?;
    let chol = precision
        .clone()
        .cholesky()
        .ok_or(Error::Singular("posterior precision"))?;
    let center = chol.solve(&shift);
    let (x, nu, iterations) = metric_projection(&precision, &center)?;
    let lambda = MixtureWeights::from_reduced(&x)?;
    let reduced = lambda.reduced();
    let d = &reduced - prior.lambda_hat_minus();
    let objective_value =
        d.dot(&(prior.phi_inv() * &d)) + case.market_term(&reduced, x_m, omega)?;
    Ok(EstimationResult {
        mode: EstimationMode::Combined,
        active_constraints: simplex::active_constraints(&reduced, ACTIVE_TOL),
        lambda,
        objective_value,
        converged: true,
        multipliers: Some(nu),
        iterations,
        ill_conditioned: false,
    })
}

/// Gaussian posterior of the reduced weights given `x_M`, ignoring the
/// feasible set.
pub fn posterior_linear(
    case: &LinearCase,
    prior: &PriorSpec,
    x_m: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (precision, shift) = case.precision_and_shift(prior, x_m, omega)?;
    let cov = linalg::spd_inverse(&precision, "posterior precision")?;
    let mean = &cov * shift;
    Ok((mean, cov))
}
