//! Backward-looking, forward-looking and combined (MAP) estimates of the
//! mixture weights.
//!
//! * backward: `min F1`: the prior mean projected onto the feasible set in
//!   the prior's metric;
//! * forward: `min F2`: invert the market-clearing equation;
//! * combined: `min F1 + F2`: the posterior mode.
//!
//! `F1(x) = |x - lambda_hat|^2` in the `Phi^{-1}` metric and
//! `F2(x) = |(x_M - a_U x_U - a_I g(x)) / a_N|^2` in the `Sigma_N^{-1}`
//! metric, where `g` maps weights to the informed investor's holding.

mod descent;
mod linear;
mod objective;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use descent::{projected_gradient_norm, MAX_ITER, PG_TOL};
pub use linear::{posterior_linear, solve_combined_linear, LinearCase};
pub use objective::{Evaluation, Objective};

use crate::equilibrium::EquilibriumObservation;
use crate::error::{Error, Result};
use crate::gmm::{mixture_moments, MixtureModel, MixtureWeights, PriorSpec};
use crate::linalg::check_len;
use crate::qp::QpProblem;
use crate::simplex;

/// Tolerance for reporting a constraint as active.
pub const ACTIVE_TOL: f64 = 1e-10;
/// Objective values closer than this are treated as a tie across starts.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationMode {
    Backward,
    Forward,
    Combined,
}

impl EstimationMode {
    pub const ALL: [EstimationMode; 3] = [Self::Backward, Self::Combined, Self::Forward];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Backward => "backward",
            Self::Forward => "forward",
            Self::Combined => "combined",
        }
    }
}

/// Which covariance the informed investor's forward map uses.
#[derive(Debug, Clone, Copy)]
pub enum CovarianceSource<'a> {
    /// Mixture covariance at the candidate weights; the map is nonlinear.
    Mixture,
    /// A known covariance shared by both rational investors; the map is
    /// affine in the weights.
    Fixed(&'a DMatrix<f64>),
}

#[derive(Debug, Clone, Copy)]
pub struct EstimationProblem<'a> {
    pub model: &'a MixtureModel,
    pub prior: &'a PriorSpec,
    pub observation: &'a EquilibriumObservation,
    pub mode: EstimationMode,
    pub covariance: CovarianceSource<'a>,
}

impl<'a> EstimationProblem<'a> {
    pub fn new(
        model: &'a MixtureModel,
        prior: &'a PriorSpec,
        observation: &'a EquilibriumObservation,
        mode: EstimationMode,
    ) -> Result<Self> {
        check_len("prior dimension", model.n_components() - 1, prior.n_free())?;
        check_len(
            "observation dimension",
            model.n_assets(),
            observation.x_m.len(),
        )?;
        observation.params.validate()?;
        Ok(Self {
            model,
            prior,
            observation,
            mode,
            covariance: CovarianceSource::Mixture,
        })
    }

    pub fn with_mode(self, mode: EstimationMode) -> Self {
        Self { mode, ..self }
    }

    pub fn with_fixed_covariance(self, sigma: &'a DMatrix<f64>) -> Result<Self> {
        check_len("fixed covariance", self.model.n_assets(), sigma.nrows())?;
        if sigma.clone().cholesky().is_none() {
            return Err(Error::Singular("fixed covariance"));
        }
        Ok(Self {
            covariance: CovarianceSource::Fixed(sigma),
            ..self
        })
    }

    fn expect_mode(&self, mode: EstimationMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::invalid(format!(
                "problem is in {} mode, expected {}",
                self.mode.as_str(),
                mode.as_str()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub mode: EstimationMode,
    pub lambda: MixtureWeights,
    pub objective_value: f64,
    pub converged: bool,
    /// Active rows of `G x <= h`: 0 is the sum row, `j` is `x_j >= 0`.
    pub active_constraints: Vec<usize>,
    /// KKT multipliers of `G x <= h` when a QP path produced the result.
    pub multipliers: Option<DVector<f64>>,
    pub iterations: usize,
    /// The mixture covariance was ridged somewhere along the solver path.
    pub ill_conditioned: bool,
}

impl EstimationResult {
    pub fn reduced(&self) -> DVector<f64> {
        self.lambda.reduced()
    }
}

/// Wire form of an [`EstimationResult`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EstimationResultDocument {
    pub mode: EstimationMode,
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub active_set: Vec<usize>,
}

impl From<&EstimationResult> for EstimationResultDocument {
    fn from(r: &EstimationResult) -> Self {
        Self {
            mode: r.mode,
            lambda: r.lambda.as_slice().to_vec(),
            objective: r.objective_value,
            converged: r.converged,
            active_set: r.active_constraints.clone(),
        }
    }
}

pub fn eval_f1(prior: &PriorSpec, lambda_minus: &DVector<f64>) -> Result<f64> {
    check_len("reduced weights", prior.n_free(), lambda_minus.len())?;
    let d = lambda_minus - prior.lambda_hat_minus();
    Ok(d.dot(&(prior.phi_inv() * &d)))
}

/// Forward residual term. Returns `+inf` when the mixture covariance at
/// `lambda_minus` is singular.
pub fn eval_f2(problem: &EstimationProblem<'_>, lambda_minus: &DVector<f64>) -> Result<f64> {
    check_len(
        "reduced weights",
        problem.model.n_components() - 1,
        lambda_minus.len(),
    )?;
    Ok(Objective::new(problem).market_term(lambda_minus))
}

/// Objective of the problem's own mode at `lambda_minus`.
pub fn objective_value(problem: &EstimationProblem<'_>, lambda_minus: &DVector<f64>) -> f64 {
    Objective::new(problem).value(lambda_minus)
}

fn finish(
    problem: &EstimationProblem<'_>,
    reduced: &DVector<f64>,
    converged: bool,
    multipliers: Option<DVector<f64>>,
    iterations: usize,
    ill_conditioned: bool,
) -> Result<EstimationResult> {
    let lambda = MixtureWeights::from_reduced(reduced)?;
    let reduced = lambda.reduced();
    Ok(EstimationResult {
        mode: problem.mode,
        objective_value: objective_value(problem, &reduced),
        active_constraints: simplex::active_constraints(&reduced, ACTIVE_TOL),
        lambda,
        converged,
        multipliers,
        iterations,
        ill_conditioned,
    })
}

fn degenerate(problem: &EstimationProblem<'_>) -> Option<Result<EstimationResult>> {
    (problem.model.n_components() == 1)
        .then(|| finish(problem, &DVector::zeros(0), true, None, 0, false))
}

/// Constraint rows `G x <= h` of the feasible set with `G = [1'; -I]`.
pub(crate) fn gamma_constraints(dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut g = DMatrix::zeros(dim + 1, dim);
    let mut h = DVector::zeros(dim + 1);
    for j in 0..dim {
        g[(0, j)] = 1.0;
        g[(j + 1, j)] = -1.0;
    }
    h[0] = 1.0;
    (g, h)
}

/// Minimizes `|x - center|^2_metric` over the feasible set. Returns the point
/// and the multipliers of `G x <= h`.
pub(crate) fn metric_projection(
    metric: &DMatrix<f64>,
    center: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, usize)> {
    let dim = center.len();
    if simplex::in_gamma(center, 0.0) {
        return Ok((center.clone(), DVector::zeros(dim + 1), 0));
    }
    let (g, h) = gamma_constraints(dim);
    let qp = QpProblem {
        h: 2.0 * metric,
        c: -2.0 * (metric * center),
        a_eq: DMatrix::zeros(0, dim),
        b_eq: DVector::zeros(0),
        a_in: g,
        b_in: h,
    };
    let start = DVector::from_element(dim, 1.0 / (dim + 1) as f64);
    let sol = qp.solve(&start)?;
    let mut x = sol.x;
    for &row in &sol.active {
        if row > 0 {
            x[row - 1] = 0.0;
        }
    }
    Ok((x, sol.in_multipliers, sol.iterations))
}

pub fn solve_backward(problem: &EstimationProblem<'_>) -> Result<EstimationResult> {
    problem.expect_mode(EstimationMode::Backward)?;
    if let Some(r) = degenerate(problem) {
        return r;
    }
    let prior = problem.prior;
    let (x, nu, iters) = metric_projection(prior.phi_inv(), prior.lambda_hat_minus())?;
    finish(problem, &x, true, Some(nu), iters, false)
}

fn multi_start(problem: &EstimationProblem<'_>) -> Result<EstimationResult> {
    if let Some(r) = degenerate(problem) {
        return r;
    }
    let obj = Objective::new(problem);
    let dim = obj.dim();
    let anchor = problem.prior.lambda_hat_minus();
    let mut starts = vec![
        simplex::project_gamma(anchor),
        DVector::from_element(dim, 1.0 / (dim + 1) as f64),
    ];
    starts.extend(simplex::vertices(dim));

    let runs: Vec<_> = starts.iter().map(|s| descent::descend(&obj, s)).collect();
    let ill_conditioned = runs.iter().any(|r| r.ridged);
    let iterations = runs.iter().map(|r| r.iterations).sum();
    let best = runs.iter().filter(|r| r.value.is_finite()).min_by(|a, b| {
        if (a.value - b.value).abs() < TIE_TOL {
            let da = (&a.x - anchor).norm();
            let db = (&b.x - anchor).norm();
            da.total_cmp(&db)
        } else {
            a.value.total_cmp(&b.value)
        }
    });
    match best {
        Some(run) => finish(
            problem,
            &run.x,
            run.converged,
            None,
            iterations,
            ill_conditioned,
        ),
        None => {
            // every start hit a singular covariance; report the prior mean
            let mut r = finish(
                problem,
                &simplex::project_gamma(anchor),
                false,
                None,
                iterations,
                true,
            )?;
            r.converged = false;
            Ok(r)
        }
    }
}

pub fn solve_forward(problem: &EstimationProblem<'_>) -> Result<EstimationResult> {
    problem.expect_mode(EstimationMode::Forward)?;
    multi_start(problem)
}

pub fn solve_combined(problem: &EstimationProblem<'_>) -> Result<EstimationResult> {
    problem.expect_mode(EstimationMode::Combined)?;
    multi_start(problem)
}

/// Dispatches on the problem's mode.
pub fn solve(problem: &EstimationProblem<'_>) -> Result<EstimationResult> {
    match problem.mode {
        EstimationMode::Backward => solve_backward(problem),
        EstimationMode::Forward => solve_forward(problem),
        EstimationMode::Combined => solve_combined(problem),
    }
}

/// Mixture mean and covariance at the estimated weights.
pub fn estimate_moments(
    model: &MixtureModel,
    result: &EstimationResult,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    mixture_moments(model, &result.lambda)
}
