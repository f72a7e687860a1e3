//! Random instances shared by the integration tests.
#![allow(dead_code)]

use mixcast::equilibrium::{g_forward, EquilibriumObservation, MarketParams};
use mixcast::estimator::{
    self, objective_value, EstimationMode, EstimationProblem, EstimationResult,
};
use mixcast::gmm::{mixture_moments, GaussianComponent, MixtureModel, MixtureWeights, PriorSpec};
use mixcast::simplex;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub model: MixtureModel,
    pub prior: PriorSpec,
    pub obs: EquilibriumObservation,
    pub truth: DVector<f64>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_model(rng: &mut ChaCha8Rng, m: usize, n: usize) -> MixtureModel {
    let comps = (0..m)
        .map(|_| {
            let mu = DVector::from_fn(n, |_, _| 0.05 * normal(rng));
            let b = DMatrix::from_fn(n, n, |_, _| 0.1 * normal(rng));
            let sigma = &b * b.transpose() + DMatrix::identity(n, n) * 0.005;
            GaussianComponent::new(mu, sigma).unwrap()
        })
        .collect();
    MixtureModel::new(comps).unwrap()
}

/// Uniform draw from the interior of the reduced simplex.
pub fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    let raw: Vec<f64> = (0..=dim).map(|_| -rng.random::<f64>().ln()).collect();
    let s: f64 = raw.iter().sum();
    DVector::from_iterator(dim, raw[..dim].iter().map(|v| v / s))
}

pub fn random_phi(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(dim, dim, |_, _| 0.1 * normal(rng));
    &b * b.transpose() + DMatrix::identity(dim, dim) * 0.01
}

pub fn base_params(n: usize, sigma: f64) -> MarketParams {
    MarketParams::uniform_noise(0.4, 0.5, 0.1, sigma, n, 2.5, 2.5).unwrap()
}

/// Observation drawn from the equilibrium at a random true weight, with the
/// mixture covariance as the forward map's covariance.
pub fn instance(seed: u64, m: usize, n: usize, params: MarketParams) -> Instance {
    let mut rng = rng(seed);
    let model = random_model(&mut rng, m, n);
    let lambda_hat = random_point(&mut rng, m - 1);
    let prior = PriorSpec::new(lambda_hat.clone(), random_phi(&mut rng, m - 1)).unwrap();
    let truth = random_point(&mut rng, m - 1);
    let w_hat = MixtureWeights::from_reduced(&lambda_hat).unwrap();
    let w_true = MixtureWeights::from_reduced(&truth).unwrap();
    let x_u = g_forward(&model, &w_hat, params.delta_u).unwrap();
    let x_i = g_forward(&model, &w_true, params.delta_i).unwrap();
    let x_n = DVector::from_fn(n, |i, _| params.sigma_noise[i] * normal(&mut rng));
    let x_m = params.alpha_u * &x_u + params.alpha_i * &x_i + params.alpha_n * &x_n;
    let obs = EquilibriumObservation::new(x_m, x_u, params).unwrap();
    Instance {
        model,
        prior,
        obs,
        truth,
    }
}

/// Like [`instance`] but both rational investors use `shared` (the mixture
/// covariance at the prior mean), so the market portfolio is affine in the
/// weights.
pub fn shared_instance(seed: u64, m: usize, n: usize) -> (Instance, DMatrix<f64>) {
    let mut rng = rng(seed);
    let model = random_model(&mut rng, m, n);
    let lambda_hat = random_point(&mut rng, m - 1);
    let prior = PriorSpec::new(lambda_hat.clone(), random_phi(&mut rng, m - 1)).unwrap();
    let truth = random_point(&mut rng, m - 1);
    let params = base_params(n, 0.5);
    let (mu_hat, shared) =
        mixture_moments(&model, &MixtureWeights::from_reduced(&lambda_hat).unwrap()).unwrap();
    let chol = shared.clone().cholesky().unwrap();
    let x_u = chol.solve(&mu_hat) / params.delta_u;
    let (mu_true, _) =
        mixture_moments(&model, &MixtureWeights::from_reduced(&truth).unwrap()).unwrap();
    let x_i = chol.solve(&mu_true) / params.delta_i;
    let x_n = DVector::from_fn(n, |i, _| params.sigma_noise[i] * normal(&mut rng));
    let x_m = params.alpha_u * &x_u + params.alpha_i * &x_i + params.alpha_n * &x_n;
    let obs = EquilibriumObservation::new(x_m, x_u, params).unwrap();
    (
        Instance {
            model,
            prior,
            obs,
            truth,
        },
        shared,
    )
}

pub fn solve(inst: &Instance, mode: EstimationMode) -> EstimationResult {
    let p = EstimationProblem::new(&inst.model, &inst.prior, &inst.obs, mode).unwrap();
    estimator::solve(&p).unwrap()
}

/// Best objective over the step-`step` grid of the two-dimensional feasible set.
pub fn grid_best(problem: &EstimationProblem<'_>, step: f64) -> f64 {
    simplex::grid_2d(step)
        .map(|x| objective_value(problem, &x))
        .fold(f64::INFINITY, f64::min)
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Non-increasing up to `slack`.
pub fn non_increasing(v: &[f64], slack: f64) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + slack)
}

pub fn non_decreasing(v: &[f64], slack: f64) -> bool {
    v.windows(2).all(|w| w[1] + slack >= w[0])
}

/// Re-solves the market at new parameters with the same true weights,
/// less-informed holding and standardized noise draw `z`.
pub fn at_params(base: &Instance, z: &DVector<f64>, p: MarketParams) -> Instance {
    let w_true = MixtureWeights::from_reduced(&base.truth).unwrap();
    let x_i = g_forward(&base.model, &w_true, p.delta_i).unwrap();
    let noise = DVector::from_fn(z.len(), |i, _| p.sigma_noise[i] * z[i]);
    let x_m = p.alpha_u * &base.obs.x_u_star + p.alpha_i * x_i + p.alpha_n * noise;
    let obs = EquilibriumObservation::new(x_m, base.obs.x_u_star.clone(), p).unwrap();
    Instance {
        model: base.model.clone(),
        prior: base.prior.clone(),
        obs,
        truth: base.truth.clone(),
    }
}

/// `(|C - B|_inf, |C - F|_inf)` at one market.
pub fn deviations(inst: &Instance) -> (f64, f64) {
    let b = solve(inst, EstimationMode::Backward).reduced();
    let f = solve(inst, EstimationMode::Forward).reduced();
    let c = solve(inst, EstimationMode::Combined).reduced();
    (max_abs_diff(&c, &b), max_abs_diff(&c, &f))
}

/// Which limit a ladder approaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limit {
    Backward,
    Forward,
}

/// One half-ladder: markets ordered from the base point toward a limit.
pub struct LadderOutcome {
    pub name: &'static str,
    pub limit: Limit,
    pub deviations: Vec<f64>,
}

impl LadderOutcome {
    pub fn endpoint(&self) -> f64 {
        *self.deviations.last().unwrap()
    }

    pub fn monotone(&self) -> bool {
        non_increasing(&self.deviations, 1e-9)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.monotone() && self.endpoint() < tol
    }
}

fn run_ladder(
    name: &'static str,
    limit: Limit,
    base: &Instance,
    z: &DVector<f64>,
    markets: Vec<MarketParams>,
) -> LadderOutcome {
    let deviations = markets
        .into_iter()
        .map(|p| {
            let (b, f) = deviations(&at_params(base, z, p));
            match limit {
                Limit::Backward => b,
                Limit::Forward => f,
            }
        })
        .collect();
    LadderOutcome {
        name,
        limit,
        deviations,
    }
}

/// The six half-ladders of the limiting results on one random m = 3 market:
/// informed share up, noise share up, noise intensity down and up, informed
/// risk aversion down and up.
///
/// `noise` scales the noise trader's standardized draw. With `noise = 0` each
/// market is the exact equilibrium at the true weights, so only the
/// parameter under study changes along a ladder and the forward limit is the
/// truth. With a noise draw the deviation can first grow: while the market
/// term still dominates, a larger noise share or risk aversion magnifies the
/// draw's pull before the prior takes over.
pub fn ladders(seed: u64, noise: f64) -> Vec<LadderOutcome> {
    let base = instance(seed, 3, 4, base_params(4, 0.51));
    let mut r = rng(seed ^ 0x5eed);
    let z = DVector::from_fn(4, |_, _| noise * normal(&mut r));
    let p0 = base.obs.params.clone();

    let a_n = 0.0005;
    let informed = [0.9, 0.99, 0.999]
        .iter()
        .map(|&a_i| p0.with_shares(a_i, 1.0 - a_i - a_n, a_n).unwrap())
        .collect();
    let noisy = [0.1, 0.5, 0.9, 0.99, 0.999, 0.9999]
        .iter()
        .map(|&a_n: &f64| {
            let rest = 1.0 - a_n;
            p0.with_shares(rest * 4.0 / 9.0, rest - rest * 4.0 / 9.0, a_n)
                .unwrap()
        })
        .collect();
    let scale_sigma = |k: f64| {
        let mut p = p0.clone();
        p.sigma_noise.iter_mut().for_each(|s| *s *= k);
        p
    };
    let scale_delta = |k: f64| {
        let mut p = p0.clone();
        p.delta_i *= k;
        p
    };
    let root = 10f64.powf(1.5);
    vec![
        run_ladder(
            "informed share to 0.999",
            Limit::Forward,
            &base,
            &z,
            informed,
        ),
        run_ladder("noise share to 0.9999", Limit::Backward, &base, &z, noisy),
        run_ladder(
            "noise intensity x1e-6",
            Limit::Forward,
            &base,
            &z,
            [1.0, 1e-3, 1e-6].map(scale_sigma).to_vec(),
        ),
        run_ladder(
            "noise intensity x1e6",
            Limit::Backward,
            &base,
            &z,
            [1.0, 1e3, 1e6].map(scale_sigma).to_vec(),
        ),
        run_ladder(
            "informed risk aversion x1e-3",
            Limit::Forward,
            &base,
            &z,
            [1.0, 1.0 / root, 1e-3].map(scale_delta).to_vec(),
        ),
        run_ladder(
            "informed risk aversion x1e3",
            Limit::Backward,
            &base,
            &z,
            [1.0, root, 1e3].map(scale_delta).to_vec(),
        ),
    ]
}
