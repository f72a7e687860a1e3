//! Monte Carlo market with three investors: single-factor market states,
//! a piecewise-constant true weight path, and RMSE of the three estimators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    clear_market, g_forward, noise_sigma_from_ci, update_wealth, EquilibriumObservation,
    InvestorHolding, MarketParams, WealthState,
};
use crate::error::{Error, Result};
use crate::estimator::{self, EstimationMode, EstimationProblem};
use crate::gmm::{em_fit_weights, GaussianComponent, MixtureModel, MixtureWeights};

/// Smallest idiosyncratic variance kept on the diagonal.
pub const IDIO_FLOOR: f64 = 1e-8;

/// `r = alpha + beta * r_M + eps` with `r_M ~ (market_mean, market_var)`,
/// `alpha_i ~ alpha_scale * N(0,1)`, `beta_i ~ beta_base - beta_scale * N(0,1)`
/// and `Var(eps_i) ~ idio_scale * U(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub market_mean: f64,
    pub market_var: f64,
    pub alpha_scale: f64,
    pub beta_base: f64,
    pub beta_scale: f64,
    pub idio_scale: f64,
}

impl FactorSpec {
    fn state(market_mean: f64, market_var: f64) -> Self {
        Self {
            market_mean,
            market_var,
            alpha_scale: 1e-5,
            beta_base: 1.2,
            beta_scale: 0.6,
            idio_scale: 0.002,
        }
    }

    pub fn bull() -> Self {
        Self::state(0.004, 0.001)
    }

    pub fn oscillating() -> Self {
        Self::state(0.0, 0.0002)
    }

    pub fn bear() -> Self {
        Self::state(-0.008, 0.002)
    }

    /// Bull, oscillating, bear.
    pub fn default_states() -> Vec<Self> {
        vec![Self::bull(), Self::oscillating(), Self::bear()]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.market_mean,
            self.market_var,
            self.alpha_scale,
            self.beta_base,
            self.beta_scale,
            self.idio_scale,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || !(self.market_var > 0.0) || self.idio_scale < 0.0 {
            return Err(Error::invalid(
                "factor spec needs finite values, market_var > 0 and idio_scale >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BuiltComponents {
    pub model: MixtureModel,
    /// Some idiosyncratic variance was raised to [`IDIO_FLOOR`].
    pub floored: bool,
}

pub fn build_components<R: Rng + ?Sized>(
    specs: &[FactorSpec],
    n: usize,
    rng: &mut R,
) -> Result<BuiltComponents> {
    if n < 2 {
        return Err(Error::invalid("factor components need at least 2 assets"));
    }
    if specs.is_empty() {
        return Err(Error::invalid("no factor specs"));
    }
    let mut floored = false;
    let mut comps = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let alpha = DVector::from_fn(n, |_, _| {
            spec.alpha_scale * rng.sample::<f64, _>(StandardNormal)
        });
        let beta = DVector::from_fn(n, |_, _| {
            spec.beta_base - spec.beta_scale * rng.sample::<f64, _>(StandardNormal)
        });
        let idio = DVector::from_fn(n, |_, _| {
            let v = spec.idio_scale * rng.random::<f64>();
            if v < IDIO_FLOOR {
                floored = true;
                IDIO_FLOOR
            } else {
                v
            }
        });
        let mu = alpha + &beta * spec.market_mean;
        let sigma = &beta * beta.transpose() * spec.market_var + DMatrix::from_diagonal(&idio);
        comps.push(GaussianComponent::new(mu, sigma)?);
    }
    Ok(BuiltComponents {
        model: MixtureModel::new(comps)?,
        floored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length_days: usize,
    pub lambda: Vec<f64>,
}

/// How market shares move between rebalance dates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareDynamics {
    /// Shares follow each investor's realized wealth.
    #[default]
    Wealth,
    /// Shares stay at their initial values.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub segments: Vec<Segment>,
    pub n_assets: usize,
    /// First rebalance day, 1-based.
    pub start_day: usize,
    pub rebalance_every_days: usize,
    pub em_window_days: usize,
    pub r_f_annual: f64,
    pub days_per_year: f64,
    /// Rebalance dates per segment boundary counted as turning points.
    pub turning_point_dates: usize,
    pub share_dynamics: ShareDynamics,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let seg = |length_days, lambda: [f64; 3]| Segment {
            length_days,
            lambda: lambda.to_vec(),
        };
        Self {
            segments: vec![
                seg(200, [0.0, 0.5, 0.5]),
                seg(80, [0.7, 0.3, 0.0]),
                seg(50, [0.0, 0.5, 0.5]),
                seg(70, [0.2, 0.8, 0.0]),
            ],
            n_assets: 10,
            start_day: 111,
            rebalance_every_days: 5,
            em_window_days: 30,
            r_f_annual: 0.035,
            days_per_year: 250.0,
            turning_point_dates: 2,
            share_dynamics: ShareDynamics::Wealth,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.segments.is_empty() || self.segments.iter().any(|s| s.length_days == 0) {
            return Err(Error::invalid(
                "scenario segments must be nonempty with positive lengths",
            ));
        }
        for s in &self.segments {
            if s.lambda.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "segment weights",
                    expected: m,
                    actual: s.lambda.len(),
                });
            }
            MixtureWeights::from_slice(&s.lambda)?;
        }
        if self.rebalance_every_days == 0 {
            return Err(Error::invalid("rebalance interval must be positive"));
        }
        if self.start_day <= self.em_window_days {
            return Err(Error::invalid(
                "start day must come after the first estimation window",
            ));
        }
        if self.em_window_days < m {
            return Err(Error::invalid(
                "estimation window shorter than the number of components",
            ));
        }
        if self.start_day > self.total_days() {
            return Err(Error::invalid("start day lies beyond the scenario"));
        }
        if !(self.r_f_annual.is_finite() && self.days_per_year > 0.0) {
            return Err(Error::invalid(
                "risk-free rate must be finite and days_per_year positive",
            ));
        }
        if self.n_assets < 2 {
            return Err(Error::invalid("scenario needs at least 2 assets"));
        }
        Ok(())
    }

    pub fn total_days(&self) -> usize {
        self.segments.iter().map(|s| s.length_days).sum()
    }

    pub fn daily_rf(&self) -> f64 {
        self.r_f_annual / self.days_per_year
    }

    /// Index of the segment containing `day` (1-based).
    pub fn segment_of(&self, day: usize) -> usize {
        let mut end = 0;
        for (i, s) in self.segments.iter().enumerate() {
            end += s.length_days;
            if day <= end {
                return i;
            }
        }
        self.segments.len() - 1
    }

    pub fn rebalance_dates(&self) -> Vec<usize> {
        (self.start_day..=self.total_days())
            .step_by(self.rebalance_every_days)
            .collect()
    }

    /// First day of each segment after the first.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut day = 1;
        for s in &self.segments[..self.segments.len() - 1] {
            day += s.length_days;
            out.push(day);
        }
        out
    }

    /// The first `turning_point_dates` rebalance dates on or after each
    /// segment boundary.
    pub fn turning_points(&self) -> Vec<usize> {
        let dates = self.rebalance_dates();
        let mut out = Vec::new();
        for b in self.boundaries() {
            out.extend(
                dates
                    .iter()
                    .copied()
                    .filter(|&d| d >= b)
                    .take(self.turning_point_dates),
            );
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Weight paths at each rebalance date, one full weight vector per date.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dates: Vec<usize>,
    pub truth: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
    pub combined: Vec<Vec<f64>>,
    pub forward: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn estimates(&self, mode: EstimationMode) -> &[Vec<f64>] {
        match mode {
            EstimationMode::Backward => &self.backward,
            EstimationMode::Combined => &self.combined,
            EstimationMode::Forward => &self.forward,
        }
    }
}

/// RMSE of the three estimators, `[B, C, F]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EtaTriple {
    pub backward: f64,
    pub combined: f64,
    pub forward: f64,
}

impl EtaTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.backward, self.combined, self.forward]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            backward: a[0],
            combined: a[1],
            forward: a[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub replication: u64,
    pub eta_turning_points: EtaTriple,
    pub eta_full: EtaTriple,
    pub turning_points: Vec<usize>,
    pub trajectory: Trajectory,
    /// Rebalance dates where some estimator did not converge.
    pub nonconverged_dates: Vec<usize>,
    /// Some investor's wealth hit the positivity floor.
    pub wealth_clamped: bool,
    pub components_floored: bool,
    pub scenario: ScenarioSpec,
    pub market0: MarketParams,
}

/// `(1/m) sum_k sqrt(mean_t (est - true)^2)` over the selected dates.
pub fn rmse(truth: &[Vec<f64>], est: &[Vec<f64>], dates: &[usize]) -> Result<f64> {
    if dates.is_empty() {
        return Err(Error::invalid("rmse needs at least one date"));
    }
    if truth.len() != est.len() {
        return Err(Error::DimensionMismatch {
            context: "trajectory length",
            expected: truth.len(),
            actual: est.len(),
        });
    }
    let m = truth.first().map_or(0, |v| v.len());
    if m == 0 {
        return Err(Error::invalid("empty weight vectors"));
    }
    let mut total = 0.0;
    for k in 0..m {
        let mut ss = 0.0;
        for &t in dates {
            let (a, b) = truth
                .get(t)
                .zip(est.get(t))
                .ok_or_else(|| Error::invalid(format!("date index {t} out of range")))?;
            if a.len() != m || b.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "weight vector",
                    expected: m,
                    actual: b.len(),
                });
            }
            ss += (b[k] - a[k]).powi(2);
        }
        total += (ss / dates.len() as f64).sqrt();
    }
    Ok(total / m as f64)
}

/// Independent random streams of one replication.
pub struct ReplicationStreams {
    pub components: ChaCha8Rng,
    pub returns: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl ReplicationStreams {
    pub fn new(seed: u64, replication: u64) -> Self {
        let stream = |purpose: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(replication * 4 + purpose);
            rng
        };
        Self {
            components: stream(0),
            returns: stream(1),
            noise: stream(2),
        }
    }
}

/// Daily returns for every scenario day, drawn from the segment's true mixture.
pub fn simulate_returns<R: Rng + ?Sized>(
    model: &MixtureModel,
    scenario: &ScenarioSpec,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let days = scenario.total_days();
    let mut out = DMatrix::zeros(days, model.n_assets());
    let mut row = 0;
    for s in &scenario.segments {
        let w = MixtureWeights::from_slice(&s.lambda)?;
        let block = crate::gmm::sample_returns_with(model, &w, s.length_days, rng)?;
        out.rows_mut(row, s.length_days).copy_from(&block);
        row += s.length_days;
    }
    Ok(out)
}

/// Runs one replication on pre-drawn returns. `noise_draws` holds one
/// standard-normal vector per rebalance date; the noise holding is
/// `sigma_noise * z`.
pub fn run_scenario_on(
    model: &MixtureModel,
    scenario: &ScenarioSpec,
    market0: &MarketParams,
    returns: &DMatrix<f64>,
    noise_draws: &[DVector<f64>],
) -> Result<ScenarioRun> {
    let m = model.n_components();
    scenario.validate(m)?;
    market0.validate()?;
    let n = model.n_assets();
    if market0.n_assets() != n || scenario.n_assets != n {
        return Err(Error::DimensionMismatch {
            context: "scenario assets",
            expected: n,
            actual: market0.n_assets(),
        });
    }
    let days = scenario.total_days();
    if returns.nrows() != days || returns.ncols() != n {
        return Err(Error::invalid("return matrix does not match the scenario"));
    }
    let dates = scenario.rebalance_dates();
    if noise_draws.len() < dates.len() {
        return Err(Error::invalid(
            "not enough noise draws for the rebalance dates",
        ));
    }

    let rf = scenario.daily_rf();
    let mut wealth = WealthState::from_shares(market0);
    let mut traj = Trajectory::default();
    let mut nonconverged = Vec::new();
    let mut clamped = false;

    for (i, &day) in dates.iter().enumerate() {
        let (a_i, a_u, a_n) = wealth.shares();
        let params = MarketParams {
            alpha_i: a_i,
            alpha_u: a_u,
            alpha_n: a_n,
            ..market0.clone()
        };
        // returns of days day-window .. day-1 (1-based) are known at `day`
        let window = returns
            .rows(day - 1 - scenario.em_window_days, scenario.em_window_days)
            .into_owned();
        let fit = em_fit_weights(model, &window)?;
        let truth =
            MixtureWeights::from_slice(&scenario.segments[scenario.segment_of(day)].lambda)?;

        let x_u = InvestorHolding(g_forward(model, &fit.weights, params.delta_u)?);
        let x_i = InvestorHolding(g_forward(model, &truth, params.delta_i)?);
        let z = &noise_draws[i];
        let x_n = InvestorHolding(DVector::from_iterator(
            n,
            z.iter().zip(params.sigma_noise.iter()).map(|(z, s)| z * s),
        ));
        let obs: EquilibriumObservation = clear_market(&x_u, &x_i, &x_n, &params)?;

        let problem = EstimationProblem::new(model, &fit.prior, &obs, EstimationMode::Backward)?;
        let mut row = |mode: EstimationMode| -> Result<Vec<f64>> {
            let r = estimator::solve(&problem.with_mode(mode))?;
            if !r.converged && nonconverged.last() != Some(&day) {
                nonconverged.push(day);
            }
            Ok(r.lambda.as_slice().to_vec())
        };
        let b = row(EstimationMode::Backward)?;
        let c = row(EstimationMode::Combined)?;
        let f = row(EstimationMode::Forward)?;
        traj.dates.push(day);
        traj.truth.push(truth.as_slice().to_vec());
        traj.backward.push(b);
        traj.combined.push(c);
        traj.forward.push(f);

        if scenario.share_dynamics == ShareDynamics::Fixed {
            continue;
        }
        let next = dates.get(i + 1).copied().unwrap_or(days + 1);
        for d in day..next.min(days + 1) {
            let r = returns.row(d - 1).transpose();
            let upd = update_wealth(&wealth, &x_i, &x_u, &x_n, &r, rf)?;
            clamped |= upd.clamped;
            wealth = upd.state;
        }
    }

    let tp_dates = scenario.turning_points();
    let tp_idx: Vec<usize> = traj
        .dates
        .iter()
        .enumerate()
        .filter(|(_, d)| tp_dates.contains(d))
        .map(|(i, _)| i)
        .collect();
    let all_idx: Vec<usize> = (0..traj.dates.len()).collect();
    let eta = |idx: &[usize]| -> Result<EtaTriple> {
        let mut out = [0.0; 3];
        for (slot, mode) in [
            EstimationMode::Backward,
            EstimationMode::Combined,
            EstimationMode::Forward,
        ]
        .into_iter()
        .enumerate()
        {
            out[slot] = rmse(&traj.truth, traj.estimates(mode), idx)?;
        }
        Ok(EtaTriple::from_array(out))
    };
    let eta_turning_points = if tp_idx.is_empty() {
        EtaTriple::default()
    } else {
        eta(&tp_idx)?
    };
    let eta_full = eta(&all_idx)?;
    Ok(ScenarioRun {
        eta_turning_points,
        eta_full,
        turning_points: tp_dates,
        trajectory: traj,
        nonconverged_dates: nonconverged,
        wealth_clamped: clamped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub eta_turning_points: EtaTriple,
    pub eta_full: EtaTriple,
    pub turning_points: Vec<usize>,
    pub trajectory: Trajectory,
    pub nonconverged_dates: Vec<usize>,
    pub wealth_clamped: bool,
}

/// Full replication: components, returns and noise all drawn from the
/// streams of `(seed, replication)`.
pub fn run_scenario(
    states: &[FactorSpec],
    scenario: &ScenarioSpec,
    market0: &MarketParams,
    seed: u64,
    replication: u64,
) -> Result<ExperimentReport> {
    scenario.validate(states.len())?;
    let mut streams = ReplicationStreams::new(seed, replication);
    let built = build_components(states, scenario.n_assets, &mut streams.components)?;
    let returns = simulate_returns(&built.model, scenario, &mut streams.returns)?;
    let noise: Vec<DVector<f64>> = (0..scenario.rebalance_dates().len())
        .map(|_| {
            DVector::from_fn(scenario.n_assets, |_, _| {
                streams.noise.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();
    let run = run_scenario_on(&built.model, scenario, market0, &returns, &noise)?;
    Ok(ExperimentReport {
        seed,
        replication,
        eta_turning_points: run.eta_turning_points,
        eta_full: run.eta_full,
        turning_points: run.turning_points,
        trajectory: run.trajectory,
        nonconverged_dates: run.nonconverged_dates,
        wealth_clamped: run.wealth_clamped,
        components_floored: built.floored,
        scenario: scenario.clone(),
        market0: market0.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Initial market shares `(alpha_i, alpha_u, alpha_n)`.
    MarketShares,
    /// Noise variance `sigma^2`, the same on every asset.
    NoiseIntensity,
    /// Informed risk aversion.
    RiskAversion,
}

impl Experiment {
    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Self::MarketShares),
            2 => Ok(Self::NoiseIntensity),
            3 => Ok(Self::RiskAversion),
            _ => Err(Error::invalid(format!(
                "unknown experiment {k}, expected 1, 2 or 3"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridPoint {
    Shares([f64; 3]),
    Value(f64),
}

impl GridPoint {
    /// Number shown in the first column of the experiment table.
    pub fn grid_value(&self) -> f64 {
        match self {
            Self::Shares(a) => a[0],
            Self::Value(v) => *v,
        }
    }
}

pub fn default_grid(which: Experiment) -> Vec<GridPoint> {
    match which {
        Experiment::MarketShares => {
            let mut g = vec![GridPoint::Shares([0.001, 0.009, 0.990])];
            for k in 1..=8 {
                let a = k as f64 / 10.0;
                g.push(GridPoint::Shares([a, 0.9 - a, 0.1]));
            }
            g.push(GridPoint::Shares([0.990, 0.009, 0.001]));
            g
        }
        Experiment::NoiseIntensity => [2.603e3, 2.603e1, 2.603e-1, 2.603e-3, 2.603e-5]
            .into_iter()
            .map(GridPoint::Value)
            .collect(),
        Experiment::RiskAversion => [2.250e3, 7.5e1, 2.5, 8.333e-2, 2.777e-3]
            .into_iter()
            .map(GridPoint::Value)
            .collect(),
    }
}

/// Base market of the experiments: shares `(0.4, 0.5, 0.1)`, risk aversion
/// 2.5 for both rational investors and a 95% noise interval of `[-1, 1]`.
pub fn base_market(n: usize) -> Result<MarketParams> {
    let sigma = noise_sigma_from_ci(1.0, 0.95)?;
    MarketParams::uniform_noise(0.4, 0.5, 0.1, sigma, n, 2.5, 2.5)
}

/// Applies one grid point of `which` to the base market.
pub fn market_for(
    which: Experiment,
    point: GridPoint,
    base: &MarketParams,
) -> Result<MarketParams> {
    match (which, point) {
        (Experiment::MarketShares, GridPoint::Shares([ai, au, an])) => base.with_shares(ai, au, an),
        (Experiment::NoiseIntensity, GridPoint::Value(var)) => {
            if !(var > 0.0) {
                return Err(Error::invalid("noise variance must be positive"));
            }
            let mut p = base.clone();
            p.sigma_noise = vec![var.sqrt(); base.n_assets()];
            p.validate()?;
            Ok(p)
        }
        (Experiment::RiskAversion, GridPoint::Value(delta)) => {
            let mut p = base.clone();
            p.delta_i = delta;
            p.validate()?;
            Ok(p)
        }
        _ => Err(Error::invalid("grid point does not fit the experiment")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub grid_value: f64,
    pub point: GridPoint,
    pub eta_turning_points: EtaTriple,
    pub eta_full: EtaTriple,
    pub se_turning_points: EtaTriple,
    pub se_full: EtaTriple,
    pub replications: usize,
    pub failed_replications: usize,
    pub nonconverged_dates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub experiment: Experiment,
    pub seed: u64,
    pub rows: Vec<GridRow>,
    /// First replication of every grid row.
    pub reports: Vec<ExperimentReport>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Runs every grid point over `replications` seeds. Replication `r` uses the
/// same component, return and noise streams in every row.
pub fn run_experiment_grid(
    which: Experiment,
    grid: &[GridPoint],
    replications: usize,
    seed: u64,
    states: &[FactorSpec],
    scenario: &ScenarioSpec,
) -> Result<ExperimentTable> {
    if grid.is_empty() {
        return Err(Error::invalid("experiment grid is empty"));
    }
    if replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    scenario.validate(states.len())?;
    let base = base_market(scenario.n_assets)?;
    let markets: Vec<MarketParams> = grid
        .iter()
        .map(|p| market_for(which, *p, &base))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| (0..replications as u64).map(move |r| (g, r)))
        .collect();
    let results: Vec<Result<ExperimentReport>> = jobs
        .par_iter()
        .map(|&(g, r)| run_scenario(states, scenario, &markets[g], seed, r))
        .collect();

    let mut rows = Vec::with_capacity(grid.len());
    let mut reports = Vec::new();
    for (g, point) in grid.iter().enumerate() {
        let mut ok = Vec::new();
        let mut failed = 0;
        for (job, res) in jobs.iter().zip(results.iter()) {
            if job.0 != g {
                continue;
            }
            match res {
                Ok(rep) => ok.push(rep),
                Err(e) => {
                    log::warn!("grid point {g}, replication {}: {e}", job.1);
                    failed += 1;
                }
            }
        }
        if ok.is_empty() {
            return Err(Error::invalid(format!(
                "every replication failed at grid point {g}"
            )));
        }
        if let Some(first) = ok.first() {
            reports.push((*first).clone());
        }
        let stat = |f: &dyn Fn(&ExperimentReport) -> [f64; 3]| {
            let mut means = [0.0; 3];
            let mut ses = [0.0; 3];
            for j in 0..3 {
                let vals: Vec<f64> = ok.iter().map(|r| f(r)[j]).collect();
                (means[j], ses[j]) = mean_se(&vals);
            }
            (EtaTriple::from_array(means), EtaTriple::from_array(ses))
        };
        let (tp, se_tp) = stat(&|r| r.eta_turning_points.as_array());
        let (full, se_full) = stat(&|r| r.eta_full.as_array());
        rows.push(GridRow {
            grid_value: point.grid_value(),
            point: *point,
            eta_turning_points: tp,
            eta_full: full,
            se_turning_points: se_tp,
            se_full,
            replications: ok.len(),
            failed_replications: failed,
            nonconverged_dates: ok.iter().map(|r| r.nonconverged_dates.len()).sum(),
        });
    }
    Ok(ExperimentTable {
        experiment: which,
        seed,
        rows,
        reports,
    })
}
