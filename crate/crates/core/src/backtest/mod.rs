//! Rolling out-of-sample backtest of long-only mean-variance portfolios
//! built from the backward, combined and forward estimates.

mod data;
mod metrics;
mod regimes;

use chrono::NaiveDate;
use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{synthetic_dataset, DatasetFiles, MarketDataset};
pub use metrics::{
    max_drawdown, perf_metrics, roll_wealth, sharpe_ratio, trading_days, turnover, Metrics, Period,
    WealthRun,
};
pub use regimes::{
    calibrate_state_components, label_regimes, MarketState, RegimeRules, StateCalibration,
};

use crate::equilibrium::{mv_unconstrained, EquilibriumObservation, MarketParams};
use crate::error::{Error, Result};
use crate::estimator::{self, EstimationMode, EstimationProblem};
use crate::gmm::{em_fit_weights, mixture_moments, GaussianComponent, MixtureModel};
use crate::linalg::{check_len, check_pd, symmetrize};
use crate::qp::QpProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    /// Rolling window for the covariance, the EM prior and the risk-aversion
    /// normalization.
    pub window_weeks: usize,
    pub rebalance_weeks: Vec<usize>,
    pub delta0: f64,
    pub risk_multipliers: Vec<f64>,
    pub cost_ratio: f64,
    pub alpha_i: f64,
    pub alpha_u: f64,
    pub alpha_n: f64,
    /// Per-asset standard deviation of the noise trader's position.
    pub noise_sigma: f64,
    pub delta_u: f64,
    /// Weeks at the start of the data used to calibrate the regime
    /// components. The investment period starts after them (and never
    /// before the first full window). `None` takes the first half.
    pub calibration_weeks: Option<usize>,
    pub regimes: RegimeRules,
    /// Only `false` is supported.
    pub allow_short: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window_weeks: 100,
            rebalance_weeks: vec![4, 13, 26],
            delta0: 2.5,
            risk_multipliers: vec![0.3, 1.0, 3.0],
            cost_ratio: 0.005,
            alpha_i: 0.4,
            alpha_u: 0.5,
            alpha_n: 0.1,
            // 95% of noise positions within +-1
            noise_sigma: 0.510_204_081_632_653,
            delta_u: 2.5,
            calibration_weeks: None,
            regimes: RegimeRules::default(),
            allow_short: false,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.allow_short {
            return Err(Error::invalid("short selling is not supported"));
        }
        if self.window_weeks < 2 {
            return Err(Error::invalid("window_weeks must be at least 2"));
        }
        if self.rebalance_weeks.is_empty() || self.rebalance_weeks.contains(&0) {
            return Err(Error::invalid(
                "rebalance_weeks must be a nonempty list of positive values",
            ));
        }
        if self.risk_multipliers.is_empty() || self.risk_multipliers.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::invalid(
                "risk_multipliers must be a nonempty list of positive values",
            ));
        }
        if !(self.delta0 > 0.0) || !(self.delta_u > 0.0) {
            return Err(Error::invalid(
                "risk aversion coefficients must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.cost_ratio) {
            return Err(Error::invalid("cost_ratio must lie in [0, 1)"));
        }
        self.regimes.validate()?;
        self.market_params(1, self.delta0)?;
        Ok(())
    }

    fn market_params(&self, n: usize, delta_i: f64) -> Result<MarketParams> {
        MarketParams::uniform_noise(
            self.alpha_i,
            self.alpha_u,
            self.alpha_n,
            self.noise_sigma,
            n,
            delta_i,
            self.delta_u,
        )
    }

    fn calibration_end(&self, t: usize) -> usize {
        self.calibration_weeks.unwrap_or(t.div_ceil(2))
    }
}

/// `delta0 * v_t / mean(v_{t-window+1..=t})` for every `t >= window - 1`
/// (0-based); entry `j` belongs to row `window - 1 + j`.
pub fn risk_aversion_path(
    vol_index: &DVector<f64>,
    delta0: f64,
    window: usize,
) -> Result<DVector<f64>> {
    if vol_index.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("volatility index must be positive"));
    }
    if !(delta0 > 0.0) {
        return Err(Error::invalid("delta0 must be positive"));
    }
    if window == 0 || window > vol_index.len() {
        return Err(Error::InsufficientData(format!(
            "risk-aversion window of {window} weeks needs at least that many observations, got {}",
            vol_index.len()
        )));
    }
    let t = vol_index.len();
    let mut out = DVector::zeros(t - window + 1);
    let mut sum: f64 = vol_index.rows(0, window).sum();
    for j in 0..out.len() {
        if j > 0 {
            sum += vol_index[window - 1 + j] - vol_index[j - 1];
        }
        out[j] = delta0 * vol_index[window - 1 + j] / (sum / window as f64);
    }
    Ok(out)
}

/// Market-implied component `N(delta * cov_hat * x_m, cov_hat)`.
pub fn build_bl_component(
    cov_hat: &DMatrix<f64>,
    x_m: &DVector<f64>,
    delta: f64,
) -> Result<GaussianComponent> {
    check_len("market portfolio", cov_hat.nrows(), x_m.len())?;
    if !(delta > 0.0) {
        return Err(Error::invalid("risk aversion must be positive"));
    }
    check_pd(cov_hat, 0.0, "estimated covariance")?;
    GaussianComponent::new(cov_hat * x_m * delta, cov_hat.clone())
}

/// `argmax x'mu - delta/2 x'Sigma x` over the unit simplex.
pub fn mv_long_only(mu: &DVector<f64>, sigma: &DMatrix<f64>, delta: f64) -> Result<DVector<f64>> {
    let n = mu.len();
    check_len("mean-variance covariance", n, sigma.nrows())?;
    if n == 0 {
        return Err(Error::invalid("no assets"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("risk aversion must be positive"));
    }
    check_pd(sigma, 0.0, "portfolio covariance")?;
    let qp = QpProblem {
        h: sigma * delta,
        c: -mu,
        a_eq: DMatrix::from_element(1, n, 1.0),
        b_eq: DVector::from_element(1, 1.0),
        a_in: -DMatrix::identity(n, n),
        b_in: DVector::zeros(n),
    };
    let sol = qp.solve(&DVector::from_element(n, 1.0 / n as f64))?;
    let residual = &qp.h * &sol.x
        + &qp.c
        + qp.a_eq.transpose() * &sol.eq_multipliers
        + qp.a_in.transpose() * &sol.in_multipliers;
    if residual.amax() > 1e-8 {
        return Err(Error::invalid(format!(
            "portfolio QP stopped with KKT residual {:.3e}",
            residual.amax()
        )));
    }
    let mut x = sol.x.map(|v| v.max(0.0));
    x /= x.sum();
    Ok(x)
}

/// Sample covariance of the rows `a..b`.
fn window_covariance(returns: &DMatrix<f64>, a: usize, b: usize) -> DMatrix<f64> {
    let rows = returns.rows(a, b - a);
    let k = (b - a) as f64;
    let mean = rows.row_mean();
    let mut cov = DMatrix::zeros(returns.ncols(), returns.ncols());
    for r in rows.row_iter() {
        let d = (r - &mean).transpose();
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= k - 1.0;
    symmetrize(&mut cov);
    cov
}

/// The three estimates at one rebalance date.
#[derive(Debug)]
struct DateEstimate {
    delta_i: f64,
    /// Backward, combined, forward order of `EstimationMode::ALL`.
    moments: Vec<Result<(DVector<f64>, DMatrix<f64>)>>,
}

fn estimate_at(
    ds: &MarketDataset,
    cfg: &BacktestConfig,
    states: &[GaussianComponent],
    deltas: &DVector<f64>,
    s: usize,
) -> Result<DateEstimate> {
    let w = cfg.window_weeks;
    let n = ds.n_assets();
    let delta_i = deltas[s - w];
    let cov_hat = window_covariance(&ds.excess_returns, s - w, s);
    let x_m = ds.market_weights(s - 1);
    let mut comps = states.to_vec();
    comps.push(build_bl_component(&cov_hat, &x_m, delta_i)?);
    let model = MixtureModel::new(comps)?;
    let window = ds.excess_returns.rows(s - w, w).into_owned();
    let em = em_fit_weights(&model, &window)?;
    let (mu_u, sigma_u) = mixture_moments(&model, &em.weights)?;
    let x_u = mv_unconstrained(&mu_u, &sigma_u, cfg.delta_u)?;
    let obs = EquilibriumObservation::new(x_m, x_u.0, cfg.market_params(n, delta_i)?)?;
    let problem = EstimationProblem::new(&model, &em.prior, &obs, EstimationMode::Backward)?;
    let moments = EstimationMode::ALL
        .iter()
        .map(|&mode| {
            let res = estimator::solve(&problem.with_mode(mode))?;
            if !res.converged {
                debug!(
                    "{} estimate at row {s} hit the iteration cap",
                    mode.as_str()
                );
            }
            estimator::estimate_moments(&model, &res)
        })
        .collect();
    Ok(DateEstimate { delta_i, moments })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRow {
    pub strategy: EstimationMode,
    pub rebalance_weeks: usize,
    pub risk_multiplier: f64,
    pub sr: Option<f64>,
    pub trn: f64,
    pub mdd: f64,
    pub periods: usize,
}

/// Metrics of one strategy averaged over the rebalance windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfAverage {
    pub strategy: EstimationMode,
    pub risk_multiplier: f64,
    /// Mean over the windows where the Sharpe ratio is defined.
    pub sr: Option<f64>,
    pub trn: f64,
    pub mdd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthPath {
    pub strategy: EstimationMode,
    pub rebalance_weeks: usize,
    pub risk_multiplier: f64,
    /// Rebalance dates, then the last date of the final period.
    pub dates: Vec<NaiveDate>,
    pub wealth: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestFlag {
    pub rebalance_weeks: usize,
    pub date: NaiveDate,
    pub strategy: Option<EstimationMode>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub rows: Vec<PerfRow>,
    pub averages: Vec<PerfAverage>,
    pub wealth_paths: Vec<WealthPath>,
    pub flags: Vec<BacktestFlag>,
    pub calibration_weeks: usize,
    pub regime_counts: [usize; 3],
    pub regimes_shrunk: bool,
}

struct WindowRun {
    rows: Vec<PerfRow>,
    paths: Vec<WealthPath>,
    flags: Vec<BacktestFlag>,
}

fn run_window(
    ds: &MarketDataset,
    cfg: &BacktestConfig,
    states: &[GaussianComponent],
    deltas: &DVector<f64>,
    start: usize,
    k: usize,
) -> Result<WindowRun> {
    let t_len = ds.len();
    let n = ds.n_assets();
    let dates: Vec<usize> = (start..)
        .step_by(k)
        .take_while(|s| s + k <= t_len)
        .collect();
    if dates.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "a {k}-week rebalance needs at least two full periods after week {start}"
        )));
    }
    let mut flags = Vec::new();
    let n_strat = EstimationMode::ALL.len() * cfg.risk_multipliers.len();
    let mut weights: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(dates.len()); n_strat];
    for &s in &dates {
        let est = estimate_at(ds, cfg, states, deltas, s);
        for (mi, mode) in EstimationMode::ALL.iter().enumerate() {
            for (ri, mult) in cfg.risk_multipliers.iter().enumerate() {
                let idx = mi * cfg.risk_multipliers.len() + ri;
                let target = match &est {
                    Err(e) => Err(e.to_string()),
                    Ok(est) => match &est.moments[mi] {
                        Err(e) => Err(e.to_string()),
                        Ok((mu, sigma)) => {
                            mv_long_only(mu, sigma, mult * est.delta_i).map_err(|e| e.to_string())
                        }
                    },
                };
                let x = match target {
                    Ok(x) => x,
                    Err(msg) => {
                        let carried = weights[idx]
                            .last()
                            .cloned()
                            .unwrap_or_else(|| DVector::from_element(n, 1.0 / n as f64));
                        warn!(
                            "{} at {}: {msg}; keeping previous weights",
                            mode.as_str(),
                            ds.dates[s]
                        );
                        flags.push(BacktestFlag {
                            rebalance_weeks: k,
                            date: ds.dates[s],
                            strategy: Some(*mode),
                            message: format!("{msg}; previous weights kept"),
                        });
                        carried
                    }
                };
                weights[idx].push(x);
            }
        }
    }

    let periods_gross: Vec<(DVector<f64>, f64)> = dates
        .iter()
        .map(|&s| {
            let mut g = DVector::from_element(n, 1.0);
            let mut rf = 1.0;
            for t in s..s + k {
                let r = ds.weekly_rf(t);
                for i in 0..n {
                    g[i] *= 1.0 + ds.excess_returns[(t, i)] + r;
                }
                rf *= 1.0 + r;
            }
            (g, rf)
        })
        .collect();
    let mut path_dates: Vec<NaiveDate> = dates.iter().map(|&s| ds.dates[s]).collect();
    path_dates.push(ds.dates[dates[dates.len() - 1] + k - 1]);
    let scale = 250.0 / trading_days(k);

    let mut rows = Vec::with_capacity(n_strat);
    let mut paths = Vec::with_capacity(n_strat);
    for (mi, mode) in EstimationMode::ALL.iter().enumerate() {
        for (ri, mult) in cfg.risk_multipliers.iter().enumerate() {
            let idx = mi * cfg.risk_multipliers.len() + ri;
            let periods: Vec<Period> = weights[idx]
                .iter()
                .zip(&periods_gross)
                .map(|(x, (g, rf))| Period {
                    weights: x.clone(),
                    asset_gross: g.clone(),
                    rf_gross: *rf,
                })
                .collect();
            let run = roll_wealth(&periods, cfg.cost_ratio)?;
            let excess = run.excess_returns(&periods);
            let m = perf_metrics(&excess, &periods, &run.wealth, scale)?;
            if m.sr.is_none() {
                flags.push(BacktestFlag {
                    rebalance_weeks: k,
                    date: path_dates[0],
                    strategy: Some(*mode),
                    message: format!(
                        "Sharpe ratio undefined at risk multiplier {mult}: zero return variance"
                    ),
                });
            }
            rows.push(PerfRow {
                strategy: *mode,
                rebalance_weeks: k,
                risk_multiplier: *mult,
                sr: m.sr,
                trn: m.trn,
                mdd: m.mdd,
                periods: periods.len(),
            });
            paths.push(WealthPath {
                strategy: *mode,
                rebalance_weeks: k,
                risk_multiplier: *mult,
                dates: path_dates.clone(),
                wealth: run.wealth,
                weights: weights[idx]
                    .iter()
                    .map(|x| x.iter().copied().collect())
                    .collect(),
            });
        }
    }
    Ok(WindowRun { rows, paths, flags })
}

/// Runs every (strategy, rebalance window, risk multiplier) combination.
///
/// The regime components are calibrated once on the calibration weeks.
/// At each rebalance row `s` the trailing `window_weeks` rows give the
/// covariance, the EM prior and the risk aversion; caps at row `s - 1`
/// give the market portfolio. Weights are held for the period and rolled
/// with the cost drag.
pub fn run_backtest(ds: &MarketDataset, cfg: &BacktestConfig) -> Result<PerfReport> {
    ds.validate()?;
    cfg.validate()?;
    let t_len = ds.len();
    let n = ds.n_assets();
    if cfg.window_weeks >= t_len {
        return Err(Error::InsufficientData(format!(
            "window of {} weeks needs a longer history than {t_len} weeks",
            cfg.window_weeks
        )));
    }
    if cfg.window_weeks <= n {
        return Err(Error::invalid(format!(
            "window of {} weeks cannot estimate a covariance of {n} assets",
            cfg.window_weeks
        )));
    }
    let cal = cfg.calibration_end(t_len);
    if cal < 2 || cal >= t_len {
        return Err(Error::invalid(format!(
            "calibration_weeks must lie in [2, {t_len}), got {cal}"
        )));
    }
    let levels = ds.market_index();
    let states = calibrate_state_components(
        &levels[..=cal],
        &ds.excess_returns.rows(0, cal).into_owned(),
        &cfg.regimes,
    )?;
    if states.shrunk {
        warn!("a regime covariance was shrunk toward its diagonal");
    }
    let deltas = risk_aversion_path(&ds.vol_index, cfg.delta0, cfg.window_weeks)?;
    let start = cal.max(cfg.window_weeks);

    let runs: Vec<Result<WindowRun>> = cfg
        .rebalance_weeks
        .par_iter()
        .map(|&k| run_window(ds, cfg, &states.components, &deltas, start, k))
        .collect();
    let mut rows = Vec::new();
    let mut wealth_paths = Vec::new();
    let mut flags = Vec::new();
    for r in runs {
        let r = r?;
        rows.extend(r.rows);
        wealth_paths.extend(r.paths);
        flags.extend(r.flags);
    }

    let mut averages = Vec::new();
    for mode in EstimationMode::ALL {
        for &mult in &cfg.risk_multipliers {
            let group: Vec<&PerfRow> = rows
                .iter()
                .filter(|r| r.strategy == mode && r.risk_multiplier == mult)
                .collect();
            let k = group.len() as f64;
            let srs: Vec<f64> = group.iter().filter_map(|r| r.sr).collect();
            averages.push(PerfAverage {
                strategy: mode,
                risk_multiplier: mult,
                sr: (!srs.is_empty()).then(|| srs.iter().sum::<f64>() / srs.len() as f64),
                trn: group.iter().map(|r| r.trn).sum::<f64>() / k,
                mdd: group.iter().map(|r| r.mdd).sum::<f64>() / k,
            });
        }
    }
    Ok(PerfReport {
        rows,
        averages,
        wealth_paths,
        flags,
        calibration_weeks: cal,
        regime_counts: states.counts,
        regimes_shrunk: states.shrunk,
    })
}
