//! Wealth accounting under proportional costs, and Sharpe ratio, turnover
//! and maximum drawdown.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One holding period: the weights chosen at its start, the gross return of
/// each asset over it, and the gross risk-free return.
#[derive(Debug, Clone, PartialEq)]
pub struct Period {
    pub weights: DVector<f64>,
    pub asset_gross: DVector<f64>,
    pub rf_gross: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WealthRun {
    /// Net gross portfolio return of each period.
    pub portfolio_gross: Vec<f64>,
    /// Wealth before the first period and after each one.
    pub wealth: Vec<f64>,
    /// Fraction of the period's return lost to trading costs.
    pub cost_drag: Vec<f64>,
}

impl WealthRun {
    /// Net return minus the risk-free return, per period.
    pub fn excess_returns(&self, periods: &[Period]) -> Vec<f64> {
        self.portfolio_gross
            .iter()
            .zip(periods)
            .map(|(g, p)| g - p.rf_gross)
            .collect()
    }
}

/// Rolls wealth forward with `r_p = sum_i r_i x_i * (1 - c sum_i |x_t - x_{t-1}|)`.
/// The first allocation is free.
pub fn roll_wealth(periods: &[Period], cost_ratio: f64) -> Result<WealthRun> {
    if !(0.0..1.0).contains(&cost_ratio) {
        return Err(Error::invalid("cost ratio must lie in [0, 1)"));
    }
    let mut wealth = vec![1.0];
    let mut portfolio_gross = Vec::with_capacity(periods.len());
    let mut cost_drag = Vec::with_capacity(periods.len());
    let mut prev: Option<&DVector<f64>> = None;
    for p in periods {
        if p.weights.len() != p.asset_gross.len() {
            return Err(Error::DimensionMismatch {
                context: "period weights",
                expected: p.asset_gross.len(),
                actual: p.weights.len(),
            });
        }
        let traded = prev.map_or(0.0, |q| (&p.weights - q).abs().sum());
        let drag = cost_ratio * traded;
        let gross = p.asset_gross.dot(&p.weights) * (1.0 - drag);
        let last = *wealth.last().expect("nonempty");
        wealth.push(last * gross);
        portfolio_gross.push(gross);
        cost_drag.push(drag);
        prev = Some(&p.weights);
    }
    Ok(WealthRun {
        portfolio_gross,
        wealth,
        cost_drag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when the return variance is zero or there are too few periods.
    pub sr: Option<f64>,
    pub trn: f64,
    pub mdd: f64,
}

/// Annualized Sharpe ratio with `scale = 250 / dt` periods per year.
pub fn sharpe_ratio(excess: &[f64], scale: f64) -> Option<f64> {
    let t = excess.len();
    if t < 2 {
        return None;
    }
    let mean = excess.iter().sum::<f64>() / t as f64;
    let var = excess.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
    if !(var > 0.0) || var < 1e-300 {
        return None;
    }
    Some(scale * mean / (scale * var).sqrt())
}

/// Average L1 distance between the next target and the drifted weights.
pub fn turnover(periods: &[Period]) -> Result<f64> {
    if periods.len() < 2 {
        return Err(Error::InsufficientData(
            "turnover needs at least two periods".into(),
        ));
    }
    let mut total = 0.0;
    for w in periods.windows(2) {
        let grown = w[0].weights.component_mul(&w[0].asset_gross);
        let s = grown.sum();
        let drifted = if s != 0.0 {
            grown / s
        } else {
            w[0].weights.clone()
        };
        total += (&w[1].weights - drifted).abs().sum();
    }
    Ok(total / (periods.len() - 1) as f64)
}

/// `max_{i<j} 1 - w_j / w_i`, zero for a nondecreasing path.
pub fn max_drawdown(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd: f64 = 0.0;
    for &w in wealth {
        if w > peak {
            peak = w;
        } else if peak > 0.0 {
            mdd = mdd.max(1.0 - w / peak);
        }
    }
    mdd
}

/// Sharpe ratio on per-period excess returns, turnover on the period
/// weights and drawdown on the wealth path.
pub fn perf_metrics(
    excess: &[f64],
    periods: &[Period],
    wealth: &[f64],
    scale: f64,
) -> Result<Metrics> {
    if excess.len() != periods.len() || wealth.len() != periods.len() + 1 {
        return Err(Error::invalid(
            "returns, periods and wealth path are misaligned",
        ));
    }
    Ok(Metrics {
        sr: sharpe_ratio(excess, scale),
        trn: turnover(periods)?,
        mdd: max_drawdown(wealth),
    })
}

/// Trading days in a rebalance window of `weeks` weeks: 21 for a month,
/// 63 for a quarter, 126 for half a year, five per week otherwise.
pub fn trading_days(weeks: usize) -> f64 {
    match weeks {
        4 => 21.0,
        13 => 63.0,
        26 => 126.0,
        w => 5.0 * w as f64,
    }
}
