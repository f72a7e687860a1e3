//! Three-investor market: informed and less-informed mean-variance investors,
//! a noise trader, and the market-clearing portfolio.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gmm::{mixture_moments, MixtureModel, MixtureWeights};
use crate::linalg::{self, check_len};

/// Market shares, noise intensities and risk aversions of the three investors.
///
/// `sigma_noise[i]` is the standard deviation of the noise trader's position
/// in asset `i`; the noise covariance is `diag(sigma_noise^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub alpha_i: f64,
    pub alpha_u: f64,
    pub alpha_n: f64,
    pub sigma_noise: Vec<f64>,
    pub delta_i: f64,
    pub delta_u: f64,
}

impl MarketParams {
    pub fn new(
        alpha_i: f64,
        alpha_u: f64,
        alpha_n: f64,
        sigma_noise: Vec<f64>,
        delta_i: f64,
        delta_u: f64,
    ) -> Result<Self> {
        let p = Self {
            alpha_i,
            alpha_u,
            alpha_n,
            sigma_noise,
            delta_i,
            delta_u,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.alpha_i,
            self.alpha_u,
            self.alpha_n,
            self.delta_i,
            self.delta_u,
        ];
        if scalars
            .iter()
            .chain(self.sigma_noise.iter())
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::invalid(
                "market shares, noise intensities and risk aversions must be positive and finite",
            ));
        }
        if self.sigma_noise.is_empty() {
            return Err(Error::invalid("noise intensities are empty"));
        }
        let total = self.alpha_i + self.alpha_u + self.alpha_n;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "market shares sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn n_assets(&self) -> usize {
        self.sigma_noise.len()
    }

    /// Same noise intensity on every asset.
    pub fn uniform_noise(
        alpha_i: f64,
        alpha_u: f64,
        alpha_n: f64,
        sigma: f64,
        n: usize,
        delta_i: f64,
        delta_u: f64,
    ) -> Result<Self> {
        Self::new(alpha_i, alpha_u, alpha_n, vec![sigma; n], delta_i, delta_u)
    }

    /// Covariance of the noise term `alpha_n * x_n`.
    pub fn omega(&self) -> DMatrix<f64> {
        let a2 = self.alpha_n * self.alpha_n;
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.n_assets(),
            self.sigma_noise.iter().map(|s| a2 * s * s),
        ))
    }

    pub fn with_shares(&self, alpha_i: f64, alpha_u: f64, alpha_n: f64) -> Result<Self> {
        Self::new(
            alpha_i,
            alpha_u,
            alpha_n,
            self.sigma_noise.clone(),
            self.delta_i,
            self.delta_u,
        )
    }
}

/// Risky-asset weights of one investor; the risk-free asset takes the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct InvestorHolding(pub DVector<f64>);

impl InvestorHolding {
    pub fn weights(&self) -> &DVector<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumObservation {
    pub x_m: DVector<f64>,
    pub x_u_star: DVector<f64>,
    pub params: MarketParams,
}

impl EquilibriumObservation {
    pub fn new(x_m: DVector<f64>, x_u_star: DVector<f64>, params: MarketParams) -> Result<Self> {
        params.validate()?;
        check_len("market portfolio", params.n_assets(), x_m.len())?;
        check_len("less-informed holding", params.n_assets(), x_u_star.len())?;
        if !linalg::all_finite(&x_m) || !linalg::all_finite(&x_u_star) {
            return Err(Error::invalid("observation has non-finite entries"));
        }
        Ok(Self {
            x_m,
            x_u_star,
            params,
        })
    }
}

/// `(delta * sigma)^{-1} mu`
pub fn mv_unconstrained(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    delta: f64,
) -> Result<InvestorHolding> {
    check_len("mean-variance inputs", mu.len(), sigma.nrows())?;
    if !(delta > 0.0) {
        return Err(Error::invalid("risk aversion must be positive"));
    }
    let chol = linalg::cholesky(sigma, "covariance")?;
    Ok(InvestorHolding(chol.solve(mu) / delta))
}

/// Holding of an investor who knows the mixture weights exactly:
/// `(delta_i * Sigma(lambda))^{-1} mu(lambda)`.
pub fn g_forward(model: &MixtureModel, w: &MixtureWeights, delta_i: f64) -> Result<DVector<f64>> {
    let (mu, sigma) = mixture_moments(model, w)?;
    mv_unconstrained(&mu, &sigma, delta_i)
        .map(|h| h.0)
        .map_err(|e| match e {
            Error::Singular(_) => Error::Singular("mixture covariance"),
            other => other,
        })
}

pub fn sample_noise<R: Rng + ?Sized>(params: &MarketParams, rng: &mut R) -> InvestorHolding {
    InvestorHolding(DVector::from_iterator(
        params.n_assets(),
        params
            .sigma_noise
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal)),
    ))
}

pub fn clear_market(
    x_u: &InvestorHolding,
    x_i: &InvestorHolding,
    x_n: &InvestorHolding,
    params: &MarketParams,
) -> Result<EquilibriumObservation> {
    let n = params.n_assets();
    check_len("less-informed holding", n, x_u.0.len())?;
    check_len("informed holding", n, x_i.0.len())?;
    check_len("noise holding", n, x_n.0.len())?;
    let x_m = params.alpha_u * &x_u.0 + params.alpha_i * &x_i.0 + params.alpha_n * &x_n.0;
    EquilibriumObservation::new(x_m, x_u.0.clone(), params.clone())
}

/// Standard deviation whose two-sided `confidence` interval is
/// `[-half_width, half_width]`.
pub fn noise_sigma_from_ci(half_width: f64, confidence: f64) -> Result<f64> {
    if !(half_width > 0.0) || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(
            "half width must be positive and confidence in (0, 1)",
        ));
    }
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + confidence));
    Ok(half_width / z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WealthState {
    pub w_i: f64,
    pub w_u: f64,
    pub w_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthUpdate {
    pub state: WealthState,
    /// Some investor's wealth would have dropped to zero or below.
    pub clamped: bool,
}

impl WealthState {
    pub fn from_shares(params: &MarketParams) -> Self {
        Self {
            w_i: params.alpha_i,
            w_u: params.alpha_u,
            w_n: params.alpha_n,
        }
    }

    pub fn total(&self) -> f64 {
        self.w_i + self.w_u + self.w_n
    }

    /// `(alpha_i, alpha_u, alpha_n)` as wealth fractions.
    pub fn shares(&self) -> (f64, f64, f64) {
        let t = self.total();
        let ai = self.w_i / t;
        let an = self.w_n / t;
        (ai, 1.0 - ai - an, an)
    }
}

/// One period of self-financing growth: each investor's wealth is multiplied
/// by `1 + r_f + x' r`.
pub fn update_wealth(
    state: &WealthState,
    x_i: &InvestorHolding,
    x_u: &InvestorHolding,
    x_n: &InvestorHolding,
    excess_returns: &DVector<f64>,
    r_f: f64,
) -> Result<WealthUpdate> {
    let n = excess_returns.len();
    check_len("informed holding", n, x_i.0.len())?;
    check_len("less-informed holding", n, x_u.0.len())?;
    check_len("noise holding", n, x_n.0.len())?;
    if !linalg::all_finite(excess_returns) || !r_f.is_finite() {
        return Err(Error::invalid("returns must be finite"));
    }
    let grow = |w: f64, x: &InvestorHolding| w * (1.0 + r_f + x.0.dot(excess_returns));
    let raw = [
        grow(state.w_i, x_i),
        grow(state.w_u, x_u),
        grow(state.w_n, x_n),
    ];
    let positive: f64 = raw.iter().filter(|w| **w > 0.0).sum();
    let reference = if positive > 0.0 {
        positive
    } else {
        state.total()
    };
    let floor = 1e-12 * reference;
    let mut clamped = false;
    let fixed: Vec<f64> = raw
        .iter()
        .map(|&w| {
            if w <= floor || !w.is_finite() {
                clamped = true;
                floor
            } else {
                w
            }
        })
        .collect();
    Ok(WealthUpdate {
        state: WealthState {
            w_i: fixed[0],
            w_u: fixed[1],
            w_n: fixed[2],
        },
        clamped,
    })
}
