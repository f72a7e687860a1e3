//! Bull / oscillating / bear labelling of an index path and the per-regime
//! Gaussian components fitted on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GaussianComponent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarketState {
    Bull,
    Oscillating,
    Bear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeRules {
    /// A rise above this fraction marks a bull stretch.
    pub bull_rise: f64,
    /// A fall below this (negative) fraction marks a bear stretch.
    pub bear_fall: f64,
    /// Weight on the diagonal when a regime has fewer than `n + 2` weeks.
    pub shrinkage: f64,
}

impl Default for RegimeRules {
    fn default() -> Self {
        Self {
            bull_rise: 0.9,
            bear_fall: -0.5,
            shrinkage: 0.5,
        }
    }
}

impl RegimeRules {
    pub fn validate(&self) -> Result<()> {
        if !(self.bull_rise > 0.0) || !(self.bear_fall < 0.0 && self.bear_fall > -1.0) {
            return Err(Error::invalid(
                "need bull_rise > 0 and bear_fall in (-1, 0)",
            ));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::invalid("shrinkage must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Largest rise and deepest fall between two levels of `levels[a..=b]`,
/// as `(ratio - 1, i, j)` with `i < j`.
fn extremes(levels: &[f64], a: usize, b: usize) -> ((f64, usize, usize), (f64, usize, usize)) {
    let mut rise = (0.0, a, a);
    let mut fall = (0.0, a, a);
    let (mut lo, mut hi) = (a, a);
    for j in a + 1..=b {
        let up = levels[j] / levels[lo] - 1.0;
        if up > rise.0 {
            rise = (up, lo, j);
        }
        let down = levels[j] / levels[hi] - 1.0;
        if down < fall.0 {
            fall = (down, hi, j);
        }
        if levels[j] <= levels[lo] {
            lo = j;
        }
        if levels[j] >= levels[hi] {
            hi = j;
        }
    }
    (rise, fall)
}

fn label_range(levels: &[f64], a: usize, b: usize, rules: &RegimeRules, out: &mut [MarketState]) {
    if b <= a {
        return;
    }
    let (rise, fall) = extremes(levels, a, b);
    let bull = rise.0 > rules.bull_rise;
    let bear = fall.0 < rules.bear_fall;
    let pick = match (bull, bear) {
        (false, false) => None,
        (true, false) => Some((MarketState::Bull, rise)),
        (false, true) => Some((MarketState::Bear, fall)),
        (true, true) => {
            if (1.0 + rise.0).ln() >= -(1.0 + fall.0).ln() {
                Some((MarketState::Bull, rise))
            } else {
                Some((MarketState::Bear, fall))
            }
        }
    };
    match pick {
        None => {
            for s in &mut out[a..b] {
                *s = MarketState::Oscillating;
            }
        }
        Some((state, (_, i, j))) => {
            for s in &mut out[i..j] {
                *s = state;
            }
            label_range(levels, a, i, rules, out);
            label_range(levels, j, b, rules, out);
        }
    }
}

/// Labels each step of an index path. `levels` has one more entry than
/// the result; step `t` moves the index from `levels[t]` to `levels[t + 1]`.
///
/// The largest qualifying rise or fall in a stretch is labelled first and
/// the pieces on either side are split again; what is left is oscillating.
pub fn label_regimes(levels: &[f64], rules: &RegimeRules) -> Result<Vec<MarketState>> {
    rules.validate()?;
    if levels.len() < 2 {
        return Err(Error::InsufficientData(
            "index path needs at least two levels".into(),
        ));
    }
    if levels.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("index levels must be positive"));
    }
    let steps = levels.len() - 1;
    let mut out = vec![MarketState::Oscillating; steps];
    label_range(levels, 0, steps, rules, &mut out);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct StateCalibration {
    /// Bull, oscillating, bear.
    pub components: Vec<GaussianComponent>,
    pub labels: Vec<MarketState>,
    pub counts: [usize; 3],
    /// Covariance of some regime was shrunk toward its diagonal.
    pub shrunk: bool,
}

fn sample_moments(rows: &[usize], returns: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = returns.ncols();
    let k = rows.len() as f64;
    let mut mu = DVector::zeros(n);
    for &t in rows {
        mu += returns.row(t).transpose();
    }
    mu /= k;
    let mut cov = DMatrix::zeros(n, n);
    for &t in rows {
        let d = returns.row(t).transpose() - &mu;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= k - 1.0;
    (mu, cov)
}

/// Fits one Gaussian per market state on the returns that fall in it.
/// `levels` is the index path (`returns.nrows() + 1` entries).
pub fn calibrate_state_components(
    levels: &[f64],
    returns: &DMatrix<f64>,
    rules: &RegimeRules,
) -> Result<StateCalibration> {
    if levels.len() != returns.nrows() + 1 {
        return Err(Error::DimensionMismatch {
            context: "index path",
            expected: returns.nrows() + 1,
            actual: levels.len(),
        });
    }
    let labels = label_regimes(levels, rules)?;
    let n = returns.ncols();
    let states = [
        MarketState::Bull,
        MarketState::Oscillating,
        MarketState::Bear,
    ];
    let mut components = Vec::with_capacity(3);
    let mut counts = [0; 3];
    let mut shrunk = false;
    let rows: Vec<Vec<usize>> = states
        .iter()
        .map(|state| (0..labels.len()).filter(|&t| labels[t] == *state).collect())
        .collect();
    for (k, state) in states.iter().enumerate() {
        counts[k] = rows[k].len();
        if rows[k].len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{state:?} regime has {} observations; provide a longer history",
                rows[k].len()
            )));
        }
    }
    for rows in &rows {
        let (mu, mut cov) = sample_moments(rows, returns);
        if rows.len() < n + 2 {
            let diag = DMatrix::from_diagonal(&cov.diagonal());
            cov = cov * (1.0 - rules.shrinkage) + diag * rules.shrinkage;
            shrunk = true;
        }
        components.push(GaussianComponent::new(mu, cov)?);
    }
    Ok(StateCalibration {
        components,
        labels,
        counts,
        shrunk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Geometric path with the given per-step growth in each stretch.
    fn path(stretches: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![1.0];
        for &(steps, g) in stretches {
            for _ in 0..steps {
                let last = *out.last().unwrap();
                out.push(last * g);
            }
        }
        out
    }

    #[test]
    fn planted_boundaries_are_recovered() {
        // +150% over 40 steps, -60% over 30, then flat with a small wobble
        let rise = 2.5f64.powf(1.0 / 40.0);
        let fall = 0.4f64.powf(1.0 / 30.0);
        let levels = path(&[(40, rise), (30, fall), (10, 1.01), (10, 0.995)]);
        let labels = label_regimes(&levels, &RegimeRules::default()).unwrap();
        assert!(labels[..40].iter().all(|s| *s == MarketState::Bull));
        assert!(labels[40..70].iter().all(|s| *s == MarketState::Bear));
        assert!(labels[70..].iter().all(|s| *s == MarketState::Oscillating));
    }

    #[test]
    fn monotone_rise_needs_more_history() {
        let levels = path(&[(50, 2.0f64.powf(1.0 / 50.0))]);
        let labels = label_regimes(&levels, &RegimeRules::default()).unwrap();
        assert!(labels.iter().all(|s| *s == MarketState::Bull));
        let returns = DMatrix::from_element(50, 2, 0.01);
        let err =
            calibrate_state_components(&levels, &returns, &RegimeRules::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn short_regimes_are_shrunk_to_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rise = 2.0f64.powf(1.0 / 4.0);
        let fall = 0.45f64.powf(1.0 / 4.0);
        let levels = path(&[(4, rise), (4, fall), (4, 1.0)]);
        let n = 8;
        let returns = DMatrix::from_fn(12, n, |_, _| 0.02 * (rng.random::<f64>() - 0.5));
        let cal = calibrate_state_components(&levels, &returns, &RegimeRules::default()).unwrap();
        assert!(cal.shrunk);
        assert_eq!(cal.counts, [4, 4, 4]);
        for c in &cal.components {
            assert!(crate::linalg::min_eigenvalue(c.sigma()) > 0.0);
        }
    }

    #[test]
    fn regime_moments_match_hand_computation() {
        let rise = 3.0f64.powf(1.0 / 3.0);
        let fall = 0.3f64.powf(1.0 / 3.0);
        let levels = path(&[(3, rise), (3, 1.0), (3, fall)]);
        let returns = DMatrix::from_fn(9, 1, |t, _| t as f64);
        let rules = RegimeRules {
            shrinkage: 1.0,
            ..RegimeRules::default()
        };
        let cal = calibrate_state_components(&levels, &returns, &rules).unwrap();
        assert_eq!(cal.counts, [3, 3, 3]);
        // bull rows 0,1,2: mean 1, sample variance 1
        assert_eq!(cal.components[0].mu()[0], 1.0);
        assert_eq!(cal.components[0].sigma()[(0, 0)], 1.0);
        assert_eq!(cal.components[2].mu()[0], 7.0);
    }

    #[test]
    fn rules_are_validated() {
        let bad = RegimeRules {
            bear_fall: 0.2,
            ..RegimeRules::default()
        };
        assert!(label_regimes(&[1.0, 2.0], &bad).is_err());
        assert!(label_regimes(&[1.0], &RegimeRules::default()).is_err());
        assert!(label_regimes(&[1.0, -1.0], &RegimeRules::default()).is_err());
    }
}
