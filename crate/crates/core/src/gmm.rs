//! Gaussian mixture representation of excess returns.
//!
//! Components are fixed; only the mixture weights are ever estimated. The
//! reduced weight vector drops the last entry, which is implied by the
//! sum-to-one constraint.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_len, check_pd, symmetrize};
use crate::simplex;

/// Smallest admissible eigenvalue of a component covariance.
pub const PD_FLOOR: f64 = 1e-10;

/// Tolerance on `sum(lambda) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// One multivariate normal component of the return distribution.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianComponent {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        check_len("component covariance", mu.len(), sigma.nrows())?;
        if !linalg::all_finite(&mu) {
            return Err(Error::invalid("component mean has non-finite entries"));
        }
        check_pd(&sigma, PD_FLOOR, "component covariance")?;
        let mut sigma = sigma;
        symmetrize(&mut sigma);
        let chol = linalg::cholesky(&sigma, "component covariance")?;
        let chol_lower = chol.l();
        let log_det: f64 = 2.0 * chol_lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let n = mu.len() as f64;
        let log_norm = -0.5 * (n * (2.0 * PI).ln() + log_det);
        Ok(Self {
            mu,
            sigma,
            chol_lower,
            log_norm,
        })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn log_density(&self, r: &DVector<f64>) -> f64 {
        let diff = r - &self.mu;
        let z = self
            .chol_lower
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mu + &self.chol_lower * z
    }
}

/// A fixed set of components sharing one asset dimension.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    components: Vec<GaussianComponent>,
    n_assets: usize,
}

impl MixtureModel {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("a mixture needs at least one component"))?;
        let n_assets = first.dim();
        for c in &components {
            check_len("mixture component dimension", n_assets, c.dim())?;
        }
        Ok(Self {
            components,
            n_assets,
        })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    fn check_weights(&self, w: &MixtureWeights) -> Result<()> {
        check_len("mixture weights", self.n_components(), w.len())
    }
}

/// Full mixture weight vector on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(DVector<f64>);

impl MixtureWeights {
    pub fn new(full: DVector<f64>) -> Result<Self> {
        if full.is_empty() {
            return Err(Error::invalid("mixture weights are empty"));
        }
        if full.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "mixture weights must be finite and nonnegative: {:?}",
                full.as_slice()
            )));
        }
        let total = full.sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(Self(full))
    }

    pub fn from_slice(full: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(full))
    }

    /// Rebuilds the full vector from the first `m - 1` weights.
    ///
    /// Round-off below `1e-10` outside the feasible set is clipped; anything
    /// larger is an error.
    pub fn from_reduced(reduced: &DVector<f64>) -> Result<Self> {
        if !simplex::in_gamma(reduced, 1e-10) {
            return Err(Error::invalid(format!(
                "reduced weights {:?} lie outside the feasible set",
                reduced.as_slice()
            )));
        }
        let m = reduced.len() + 1;
        let mut full = DVector::zeros(m);
        for (i, v) in reduced.iter().enumerate() {
            full[i] = v.max(0.0);
        }
        let head: f64 = full.rows(0, m - 1).sum();
        if head > 1.0 {
            let mut clipped = full.rows(0, m - 1).into_owned();
            clipped /= head;
            full.rows_mut(0, m - 1).copy_from(&clipped);
            full[m - 1] = 0.0;
        } else {
            full[m - 1] = 1.0 - head;
        }
        Ok(Self(full))
    }

    pub fn uniform(m: usize) -> Self {
        Self(DVector::from_element(m, 1.0 / m as f64))
    }

    /// Point mass on component `j`.
    pub fn vertex(m: usize, j: usize) -> Self {
        let mut v = DVector::zeros(m);
        v[j] = 1.0;
        Self(v)
    }

    pub fn full(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn reduced(&self) -> DVector<f64> {
        self.0.rows(0, self.0.len() - 1).into_owned()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Gaussian prior `N(lambda_hat_minus, phi)` on the reduced weights.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    lambda_hat_minus: DVector<f64>,
    phi: DMatrix<f64>,
    phi_inv: DMatrix<f64>,
}

impl PriorSpec {
    pub fn new(lambda_hat_minus: DVector<f64>, phi: DMatrix<f64>) -> Result<Self> {
        if !simplex::in_gamma(&lambda_hat_minus, 1e-10) {
            return Err(Error::invalid(format!(
                "prior mean {:?} lies outside the feasible set",
                lambda_hat_minus.as_slice()
            )));
        }
        let mut p = Self::unconstrained(lambda_hat_minus, phi)?;
        p.lambda_hat_minus = simplex::project_gamma(&p.lambda_hat_minus);
        Ok(p)
    }

    /// Like [`PriorSpec::new`] but the mean may lie anywhere; the backward
    /// estimate then projects it onto the feasible set.
    pub fn unconstrained(lambda_hat_minus: DVector<f64>, phi: DMatrix<f64>) -> Result<Self> {
        check_len("prior covariance", lambda_hat_minus.len(), phi.nrows())?;
        if !linalg::all_finite(&lambda_hat_minus) {
            return Err(Error::invalid("prior mean has non-finite entries"));
        }
        let mut phi = phi;
        if !phi.is_square() || !linalg::is_symmetric(&phi) {
            return Err(Error::invalid("prior covariance must be symmetric"));
        }
        symmetrize(&mut phi);
        let phi_inv = if phi.nrows() == 0 {
            phi.clone()
        } else {
            linalg::check_pd(&phi, 0.0, "prior covariance")?;
            linalg::spd_inverse(&phi, "prior covariance")?
        };
        Ok(Self {
            lambda_hat_minus,
            phi,
            phi_inv,
        })
    }

    pub fn lambda_hat_minus(&self) -> &DVector<f64> {
        &self.lambda_hat_minus
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn phi_inv(&self) -> &DMatrix<f64> {
        &self.phi_inv
    }

    pub fn n_free(&self) -> usize {
        self.lambda_hat_minus.len()
    }
}

pub fn mixture_density(model: &MixtureModel, w: &MixtureWeights, r: &DVector<f64>) -> Result<f64> {
    model.check_weights(w)?;
    check_len("return vector", model.n_assets(), r.len())?;
    Ok(model
        .components
        .iter()
        .zip(w.full().iter())
        .map(|(c, &l)| l * c.log_density(r).exp())
        .sum())
}

/// Mean and covariance of the mixture.
pub fn mixture_moments(
    model: &MixtureModel,
    w: &MixtureWeights,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    model.check_weights(w)?;
    let n = model.n_assets();
    let mut mu = DVector::zeros(n);
    for (c, &l) in model.components.iter().zip(w.full().iter()) {
        mu.axpy(l, &c.mu, 1.0);
    }
    let mut sigma = DMatrix::zeros(n, n);
    for (c, &l) in model.components.iter().zip(w.full().iter()) {
        if l == 0.0 {
            continue;
        }
        let d = &c.mu - &mu;
        sigma += l * &c.sigma;
        sigma.ger(l, &d, &d, 1.0);
    }
    symmetrize(&mut sigma);
    Ok((mu, sigma))
}

/// Draws `count` rows, returning the component label of each draw as well.
pub fn sample_labeled<R: Rng + ?Sized>(
    model: &MixtureModel,
    w: &MixtureWeights,
    count: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    model.check_weights(w)?;
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let n = model.n_assets();
    let mut out = DMatrix::zeros(count, n);
    let mut labels = Vec::with_capacity(count);
    let last = model.n_components() - 1;
    for t in 0..count {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = last;
        for (j, &l) in w.full().iter().enumerate() {
            acc += l;
            if u < acc {
                k = j;
                break;
            }
        }
        // round-off can leave u >= acc; never pick a zero-weight tail component
        while w.full()[k] == 0.0 && k > 0 {
            k -= 1;
        }
        let x = model.components[k].draw(rng);
        out.row_mut(t).copy_from(&x.transpose());
        labels.push(k);
    }
    Ok((out, labels))
}

pub fn sample_returns_with<R: Rng + ?Sized>(
    model: &MixtureModel,
    w: &MixtureWeights,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    sample_labeled(model, w, count, rng).map(|(m, _)| m)
}

/// `count x n` matrix of draws, reproducible for a fixed seed.
pub fn sample_returns(
    model: &MixtureModel,
    w: &MixtureWeights,
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_returns_with(model, w, count, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Weights are clamped at this value so responsibilities stay defined.
    pub weight_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            weight_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub prior: PriorSpec,
    pub weights: MixtureWeights,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before the first update and after every update.
    pub log_likelihood: Vec<f64>,
    /// A ridge was added because the information matrix was singular.
    pub fisher_regularized: bool,
}

/// Per-observation log densities, `T x m`.
pub fn component_log_densities(model: &MixtureModel, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_len("data columns", model.n_assets(), data.ncols())?;
    let m = model.n_components();
    let mut out = DMatrix::zeros(data.nrows(), m);
    for t in 0..data.nrows() {
        let r = data.row(t).transpose();
        for (k, c) in model.components.iter().enumerate() {
            out[(t, k)] = c.log_density(&r);
        }
    }
    Ok(out)
}

fn log_likelihood(log_dens: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    for row in log_dens.row_iter() {
        let peak = row.max();
        let s: f64 = row
            .iter()
            .zip(w.iter())
            .map(|(ld, l)| l * (ld - peak).exp())
            .sum();
        total += peak + s.ln();
    }
    total
}

/// One EM update: the average posterior responsibility of each component.
pub fn em_step(log_dens: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    let m = w.len();
    let mut acc = DVector::zeros(m);
    let mut resp = DVector::zeros(m);
    for row in log_dens.row_iter() {
        let peak = row.max();
        for k in 0..m {
            resp[k] = w[k] * (row[k] - peak).exp();
        }
        let s = resp.sum();
        acc.axpy(1.0 / s, &resp, 1.0);
    }
    acc / log_dens.nrows() as f64
}

/// Observed information of the reduced weights at `w`.
fn observed_information(log_dens: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let m = w.len();
    let free = m - 1;
    let mut info = DMatrix::zeros(free, free);
    let mut d = DVector::zeros(free);
    for row in log_dens.row_iter() {
        let peak = row.max();
        let q: Vec<f64> = row.iter().map(|ld| (ld - peak).exp()).collect();
        let f: f64 = q.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        for j in 0..free {
            d[j] = (q[j] - q[m - 1]) / f;
        }
        info.ger(1.0, &d, &d, 1.0);
    }
    symmetrize(&mut info);
    info
}

/// Fits the mixture weights to `data` (rows are observations) with the
/// components held fixed, and returns the Gaussian prior on the reduced
/// weights: the EM optimum and the inverse observed information there.
pub fn em_fit_weights(model: &MixtureModel, data: &DMatrix<f64>) -> Result<EmFit> {
    em_fit_weights_with(model, data, &EmOptions::default())
}

pub fn em_fit_weights_with(
    model: &MixtureModel,
    data: &DMatrix<f64>,
    opts: &EmOptions,
) -> Result<EmFit> {
    let m = model.n_components();
    if data.nrows() < m {
        return Err(Error::InsufficientData(format!(
            "EM needs at least {m} observations, got {}",
            data.nrows()
        )));
    }
    let log_dens = component_log_densities(model, data)?;
    if log_dens.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data produce non-finite log densities"));
    }

    let mut w = DVector::from_element(m, 1.0 / m as f64);
    let mut trace = vec![log_likelihood(&log_dens, &w)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut next = em_step(&log_dens, &w);
        next.apply(|v| *v = v.max(opts.weight_floor));
        next /= next.sum();
        let delta = (&next - &w).amax();
        w = next;
        trace.push(log_likelihood(&log_dens, &w));
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    let reduced = simplex::project_gamma(&w.rows(0, m - 1).into_owned());
    let weights = MixtureWeights::from_reduced(&reduced)?;

    let (phi, fisher_regularized) = if m == 1 {
        (DMatrix::zeros(0, 0), false)
    } else {
        inverse_information(observed_information(&log_dens, weights.full()))
    };
    let prior = PriorSpec::new(reduced, phi)?;
    Ok(EmFit {
        prior,
        weights,
        iterations,
        converged,
        log_likelihood: trace,
        fisher_regularized,
    })
}

fn inverse_information(info: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    const RIDGE: f64 = 1e-8;
    let n = info.nrows();
    let eig = info.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    let singular = !(min > 1e-14 * max.max(1e-300)) || !min.is_finite();
    let mut info = info;
    if singular {
        info += DMatrix::identity(n, n) * RIDGE;
    }
    match linalg::spd_inverse(&info, "observed information") {
        Ok(phi) => (phi, singular),
        Err(_) => {
            // still numerically singular; fall back to a huge diagonal prior
            (DMatrix::identity(n, n) / RIDGE, true)
        }
    }
}

/// Serialized form of a mixture: components plus weights, fields in this order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixtureDocument {
    pub components: Vec<ComponentDocument>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComponentDocument {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl MixtureDocument {
    pub fn from_model(model: &MixtureModel, w: &MixtureWeights) -> Self {
        Self {
            components: model
                .components()
                .iter()
                .map(|c| ComponentDocument {
                    mu: c.mu().iter().copied().collect(),
                    sigma: linalg::matrix_to_rows(c.sigma()),
                })
                .collect(),
            weights: w.as_slice().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<(MixtureModel, MixtureWeights)> {
        let comps = self
            .components
            .into_iter()
            .map(|c| {
                let sigma = linalg::matrix_from_rows(&c.sigma, "component covariance")?;
                GaussianComponent::new(DVector::from_vec(c.mu), sigma)
            })
            .collect::<Result<Vec<_>>>()?;
        let model = MixtureModel::new(comps)?;
        let w = MixtureWeights::from_slice(&self.weights)?;
        model.check_weights(&w)?;
        Ok((model, w))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PriorDocument {
    pub lambda_hat_minus: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
}

impl PriorDocument {
    pub fn from_prior(p: &PriorSpec) -> Self {
        Self {
            lambda_hat_minus: p.lambda_hat_minus().iter().copied().collect(),
            phi: linalg::matrix_to_rows(p.phi()),
        }
    }

    pub fn into_prior(self) -> Result<PriorSpec> {
        let n = self.lambda_hat_minus.len();
        let phi = if n == 0 {
            DMatrix::zeros(0, 0)
        } else {
            linalg::matrix_from_rows(&self.phi, "prior covariance")?
        };
        PriorSpec::new(DVector::from_vec(self.lambda_hat_minus), phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
        (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
    }

    fn comp(mu: &[f64], diag: &[f64]) -> GaussianComponent {
        GaussianComponent::new(
            DVector::from_column_slice(mu),
            DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        )
        .unwrap()
    }

    fn two_state_1d() -> MixtureModel {
        MixtureModel::new(vec![comp(&[0.004], &[0.001]), comp(&[-0.008], &[0.002])]).unwrap()
    }

    #[test]
    fn density_standard_normal_at_mode() {
        let model = MixtureModel::new(vec![comp(&[0.0, 0.0], &[1.0, 1.0])]).unwrap();
        let w = MixtureWeights::from_slice(&[1.0]).unwrap();
        let p = mixture_density(&model, &w, &DVector::zeros(2)).unwrap();
        assert_relative_eq!(p, 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_relative_eq!(p, 0.159155, epsilon = 1e-6);
    }

    #[test]
    fn density_of_identical_components_matches_single() {
        let c = comp(&[0.1, -0.2], &[0.5, 2.0]);
        let single = MixtureModel::new(vec![c.clone()]).unwrap();
        let double = MixtureModel::new(vec![c.clone(), c]).unwrap();
        let w1 = MixtureWeights::from_slice(&[1.0]).unwrap();
        let w2 = MixtureWeights::from_slice(&[0.5, 0.5]).unwrap();
        for r in [[0.0, 0.0], [1.0, -1.0], [0.3, 2.5]] {
            let r = DVector::from_column_slice(&r);
            let a = mixture_density(&single, &w1, &r).unwrap();
            let b = mixture_density(&double, &w2, &r).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn density_two_term_hand_evaluation() {
        let model = two_state_1d();
        let w = MixtureWeights::from_slice(&[0.7, 0.3]).unwrap();
        let expected = 0.7 * scalar_normal_pdf(0.0, 0.004, 0.001)
            + 0.3 * scalar_normal_pdf(0.0, -0.008, 0.002);
        let got = mixture_density(&model, &w, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-13);
    }

    #[test]
    fn density_dimension_mismatch() {
        let model = two_state_1d();
        let w = MixtureWeights::from_slice(&[0.7, 0.3]).unwrap();
        assert!(matches!(
            mixture_density(&model, &w, &DVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
        let w3 = MixtureWeights::uniform(3);
        assert!(mixture_density(&model, &w3, &DVector::zeros(1)).is_err());
    }

    #[test]
    fn non_pd_component_rejected() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(GaussianComponent::new(DVector::zeros(2), sigma).is_err());
        let tiny = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1e-11]));
        assert!(GaussianComponent::new(DVector::zeros(2), tiny).is_err());
    }

    #[test]
    fn moments_equal_means_have_no_dispersion_term() {
        let model = MixtureModel::new(vec![
            comp(&[0.1, 0.2], &[1.0, 2.0]),
            comp(&[0.1, 0.2], &[3.0, 4.0]),
        ])
        .unwrap();
        let w = MixtureWeights::from_slice(&[0.25, 0.75]).unwrap();
        let (mu, sigma) = mixture_moments(&model, &w).unwrap();
        assert_relative_eq!(mu[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(sigma[(0, 0)], 0.25 + 2.25, epsilon = 1e-14);
        assert_relative_eq!(sigma[(1, 1)], 0.5 + 3.0, epsilon = 1e-14);
        assert_eq!(sigma[(0, 1)], 0.0);
    }

    #[test]
    fn moments_degenerate_weights_pick_component() {
        let model = MixtureModel::new(vec![comp(&[0.1], &[1.0]), comp(&[-0.3], &[2.0])]).unwrap();
        let (mu, sigma) = mixture_moments(&model, &MixtureWeights::vertex(2, 1)).unwrap();
        assert_eq!(mu[0], -0.3);
        assert_eq!(sigma[(0, 0)], 2.0);
    }

    #[test]
    fn moments_two_point_variance() {
        // zero-variance components cannot be constructed, so check the formula
        // through the smallest admissible variances
        let model = MixtureModel::new(vec![comp(&[1.0], &[1e-9]), comp(&[-1.0], &[1e-9])]).unwrap();
        let w = MixtureWeights::from_slice(&[0.5, 0.5]).unwrap();
        let (mu, sigma) = mixture_moments(&model, &w).unwrap();
        assert_relative_eq!(mu[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(sigma[(0, 0)], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = two_state_1d();
        let w = MixtureWeights::from_slice(&[0.7, 0.3]).unwrap();
        let a = sample_returns(&model, &w, 50, 9).unwrap();
        let b = sample_returns(&model, &w, 50, 9).unwrap();
        assert_eq!(a, b);
        assert!(sample_returns(&model, &w, 0, 9).is_err());
    }

    #[test]
    fn sampling_single_component_mean() {
        let model = MixtureModel::new(vec![
            comp(&[0.5, -1.0], &[0.04, 1.0]),
            comp(&[3.0, 3.0], &[1.0, 1.0]),
        ])
        .unwrap();
        let count = 100_000;
        let x = sample_returns(&model, &MixtureWeights::vertex(2, 0), count, 1).unwrap();
        let sd = [0.2, 1.0];
        for (j, target) in [0.5, -1.0].iter().enumerate() {
            let mean = x.column(j).mean();
            assert!((mean - target).abs() < 4.0 * sd[j] / (count as f64).sqrt());
        }
    }

    #[test]
    fn sampling_component_frequencies() {
        let model = two_state_1d();
        let w = MixtureWeights::from_slice(&[0.7, 0.3]).unwrap();
        let count = 50_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, labels) = sample_labeled(&model, &w, count, &mut rng).unwrap();
        let freq = labels.iter().filter(|&&k| k == 0).count() as f64 / count as f64;
        assert!((freq - 0.7).abs() < 3.0 * (0.21 / count as f64).sqrt());
    }

    #[test]
    fn reduced_roundtrip() {
        let w = MixtureWeights::from_slice(&[0.2, 0.3, 0.5]).unwrap();
        let back = MixtureWeights::from_reduced(&w.reduced()).unwrap();
        assert_relative_eq!(back.full()[2], 0.5, epsilon = 1e-15);
        assert!(MixtureWeights::from_reduced(&DVector::from_column_slice(&[0.8, 0.5])).is_err());
        assert!(MixtureWeights::from_slice(&[0.5, 0.6]).is_err());
        assert!(MixtureWeights::from_slice(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn one_em_step_matches_brute_force() {
        let model = two_state_1d();
        let data = DMatrix::from_column_slice(5, 1, &[0.01, -0.02, 0.03, 0.0, -0.05]);
        let log_dens = component_log_densities(&model, &data).unwrap();
        let w0 = DVector::from_element(2, 0.5);
        let got = em_step(&log_dens, &w0);
        let mut expected = [0.0; 2];
        for t in 0..5 {
            let x = data[(t, 0)];
            let p = [
                0.5 * scalar_normal_pdf(x, 0.004, 0.001),
                0.5 * scalar_normal_pdf(x, -0.008, 0.002),
            ];
            let s = p[0] + p[1];
            expected[0] += p[0] / s / 5.0;
            expected[1] += p[1] / s / 5.0;
        }
        assert_relative_eq!(got[0], expected[0], max_relative = 1e-12);
        assert_relative_eq!(got[1], expected[1], max_relative = 1e-12);

        let one = em_fit_weights_with(
            &model,
            &data,
            &EmOptions {
                max_iter: 1,
                ..EmOptions::default()
            },
        )
        .unwrap();
        assert_relative_eq!(one.weights.full()[0], expected[0], max_relative = 1e-12);
        assert!(!one.converged);
    }

    fn separated() -> MixtureModel {
        MixtureModel::new(vec![
            comp(&[1.0, 1.0], &[0.1, 0.1]),
            comp(&[-1.0, -1.0], &[0.1, 0.1]),
        ])
        .unwrap()
    }

    #[test]
    fn em_recovers_pure_component() {
        let model = separated();
        let data = sample_returns(&model, &MixtureWeights::vertex(2, 0), 400, 11).unwrap();
        let fit = em_fit_weights(&model, &data).unwrap();
        assert!(fit.weights.full()[0] >= 0.99);
        assert!(fit.converged);
    }

    #[test]
    fn em_recovers_balanced_mixture_and_is_monotone() {
        let model = MixtureModel::new(vec![comp(&[0.5], &[1.0]), comp(&[-0.5], &[1.0])]).unwrap();
        let w = MixtureWeights::from_slice(&[0.5, 0.5]).unwrap();
        let data = sample_returns(&model, &w, 20_000, 5).unwrap();
        let fit = em_fit_weights(&model, &data).unwrap();
        let l1 = fit.weights.full()[0];
        assert!((0.4..=0.6).contains(&l1), "{l1}");
        for pair in fit.log_likelihood.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs().max(1.0));
        }
        let phi = fit.prior.phi()[(0, 0)];
        assert!(phi > 0.0 && phi < 0.01);
    }

    #[test]
    fn em_rejects_short_data() {
        let model = separated();
        let data = DMatrix::zeros(1, 2);
        assert!(matches!(
            em_fit_weights(&model, &data),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn document_field_order() {
        let model = two_state_1d();
        let w = MixtureWeights::from_slice(&[0.7, 0.3]).unwrap();
        let json = serde_json::to_string(&MixtureDocument::from_model(&model, &w)).unwrap();
        assert!(json.starts_with("{\"components\":[{\"mu\":[0.004],\"sigma\":[[0.001]]}"));
        assert!(json.ends_with("\"weights\":[0.7,0.3]}"));
        let doc: MixtureDocument = serde_json::from_str(&json).unwrap();
        let (m2, w2) = doc.into_model().unwrap();
        assert_eq!(m2.n_components(), 2);
        assert_eq!(w2, w);
    }
}
