//! Writes the sample inputs under `configs/`: an estimation problem with a
//! shared covariance and a synthetic weekly dataset for the backtest.
//!
//! `cargo run --example make_inputs -- <configs dir>`

use std::path::PathBuf;

use mixcast::backtest::synthetic_dataset;
use mixcast::equilibrium::{EquilibriumObservation, MarketParams};
use mixcast::gmm::{
    mixture_moments, GaussianComponent, MixtureDocument, MixtureModel, MixtureWeights,
    PriorDocument, PriorSpec,
};
use mixcast::io::{atomic_write, to_json_bytes, ObservationDocument};
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs".into()));
    let v = |x: &[f64]| DVector::from_column_slice(x);
    let cov =
        |s: f64, rho: f64| DMatrix::from_fn(3, 3, |i, j| if i == j { s * s } else { rho * s * s });
    let model = MixtureModel::new(vec![
        GaussianComponent::new(v(&[0.010, 0.012, 0.008]), cov(0.015, 0.3))?,
        GaussianComponent::new(v(&[0.002, 0.001, 0.003]), cov(0.020, 0.5))?,
        GaussianComponent::new(v(&[-0.012, -0.015, -0.010]), cov(0.035, 0.8))?,
    ])?;
    let prior = PriorSpec::new(v(&[0.3, 0.4]), DMatrix::identity(2, 2) * 0.02)?;
    let truth = MixtureWeights::from_slice(&[0.6, 0.3, 0.1])?;
    let hat = MixtureWeights::from_reduced(prior.lambda_hat_minus())?;
    let params = MarketParams::uniform_noise(0.4, 0.5, 0.1, 0.5, 3, 2.5, 2.5)?;

    // both rational investors use the covariance at the prior mean, so the
    // closed form applies
    let (mu_hat, shared) = mixture_moments(&model, &hat)?;
    let chol = shared
        .clone()
        .cholesky()
        .ok_or("covariance not positive definite")?;
    let (mu_true, _) = mixture_moments(&model, &truth)?;
    let x_u = chol.solve(&mu_hat) / params.delta_u;
    let x_i = chol.solve(&mu_true) / params.delta_i;
    let x_n = v(&[0.3, -0.2, 0.1]);
    let x_m = params.alpha_u * &x_u + params.alpha_i * &x_i + params.alpha_n * x_n;
    let obs = EquilibriumObservation::new(x_m, x_u, params)?;

    let dir = root.join("estimate");
    atomic_write(
        &dir.join("model.json"),
        &to_json_bytes(&MixtureDocument::from_model(&model, &hat))?,
    )?;
    atomic_write(
        &dir.join("prior.json"),
        &to_json_bytes(&PriorDocument::from_prior(&prior))?,
    )?;
    atomic_write(
        &dir.join("observation.json"),
        &to_json_bytes(&ObservationDocument::from_observation(&obs))?,
    )?;
    let rows: Vec<Vec<f64>> = shared
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    atomic_write(&dir.join("covariance.json"), &to_json_bytes(&rows)?)?;

    synthetic_dataset(4, 7).write_csv(&root.join("backtest-data"))?;
    println!(
        "wrote {} and {}",
        dir.display(),
        root.join("backtest-data").display()
    );
    Ok(())
}
