//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

mod common;

use std::time::Instant;

use mixcast::backtest::{
    max_drawdown, roll_wealth, run_backtest, synthetic_dataset, turnover, BacktestConfig, Period,
};
use mixcast::equilibrium::MarketParams;
use mixcast::estimator::{
    objective_value, posterior_linear, solve_combined_linear, EstimationMode, EstimationProblem,
    LinearCase, Objective,
};
use mixcast::gmm::{MixtureModel, PriorSpec};
use mixcast::simplex;
use mixcast::simulation::{
    default_grid, run_experiment_grid, Experiment, FactorSpec, ScenarioSpec,
};
use nalgebra::{DMatrix, DVector};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Posterior mean from the raw model, independent of `LinearCase`:
/// `q0 = a_U x_U + a_I (d S)^{-1} mu_m`, `P_j = a_I (d S)^{-1} (mu_j - mu_m)`.
fn posterior_mean_oracle(
    model: &MixtureModel,
    shared: &DMatrix<f64>,
    params: &MarketParams,
    x_u: &DVector<f64>,
    prior: &PriorSpec,
    x_m: &DVector<f64>,
) -> DVector<f64> {
    let comps = model.components();
    let m = comps.len();
    let n = model.n_assets();
    let inv = (shared * params.delta_i).try_inverse().unwrap();
    let last = comps[m - 1].mu();
    let q0 = params.alpha_u * x_u + params.alpha_i * &inv * last;
    let p = DMatrix::from_fn(n, m - 1, |i, j| {
        (params.alpha_i * &inv * (comps[j].mu() - last))[i]
    });
    let omega_inv = params.omega().try_inverse().unwrap();
    let phi_inv = prior.phi().clone().try_inverse().unwrap();
    let a = &phi_inv + p.transpose() * &omega_inv * &p;
    let b = &phi_inv * prior.lambda_hat_minus() + p.transpose() * &omega_inv * (x_m - q0);
    a.lu().solve(&b).unwrap()
}

fn closed_form_agreement() -> Outcome {
    let clock = Instant::now();
    let shapes: Vec<(usize, usize)> = [2, 3, 4]
        .iter()
        .flat_map(|&m| [3, 5, 10].map(|n| (m, n)))
        .collect();
    let mut worst = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut interior = 0;
    for k in 0..100u64 {
        let (m, n) = shapes[k as usize % shapes.len()];
        let (inst, shared) = shared_instance(1000 + k, m, n);
        let params = &inst.obs.params;
        let case = LinearCase::new(&inst.model, &shared, params, &inst.obs.x_u_star).unwrap();
        let omega = params.omega();
        let closed = solve_combined_linear(&case, &inst.prior, &inst.obs.x_m, &omega).unwrap();
        let problem = EstimationProblem::new(
            &inst.model,
            &inst.prior,
            &inst.obs,
            EstimationMode::Combined,
        )
        .unwrap()
        .with_fixed_covariance(&shared)
        .unwrap();
        let numeric = mixcast::estimator::solve(&problem).unwrap();
        worst = worst.max(max_abs_diff(closed.lambda.full(), numeric.lambda.full()));

        let (mean, _) = posterior_linear(&case, &inst.prior, &inst.obs.x_m, &omega).unwrap();
        let oracle = posterior_mean_oracle(
            &inst.model,
            &shared,
            params,
            &inst.obs.x_u_star,
            &inst.prior,
            &inst.obs.x_m,
        );
        worst_mean = worst_mean.max(max_abs_diff(&mean, &oracle));
        if simplex::in_gamma(&mean, 0.0) {
            interior += 1;
            worst_mean = worst_mean.max(max_abs_diff(&mean, &closed.reduced()));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 1e-6 && worst_mean <= 1e-10 && interior > 0 && secs < 30.0,
        format!(
            "max |closed - numeric| = {worst:.2e} (tol 1e-6); max posterior-mean error = {worst_mean:.2e} \
             (tol 1e-10, {interior} interior); {secs:.2} s (limit 30 s)"
        ),
    )
}

fn brute_force_oracle() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..50u64 {
        let inst = instance(2000 + seed, 3, 4, base_params(4, 0.5));
        for mode in EstimationMode::ALL {
            let p = EstimationProblem::new(&inst.model, &inst.prior, &inst.obs, mode).unwrap();
            let r = mixcast::estimator::solve(&p).unwrap();
            let gap = r.objective_value - grid_best(&p, 0.005);
            worst = worst.max(gap);
        }
    }
    Outcome::new(
        worst <= 1e-4,
        format!("max (solver - grid) objective over 50 x 3 problems = {worst:.2e} (tol 1e-4)"),
    )
}

fn limit_ladders() -> Outcome {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..16u64 {
        for l in ladders(seed, 0.0) {
            worst = worst.max(l.endpoint());
            if !l.passes(1e-2) {
                failures.push(format!("seed {seed} {}: {:?}", l.name, l.deviations));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("96 half-ladders monotone; worst endpoint deviation {worst:.2e} (tol 1e-2)")
    } else {
        failures.join("; ")
    };
    Outcome::new(failures.is_empty(), detail)
}

fn table_one() -> Outcome {
    let grid = default_grid(Experiment::MarketShares);
    let table = match run_experiment_grid(
        Experiment::MarketShares,
        &grid,
        20,
        20240601,
        &FactorSpec::default_states(),
        &ScenarioSpec::default(),
    ) {
        Ok(t) => t,
        Err(e) => return Outcome::new(false, format!("experiment failed: {e}")),
    };
    let rows = &table.rows;
    let b_tp = rows[0].eta_turning_points.backward;
    let b_full = rows[0].eta_full.backward;
    let a = rows.iter().all(|r| {
        (r.eta_turning_points.backward - b_tp).abs() < 1e-12
            && (r.eta_full.backward - b_full).abs() < 1e-12
    });
    let last = rows.last().unwrap();
    let b = [
        last.eta_turning_points.combined,
        last.eta_turning_points.forward,
        last.eta_full.combined,
        last.eta_full.forward,
    ]
    .iter()
    .all(|v| *v <= 0.02);
    let first = &rows[0];
    let c = (first.eta_full.combined - first.eta_full.backward).abs() <= 0.05
        && first.eta_full.forward >= 0.4;
    let d = rows
        .iter()
        .filter(|r| r.grid_value >= 0.1)
        .all(|r| r.eta_full.combined <= r.eta_full.backward);
    let failed: usize = rows.iter().map(|r| r.failed_replications).sum();
    Outcome::new(
        a && b && c && d && failed == 0,
        format!(
            "(a) {a} eta_B = {b_full:.4}; (b) {b} C/F at 0.990 = {:.4}/{:.4}; \
             (c) {c} C/B/F at 0.001 = {:.4}/{:.4}/{:.4}; (d) {d}; failed replications {failed}",
            last.eta_full.combined,
            last.eta_full.forward,
            first.eta_full.combined,
            first.eta_full.backward,
            first.eta_full.forward
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let h = 1e-6;
    for k in 0..100u64 {
        let m = 3 + (k % 2) as usize;
        let inst = instance(3000 + k, m, 4, base_params(4, 0.5));
        let p = EstimationProblem::new(
            &inst.model,
            &inst.prior,
            &inst.obs,
            EstimationMode::Combined,
        )
        .unwrap();
        let obj = Objective::new(&p);
        let mut r = rng(4000 + k);
        // interior point with margin h from every bound
        let x = random_point(&mut r, m - 1).map(|v| 0.02 + 0.9 * v);
        let analytic = obj.evaluate(&x).grad;
        let fd = DVector::from_fn(m - 1, |j, _| {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[j] += h;
            dn[j] -= h;
            (objective_value(&p, &up) - objective_value(&p, &dn)) / (2.0 * h)
        });
        let rel = (&analytic - &fd).norm() / analytic.norm().max(fd.norm()).max(1e-12);
        worst = worst.max(rel);
    }
    Outcome::new(
        worst <= 1e-4,
        format!("max relative gradient error at 100 points = {worst:.2e} (tol 1e-4)"),
    )
}

fn metric_fixtures() -> Outcome {
    let mdd = max_drawdown(&[1.0, 2.0, 1.0]);
    let v = |x: &[f64]| DVector::from_column_slice(x);
    let periods = vec![
        Period {
            weights: v(&[1.0, 0.0]),
            asset_gross: v(&[1.0, 1.0]),
            rf_gross: 1.0,
        },
        Period {
            weights: v(&[0.0, 1.0]),
            asset_gross: v(&[1.0, 1.0]),
            rf_gross: 1.0,
        },
    ];
    let trn = turnover(&periods).unwrap_or(f64::NAN);
    let run = roll_wealth(&periods, 0.005).unwrap();
    let drag = run.cost_drag[1];
    let lost = 1.0 - run.wealth[2] / run.wealth[1];
    let pass =
        mdd == 0.5 && trn == 2.0 && (drag - 0.01).abs() < 1e-15 && (lost - 0.01).abs() < 1e-15;
    Outcome::new(
        pass,
        format!("MDD(1,2,1) = {mdd}; TRN = {trn}; drag = {drag}; wealth lost = {lost:.6}"),
    )
}

fn backtest_invariants() -> Outcome {
    let ds = synthetic_dataset(3, 5);
    let cfg = BacktestConfig {
        window_weeks: 60,
        rebalance_weeks: vec![4, 13],
        ..BacktestConfig::default()
    };
    let (with, without) = match (
        run_backtest(&ds, &cfg),
        run_backtest(
            &ds,
            &BacktestConfig {
                cost_ratio: 0.0,
                ..cfg.clone()
            },
        ),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("backtest failed: {e}")),
    };
    let simplex_ok = with.wealth_paths.iter().all(|p| {
        p.weights
            .iter()
            .all(|w| w.iter().all(|x| *x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-10)
    });
    let cost_ok = with
        .wealth_paths
        .iter()
        .zip(&without.wealth_paths)
        .all(|(a, b)| {
            a.weights == b.weights && a.wealth.iter().zip(&b.wealth).all(|(x, y)| x <= y)
        });
    let scale_ok = with.wealth_paths.iter().all(|p| {
        let base = max_drawdown(&p.wealth);
        [0.01, 3.0, 1e4].iter().all(|k| {
            let scaled: Vec<f64> = p.wealth.iter().map(|w| w * k).collect();
            (max_drawdown(&scaled) - base).abs() <= 1e-12
        })
    });
    Outcome::new(
        simplex_ok && cost_ok && scale_ok,
        format!(
            "{} paths: weights on simplex {simplex_ok}; costs never add wealth {cost_ok}; \
             MDD scale invariant {scale_ok}",
            with.wealth_paths.len()
        ),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 7] = [
        ("closed-form agreement", closed_form_agreement),
        ("brute-force oracle", brute_force_oracle),
        ("limit ladders", limit_ladders),
        ("market-share experiment", table_one),
        ("gradient check", gradient_check),
        ("metric fixtures", metric_fixtures),
        ("backtest invariants", backtest_invariants),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let clock = Instant::now();
        let out = check();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} criterion {} {name}: {} [{:.1} s]",
            i + 1,
            out.detail,
            clock.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} of 7 criteria failed");
        std::process::exit(1);
    }
    println!("all 7 criteria passed");
}
