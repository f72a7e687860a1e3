//! The `simulate`, `estimate` and `backtest` commands behind the binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::backtest::{run_backtest, DatasetFiles, MarketDataset, PerfReport};
use crate::error::Error;
use crate::estimator::{
    self, solve_combined_linear, EstimationMode, EstimationProblem, EstimationResultDocument,
    LinearCase,
};
use crate::gmm::{MixtureDocument, PriorDocument};
use crate::io::{
    read_json, read_matrix, to_json_bytes, ModeChoice, ObservationDocument, OutputSet, RunConfig,
    RunManifest,
};
use crate::simulation::{run_experiment_grid, ExperimentTable};

/// Failure of a command, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, config or input data (exit 2).
    #[error("{0}")]
    Usage(String),
    /// The run itself failed (exit 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replications: Option<usize>,
    pub strict: bool,
    pub mode: Option<ModeChoice>,
}

struct Loaded {
    cfg: RunConfig,
    bytes: Vec<u8>,
    seed: u64,
    out: PathBuf,
}

fn load(config: &Path, ov: &Overrides) -> Result<Loaded, CliError> {
    let (mut cfg, bytes) = RunConfig::load(config).map_err(usage)?;
    if let Some(r) = ov.replications {
        cfg.replications = Some(r);
    }
    let seed = ov.seed.unwrap_or(cfg.seed);
    let out = ov
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("mixcast-out"));
    Ok(Loaded {
        cfg,
        bytes,
        seed,
        out,
    })
}

fn finish(
    set: OutputSet,
    command: &str,
    l: &Loaded,
    started: chrono::DateTime<chrono::Utc>,
    clock: Instant,
) -> Result<RunManifest, CliError> {
    set.finish(command, &l.bytes, l.seed, started, clock.elapsed())
        .map_err(runtime)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn experiment_csv(table: &ExperimentTable) -> Result<Vec<u8>, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "grid_value",
        "eta_B_tp",
        "eta_C_tp",
        "eta_F_tp",
        "eta_B_full",
        "eta_C_full",
        "eta_F_full",
        "se_B_tp",
        "se_C_tp",
        "se_F_tp",
        "se_B_full",
        "se_C_full",
        "se_F_full",
        "replications",
        "failed_replications",
        "nonconverged_dates",
    ];
    let err = |e: csv::Error| Error::invalid(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in &table.rows {
        let mut rec = vec![fmt_f64(r.grid_value)];
        for t in [
            r.eta_turning_points,
            r.eta_full,
            r.se_turning_points,
            r.se_full,
        ] {
            rec.extend(t.as_array().iter().map(|v| fmt_f64(*v)));
        }
        rec.push(r.replications.to_string());
        rec.push(r.failed_replications.to_string());
        rec.push(r.nonconverged_dates.to_string());
        w.write_record(&rec).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn cmd_simulate(config: &Path, ov: &Overrides) -> Result<RunManifest, CliError> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let l = load(config, ov)?;
    let sim = l.cfg.validate_simulate().map_err(usage)?;
    let reps = l.cfg.replications.unwrap_or(20);
    let grid = sim.grid();
    info!(
        "simulating {:?}: {} grid points x {reps} replications, seed {}",
        sim.experiment,
        grid.len(),
        l.seed
    );
    let table = run_experiment_grid(
        sim.experiment,
        &grid,
        reps,
        l.seed,
        &sim.states,
        &sim.scenario,
    )
    .map_err(runtime)?;
    let mut set = OutputSet::new(&l.out).map_err(runtime)?;
    set.write("experiment.csv", &experiment_csv(&table).map_err(runtime)?)
        .map_err(runtime)?;
    set.write(
        "trajectories.json",
        &to_json_bytes(&table).map_err(runtime)?,
    )
    .map_err(runtime)?;
    let failed: usize = table.rows.iter().map(|r| r.failed_replications).sum();
    let manifest = finish(set, "simulate", &l, started, clock)?;
    if failed > 0 {
        warn!("{failed} replications failed");
        if ov.strict {
            return Err(CliError::Runtime(format!(
                "{failed} replications failed (--strict)"
            )));
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecialCaseCheck {
    pub closed_form: EstimationResultDocument,
    pub numeric: EstimationResultDocument,
    /// Largest absolute weight difference.
    pub max_difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub results: Vec<EstimationResultDocument>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub special_case: Option<SpecialCaseCheck>,
}

pub fn cmd_estimate(config: &Path, ov: &Overrides) -> Result<RunManifest, CliError> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let l = load(config, ov)?;
    let sec = l.cfg.validate_estimate().map_err(usage)?;
    let mode = ov.mode.unwrap_or(sec.mode);
    let (model, _) = read_json::<MixtureDocument>(&sec.model)
        .and_then(|d| d.into_model())
        .map_err(usage)?;
    let prior = read_json::<PriorDocument>(&sec.prior)
        .and_then(|d| d.into_prior())
        .map_err(usage)?;
    let obs = read_json::<ObservationDocument>(&sec.observation)
        .and_then(|d| d.into_observation())
        .map_err(usage)?;
    let cov = match (&sec.covariance, sec.special_case) {
        (Some(p), true) => Some(read_matrix(p).map_err(usage)?),
        _ => None,
    };
    let mut problem =
        EstimationProblem::new(&model, &prior, &obs, EstimationMode::Backward).map_err(usage)?;
    if let Some(c) = &cov {
        problem = problem.with_fixed_covariance(c).map_err(usage)?;
    }

    let mut results = Vec::new();
    for m in mode.modes() {
        let r = estimator::solve(&problem.with_mode(m)).map_err(runtime)?;
        if !r.converged {
            warn!("{} estimate hit the iteration cap", m.as_str());
        }
        results.push(EstimationResultDocument::from(&r));
    }
    let special_case = match &cov {
        None => None,
        Some(c) => {
            let case = LinearCase::new(&model, c, &obs.params, &obs.x_u_star).map_err(usage)?;
            let closed = solve_combined_linear(&case, &prior, &obs.x_m, &obs.params.omega())
                .map_err(runtime)?;
            let numeric =
                estimator::solve(&problem.with_mode(EstimationMode::Combined)).map_err(runtime)?;
            let max_difference = (closed.lambda.full() - numeric.lambda.full()).amax();
            Some(SpecialCaseCheck {
                closed_form: (&closed).into(),
                numeric: (&numeric).into(),
                max_difference,
            })
        }
    };
    let doc = EstimateOutput {
        results,
        special_case,
    };
    let mut set = OutputSet::new(&l.out).map_err(runtime)?;
    set.write("estimate.json", &to_json_bytes(&doc).map_err(runtime)?)
        .map_err(runtime)?;
    finish(set, "estimate", &l, started, clock)
}

pub fn performance_csv(rep: &PerfReport) -> Result<Vec<u8>, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(e.to_string());
    w.write_record([
        "strategy",
        "rebalance_weeks",
        "risk_multiplier",
        "sr",
        "trn",
        "mdd",
    ])
    .map_err(err)?;
    let sr = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in &rep.rows {
        w.write_record([
            r.strategy.as_str().to_string(),
            r.rebalance_weeks.to_string(),
            fmt_f64(r.risk_multiplier),
            sr(r.sr),
            fmt_f64(r.trn),
            fmt_f64(r.mdd),
        ])
        .map_err(err)?;
    }
    for a in &rep.averages {
        w.write_record([
            a.strategy.as_str().to_string(),
            "average".to_string(),
            fmt_f64(a.risk_multiplier),
            sr(a.sr),
            fmt_f64(a.trn),
            fmt_f64(a.mdd),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn cmd_backtest(config: &Path, ov: &Overrides) -> Result<RunManifest, CliError> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let l = load(config, ov)?;
    let sec = l.cfg.validate_backtest().map_err(usage)?;
    let ds = MarketDataset::load(&DatasetFiles {
        returns: &sec.returns,
        market_caps: &sec.market_caps,
        vol_index: &sec.vol_index,
        risk_free: &sec.risk_free,
    })
    .map_err(usage)?;
    info!(
        "backtesting {} assets over {} weeks",
        ds.n_assets(),
        ds.len()
    );
    let rep = run_backtest(&ds, &sec.params).map_err(runtime)?;
    for f in &rep.flags {
        warn!(
            "{} ({}-week rebalance): {}",
            f.date, f.rebalance_weeks, f.message
        );
    }
    let mut set = OutputSet::new(&l.out).map_err(runtime)?;
    set.write("performance.csv", &performance_csv(&rep).map_err(runtime)?)
        .map_err(runtime)?;
    set.write("report.json", &to_json_bytes(&rep).map_err(runtime)?)
        .map_err(runtime)?;
    finish(set, "backtest", &l, started, clock)
}
