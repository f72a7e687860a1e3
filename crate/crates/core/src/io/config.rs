//! TOML run configuration. Paths are relative to the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::BacktestConfig;
use crate::error::{Error, Result};
use crate::estimator::EstimationMode;
use crate::simulation::{default_grid, Experiment, FactorSpec, GridPoint, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    Backward,
    Forward,
    Combined,
    All,
}

impl ModeChoice {
    pub fn modes(&self) -> Vec<EstimationMode> {
        match self {
            Self::Backward => vec![EstimationMode::Backward],
            Self::Forward => vec![EstimationMode::Forward],
            Self::Combined => vec![EstimationMode::Combined],
            Self::All => EstimationMode::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub experiment: Experiment,
    /// Defaults to the experiment's standard grid.
    pub grid: Option<Vec<GridPoint>>,
    #[serde(default)]
    pub scenario: ScenarioSpec,
    #[serde(default = "FactorSpec::default_states")]
    pub states: Vec<FactorSpec>,
}

impl SimulateSection {
    pub fn grid(&self) -> Vec<GridPoint> {
        self.grid
            .clone()
            .unwrap_or_else(|| default_grid(self.experiment))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    /// Mixture document (components and weights; the weights are ignored).
    pub model: PathBuf,
    pub prior: PathBuf,
    pub observation: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: ModeChoice,
    /// Both rational investors share the covariance in `covariance`; the
    /// closed-form combined estimate is cross-checked against the numeric one.
    #[serde(default)]
    pub special_case: bool,
    pub covariance: Option<PathBuf>,
}

fn default_mode() -> ModeChoice {
    ModeChoice::All
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    pub returns: PathBuf,
    pub market_caps: PathBuf,
    pub vol_index: PathBuf,
    pub risk_free: PathBuf,
    #[serde(default)]
    pub params: BacktestConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub replications: Option<usize>,
    pub simulate: Option<SimulateSection>,
    pub estimate: Option<EstimateSection>,
    pub backtest: Option<BacktestSection>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn require_file(what: &str, p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(Error::invalid(format!(
            "{what} file {} does not exist",
            p.display()
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(path, e))
    }

    /// Reads the file, resolves relative paths against its directory and
    /// checks that every referenced input exists. Returns the raw bytes too.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::parse(path, e))?;
        let mut cfg = Self::parse(text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok((cfg, bytes))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(out) = &mut self.out {
            resolve(base, out);
        }
        if let Some(e) = &mut self.estimate {
            resolve(base, &mut e.model);
            resolve(base, &mut e.prior);
            resolve(base, &mut e.observation);
            if let Some(c) = &mut e.covariance {
                resolve(base, c);
            }
        }
        if let Some(b) = &mut self.backtest {
            resolve(base, &mut b.returns);
            resolve(base, &mut b.market_caps);
            resolve(base, &mut b.vol_index);
            resolve(base, &mut b.risk_free);
        }
    }

    pub fn validate_simulate(&self) -> Result<&SimulateSection> {
        let s = self
            .simulate
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no [simulate] section"))?;
        if s.grid().is_empty() {
            return Err(Error::invalid("experiment grid is empty"));
        }
        if self.replications == Some(0) {
            return Err(Error::invalid("replications must be at least 1"));
        }
        for st in &s.states {
            st.validate()?;
        }
        s.scenario.validate(s.states.len())?;
        let base = crate::simulation::base_market(s.scenario.n_assets)?;
        for p in s.grid() {
            crate::simulation::market_for(s.experiment, p, &base)?;
        }
        Ok(s)
    }

    pub fn validate_estimate(&self) -> Result<&EstimateSection> {
        let e = self
            .estimate
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no [estimate] section"))?;
        require_file("model", &e.model)?;
        require_file("prior", &e.prior)?;
        require_file("observation", &e.observation)?;
        match (&e.covariance, e.special_case) {
            (Some(c), _) => require_file("covariance", c)?,
            (None, true) => {
                return Err(Error::invalid("special_case needs a covariance file"));
            }
            (None, false) => {}
        }
        Ok(e)
    }

    pub fn validate_backtest(&self) -> Result<&BacktestSection> {
        let b = self
            .backtest
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no [backtest] section"))?;
        require_file("returns", &b.returns)?;
        require_file("market caps", &b.market_caps)?;
        require_file("vol index", &b.vol_index)?;
        require_file("risk-free", &b.risk_free)?;
        b.params.validate()?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_sections() {
        let text = r#"
seed = 11
replications = 3

[simulate]
experiment = "market_shares"
grid = [[0.4, 0.5, 0.1], [0.8, 0.1, 0.1]]

[estimate]
model = "m.json"
prior = "p.json"
observation = "o.json"
mode = "combined"

[backtest]
returns = "r.csv"
market_caps = "c.csv"
vol_index = "v.csv"
risk_free = "f.csv"

[backtest.params]
window_weeks = 80
rebalance_weeks = [4]
"#;
        let mut cfg = RunConfig::parse(text, Path::new("x.toml")).unwrap();
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.seed, 11);
        let s = cfg.simulate.as_ref().unwrap();
        assert_eq!(s.grid().len(), 2);
        assert_eq!(s.scenario, ScenarioSpec::default());
        assert_eq!(cfg.estimate.as_ref().unwrap().mode, ModeChoice::Combined);
        assert_eq!(
            cfg.estimate.as_ref().unwrap().model,
            PathBuf::from("/base/m.json")
        );
        let b = cfg.backtest.as_ref().unwrap();
        assert_eq!(b.params.window_weeks, 80);
        assert_eq!(b.params.cost_ratio, 0.005);
        assert!(cfg.validate_simulate().is_ok());
        let err = cfg.validate_backtest().unwrap_err().to_string();
        assert!(err.contains("r.csv"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_grids() {
        assert!(RunConfig::parse("sede = 1\n", Path::new("x")).is_err());
        let cfg = RunConfig::parse(
            "[simulate]\nexperiment = \"noise_intensity\"\ngrid = []\n",
            Path::new("x"),
        )
        .unwrap();
        assert!(cfg.validate_simulate().is_err());
        let cfg = RunConfig::parse(
            "[simulate]\nexperiment = \"noise_intensity\"\ngrid = [[0.4, 0.5, 0.1]]\n",
            Path::new("x"),
        )
        .unwrap();
        assert!(cfg.validate_simulate().is_err());
        assert!(cfg.validate_estimate().is_err());
    }

    #[test]
    fn default_grids() {
        let cfg = RunConfig::parse(
            "[simulate]\nexperiment = \"market_shares\"\n",
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(cfg.validate_simulate().unwrap().grid().len(), 10);
        assert_eq!(ModeChoice::All.modes().len(), 3);
    }
}
