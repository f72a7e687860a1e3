//! Weekly market data: excess returns, market caps, a volatility index and the
//! risk-free rate, inner-joined on date.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MarketDataset {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// `T x n` weekly excess returns.
    pub excess_returns: DMatrix<f64>,
    /// `T x n` market capitalizations.
    pub market_caps: DMatrix<f64>,
    pub vol_index: DVector<f64>,
    /// Annualized risk-free rate per date.
    pub r_f: DVector<f64>,
}

/// Paths of the four input tables.
#[derive(Debug, Clone)]
pub struct DatasetFiles<'a> {
    pub returns: &'a Path,
    pub market_caps: &'a Path,
    pub vol_index: &'a Path,
    pub risk_free: &'a Path,
}

struct Table {
    columns: Vec<String>,
    rows: BTreeMap<NaiveDate, Vec<Option<f64>>>,
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

fn read_table(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.len() < 2 {
        return Err(Error::parse(
            path,
            "expected a date column and at least one value column",
        ));
    }
    let columns: Vec<String> = headers
        .iter()
        .skip(1)
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let date = parse_date(&rec[0]).ok_or_else(|| {
            Error::parse(path, format!("row {}: bad date {:?}", line + 2, &rec[0]))
        })?;
        let values: Vec<Option<f64>> = (1..=columns.len())
            .map(|i| {
                rec.get(i)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        if rows.insert(date, values).is_some() {
            return Err(Error::parse(path, format!("duplicate date {date}")));
        }
    }
    Ok(Table { columns, rows })
}

impl MarketDataset {
    /// Reads and joins the four tables. Dates present in every table are
    /// kept; rows with any missing or non-numeric value are dropped and
    /// counted in the log.
    pub fn load(files: &DatasetFiles<'_>) -> Result<Self> {
        let returns = read_table(files.returns)?;
        let caps = read_table(files.market_caps)?;
        let vol = read_table(files.vol_index)?;
        let rf = read_table(files.risk_free)?;
        if caps.columns != returns.columns {
            return Err(Error::parse(
                files.market_caps,
                "asset columns differ from the returns file",
            ));
        }
        let n = returns.columns.len();
        let mut dates = Vec::new();
        let mut ret_rows = Vec::new();
        let mut cap_rows = Vec::new();
        let mut vol_vals = Vec::new();
        let mut rf_vals = Vec::new();
        let mut dropped = 0usize;
        for (date, r) in &returns.rows {
            let (Some(c), Some(v), Some(f)) =
                (caps.rows.get(date), vol.rows.get(date), rf.rows.get(date))
            else {
                dropped += 1;
                continue;
            };
            let r: Option<Vec<f64>> = r.iter().copied().collect();
            let c: Option<Vec<f64>> = c.iter().copied().collect();
            match (
                r,
                c,
                v.first().copied().flatten(),
                f.first().copied().flatten(),
            ) {
                (Some(r), Some(c), Some(v), Some(f)) => {
                    dates.push(*date);
                    ret_rows.extend(r);
                    cap_rows.extend(c);
                    vol_vals.push(v);
                    rf_vals.push(f);
                }
                _ => dropped += 1,
            }
        }
        if dropped > 0 {
            log::info!("dropped {dropped} dates with missing values or absent from some input");
        }
        let t = dates.len();
        let ds = Self {
            dates,
            assets: returns.columns,
            excess_returns: DMatrix::from_row_slice(t, n, &ret_rows),
            market_caps: DMatrix::from_row_slice(t, n, &cap_rows),
            vol_index: DVector::from_vec(vol_vals),
            r_f: DVector::from_vec(rf_vals),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.dates.len();
        let n = self.assets.len();
        if t == 0 || n == 0 {
            return Err(Error::InsufficientData(
                "dataset has no complete rows".into(),
            ));
        }
        if self.excess_returns.shape() != (t, n) || self.market_caps.shape() != (t, n) {
            return Err(Error::invalid(
                "return or cap matrix does not match dates and assets",
            ));
        }
        if self.vol_index.len() != t || self.r_f.len() != t {
            return Err(Error::invalid(
                "vol index or risk-free series length differs from dates",
            ));
        }
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("dates must be strictly increasing"));
        }
        if self.vol_index.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("volatility index must be positive"));
        }
        if self.market_caps.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("market caps must be nonnegative"));
        }
        if self.market_caps.row_iter().any(|r| !(r.sum() > 0.0)) {
            return Err(Error::invalid(
                "every date needs a positive total market cap",
            ));
        }
        if self
            .excess_returns
            .iter()
            .chain(self.r_f.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("returns and rates must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Cap weights at row `t`, summing to one.
    pub fn market_weights(&self, t: usize) -> DVector<f64> {
        let row = self.market_caps.row(t).transpose();
        let s = row.sum();
        row / s
    }

    /// Weekly risk-free return at row `t`.
    pub fn weekly_rf(&self, t: usize) -> f64 {
        self.r_f[t] / 52.0
    }

    /// Index level after each week of cap-weighted excess returns, starting
    /// at 1 before the first week (length `T + 1`).
    pub fn market_index(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() + 1);
        out.push(1.0);
        let mut level = 1.0;
        for t in 0..self.len() {
            let w = if t == 0 {
                self.market_weights(0)
            } else {
                self.market_weights(t - 1)
            };
            level *= 1.0 + w.dot(&self.excess_returns.row(t).transpose());
            out.push(level);
        }
        out
    }

    /// Writes the four tables as CSV files into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, header: Vec<String>, rows: Vec<Vec<f64>>| -> Result<()> {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
            w.write_record(&header)
                .map_err(|e| Error::parse(&path, e))?;
            for (d, row) in self.dates.iter().zip(rows) {
                let mut rec = vec![d.format("%Y-%m-%d").to_string()];
                rec.extend(row.iter().map(|v| format!("{v:e}")));
                w.write_record(&rec).map_err(|e| Error::parse(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        };
        let mut header = vec!["date".to_string()];
        header.extend(self.assets.iter().cloned());
        let rows = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        write("returns.csv", header.clone(), rows(&self.excess_returns))?;
        write("market_caps.csv", header, rows(&self.market_caps))?;
        write(
            "vol_index.csv",
            vec!["date".into(), "vol".into()],
            self.vol_index.iter().map(|v| vec![*v]).collect(),
        )?;
        write(
            "risk_free.csv",
            vec!["date".into(), "rate".into()],
            self.r_f.iter().map(|v| vec![*v]).collect(),
        )
    }
}

/// Weekly regime of the synthetic generator.
#[derive(Debug, Clone, Copy)]
struct Regime {
    mean: f64,
    vol: f64,
    weeks: usize,
}

/// A synthetic weekly dataset with a bull run, a crash and a flat stretch
/// followed by a mixed investment period. Used by tests and examples.
pub fn synthetic_dataset(n: usize, seed: u64) -> MarketDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regimes = [
        Regime {
            mean: 0.012,
            vol: 0.02,
            weeks: 70,
        },
        Regime {
            mean: -0.03,
            vol: 0.035,
            weeks: 45,
        },
        Regime {
            mean: 0.0,
            vol: 0.015,
            weeks: 60,
        },
        Regime {
            mean: 0.006,
            vol: 0.02,
            weeks: 60,
        },
        Regime {
            mean: -0.004,
            vol: 0.03,
            weeks: 40,
        },
        Regime {
            mean: 0.002,
            vol: 0.018,
            weeks: 80,
        },
    ];
    let betas: Vec<f64> = (0..n).map(|_| 0.7 + 0.6 * rng.random::<f64>()).collect();
    let idio: Vec<f64> = (0..n).map(|_| 0.005 + 0.01 * rng.random::<f64>()).collect();
    let t: usize = regimes.iter().map(|r| r.weeks).sum();
    let mut ret = DMatrix::zeros(t, n);
    let mut caps = DMatrix::zeros(t, n);
    let mut vol = DVector::zeros(t);
    let mut rf = DVector::zeros(t);
    let mut cap: Vec<f64> = (0..n).map(|_| 50.0 + 100.0 * rng.random::<f64>()).collect();
    let mut row = 0;
    for r in regimes {
        for _ in 0..r.weeks {
            let z: f64 = rng.sample(StandardNormal);
            let market = r.mean + r.vol * z;
            for i in 0..n {
                let e: f64 = rng.sample(StandardNormal);
                let x = betas[i] * market + idio[i] * e;
                ret[(row, i)] = x;
                cap[i] *= 1.0 + x;
                caps[(row, i)] = cap[i];
            }
            let shock: f64 = rng.sample(StandardNormal);
            vol[row] = (100.0 * r.vol * (1.0 + 0.1 * shock)).max(1.0);
            rf[row] = 0.02;
            row += 1;
        }
    }
    let start = NaiveDate::from_ymd_opt(2005, 1, 7).expect("valid date");
    let dates = (0..t)
        .map(|k| start + chrono::Duration::weeks(k as i64))
        .collect();
    MarketDataset {
        dates,
        assets: (0..n).map(|i| format!("S{}", i + 1)).collect(),
        excess_returns: ret,
        market_caps: caps,
        vol_index: vol,
        r_f: rf,
    }
}
