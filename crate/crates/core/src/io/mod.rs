//! Files on disk: input documents, atomic output writes and the run manifest.

mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{BacktestSection, EstimateSection, ModeChoice, RunConfig, SimulateSection};

use crate::equilibrium::{EquilibriumObservation, MarketParams};
use crate::error::{Error, Result};
use crate::linalg;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temp file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Observed market portfolio, the less-informed holding and the market
/// parameters, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationDocument {
    pub x_m: Vec<f64>,
    pub x_u_star: Vec<f64>,
    pub params: MarketParams,
}

impl ObservationDocument {
    pub fn from_observation(obs: &EquilibriumObservation) -> Self {
        Self {
            x_m: obs.x_m.iter().copied().collect(),
            x_u_star: obs.x_u_star.iter().copied().collect(),
            params: obs.params.clone(),
        }
    }

    pub fn into_observation(self) -> Result<EquilibriumObservation> {
        EquilibriumObservation::new(
            DVector::from_vec(self.x_m),
            DVector::from_vec(self.x_u_star),
            self.params,
        )
    }
}

/// A square matrix stored as a list of rows.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = read_json(path)?;
    linalg::matrix_from_rows(&rows, "covariance").map_err(|e| Error::parse(path, e))
}

/// One record per run, written after every primary output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub started_at: String,
    pub wall_clock_seconds: f64,
    /// File name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

/// Collects outputs of one command and writes the manifest last.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        atomic_write(&path, bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn finish(
        self,
        command: &str,
        config_bytes: &[u8],
        seed: u64,
        started_at: chrono::DateTime<chrono::Utc>,
        elapsed: std::time::Duration,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_bytes),
            seed,
            started_at: started_at.to_rfc3339(),
            wall_clock_seconds: elapsed.as_secs_f64(),
            outputs: self.outputs,
        };
        atomic_write(&self.dir.join("manifest.json"), &to_json_bytes(&manifest)?)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_known_input() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn manifest_records_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::new(dir.path()).unwrap();
        out.write("x.csv", b"a,b\n").unwrap();
        let m = out
            .finish(
                "simulate",
                b"seed = 1\n",
                1,
                chrono::Utc::now(),
                std::time::Duration::from_millis(5),
            )
            .unwrap();
        assert_eq!(m.outputs["x.csv"], sha256_hex(b"a,b\n"));
        assert_eq!(m.config_sha256, sha256_hex(b"seed = 1\n"));
        let back: RunManifest = read_json(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn observation_document_round_trip() {
        let params = MarketParams::uniform_noise(0.4, 0.5, 0.1, 0.5, 2, 2.5, 2.5).unwrap();
        let obs = EquilibriumObservation::new(
            DVector::from_column_slice(&[0.3, 0.7]),
            DVector::from_column_slice(&[0.2, 0.1]),
            params,
        )
        .unwrap();
        let doc = ObservationDocument::from_observation(&obs);
        let text = serde_json::to_string(&doc).unwrap();
        let back: ObservationDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_observation().unwrap(), obs);
    }
}
