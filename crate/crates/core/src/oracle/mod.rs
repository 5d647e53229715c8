//! Ground truth for validating the estimators: quadrature for `D <= 3` and
//! HMC beyond that.

mod divergence;
mod hmc;
mod is_variance;
mod quadrature;

pub use divergence::{
    quad_chi_central_moment, quad_chi_divergence, quad_cubo, quad_elbo, quad_evidence, quad_f_divergence,
    quad_kl, quad_posterior, DivergenceValue, KlDirection,
};
pub use hmc::{hmc_sample, HmcConfig};
pub use is_variance::{is_variance, IsVariance};
pub use quadrature::{
    laplace_pilot, GaussianDensity, LogDensity, Posterior, Quadrature, QuadratureGrid, QuadratureRule, MAX_QUAD_DIM,
    MIN_NODES,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    #[default]
    Quadrature,
    Hmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub kind: String,
    pub order: f64,
    pub value: DivergenceValue,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleDiagnostics {
    pub acceptance_rate: Option<f64>,
    pub posterior_mean_se: Option<Vec<f64>>,
    pub posterior_sd_se: Option<Vec<f64>>,
    pub draws: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub method: OracleMethod,
    pub log_evidence: Option<f64>,
    pub posterior_mean: Vec<f64>,
    pub posterior_sd: Vec<f64>,
    pub divergences: Vec<DivergenceRecord>,
    pub diagnostics: OracleDiagnostics,
}

/// On-disk cache of oracle results keyed by a hash of their inputs.
#[derive(Debug, Clone)]
pub struct OracleCache {
    dir: PathBuf,
}

impl OracleCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Hex SHA-256 of the JSON encoding of `key`.
    pub fn key<K: Serialize>(key: &K) -> Result<String> {
        let bytes = serde_json::to_vec(key)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<OracleResult>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
    }

    pub fn put(&self, key: &str, value: &OracleResult) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        fs::write(self.path(key), serde_json::to_vec_pretty(value)?)?;
        Ok(())
    }

    pub fn get_or_compute<K: Serialize>(
        &self,
        key: &K,
        compute: impl FnOnce() -> Result<OracleResult>,
    ) -> Result<OracleResult> {
        let k = Self::key(key)?;
        if let Some(hit) = self.get(&k)? {
            return Ok(hit);
        }
        let value = compute()?;
        self.put(&k, &value)?;
        Ok(value)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = OracleCache::new(tmp.path().join("oracle"));
        let key = ("conjugate", 3, vec![0.5, 1.0]);
        let mut calls = 0;
        let value = OracleResult {
            log_evidence: Some(-1.25),
            posterior_mean: vec![0.1],
            posterior_sd: vec![0.9],
            ..OracleResult::default()
        };
        let a = cache
            .get_or_compute(&key, || {
                calls += 1;
                Ok(value.clone())
            })
            .unwrap();
        let b = cache
            .get_or_compute(&key, || {
                calls += 1;
                Ok(OracleResult::default())
            })
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(calls, 1);
        assert_ne!(OracleCache::key(&key).unwrap(), OracleCache::key(&("conjugate", 4)).unwrap());
    }

    #[test]
    fn divergence_value_json() {
        let r = DivergenceRecord {
            kind: "chi".into(),
            order: 2.0,
            value: DivergenceValue::Infinite,
        };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"kind":"chi","order":2.0,"value":"infinite"}"#);
    }
}
