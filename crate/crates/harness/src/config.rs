//! Linear-Gaussian fixtures read from TOML.
//!
//! ```toml
//! beta = [1.0, 1.0, 1.0]
//! mu = [0.0, 0.0, 0.0]          # optional, zero by default
//! gamma = [[1.0, 0.5, 0.0],     # either an explicit covariance
//!          [0.5, 1.0, 0.2],
//!          [0.0, 0.2, 1.0]]
//! # seed = 2024                 # or A^T A from a seeded Gaussian A
//! ```
//!
//! `beta` may be omitted when `p` and `seed` are given; it then defaults to
//! all ones.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;
use shapley_core::oracle::random_spd_covariance;
use shapley_core::rng::{stream, Domain};
use shapley_core::LinearGaussianModel;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Model(#[from] shapley_core::Error),
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    pub p: Option<usize>,
    pub beta: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub gamma: Option<Vec<Vec<f64>>>,
    pub seed: Option<u64>,
}

impl GaussianConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// A seeded fixture with unit coefficients.
    pub fn seeded(p: usize, seed: u64) -> Self {
        GaussianConfig {
            p: Some(p),
            seed: Some(seed),
            ..Default::default()
        }
    }

    pub fn dim(&self) -> Result<usize, ConfigError> {
        let candidates = [
            self.p,
            self.beta.as_ref().map(Vec::len),
            self.mu.as_ref().map(Vec::len),
            self.gamma.as_ref().map(Vec::len),
        ];
        let mut found = candidates.iter().flatten();
        let p = *found
            .next()
            .ok_or_else(|| ConfigError::Invalid("cannot infer the dimension: give p or beta".into()))?;
        if found.any(|&q| q != p) {
            return Err(ConfigError::Invalid(format!(
                "inconsistent dimensions among p, beta, mu and gamma: {candidates:?}"
            )));
        }
        if p == 0 {
            return Err(ConfigError::Invalid("dimension must be positive".into()));
        }
        Ok(p)
    }

    pub fn build(&self) -> Result<LinearGaussianModel, ConfigError> {
        let p = self.dim()?;
        let gamma = match (&self.gamma, self.seed) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid("give either gamma or seed, not both".into()))
            }
            (None, None) => return Err(ConfigError::Invalid("give gamma or seed".into())),
            (Some(rows), None) => {
                if let Some(r) = rows.iter().position(|r| r.len() != p) {
                    return Err(ConfigError::Invalid(format!(
                        "gamma row {} has {} entries, expected {p}",
                        r + 1,
                        rows[r].len()
                    )));
                }
                DMatrix::from_row_iterator(p, p, rows.iter().flatten().copied())
            }
            (None, Some(seed)) => random_spd_covariance(p, &mut stream(seed, Domain::Sample, 0, 0)),
        };
        let beta = self.beta.clone().unwrap_or_else(|| vec![1.0; p]);
        let mu = self.mu.clone().unwrap_or_else(|| vec![0.0; p]);
        Ok(LinearGaussianModel::new(beta, mu, gamma)?)
    }
}

pub fn load_gaussian(path: &Path) -> Result<LinearGaussianModel, ConfigError> {
    GaussianConfig::load(path)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_covariance() {
        let c = GaussianConfig::from_toml(
            "beta = [1.0, 2.0]\nmu = [0.5, 0.0]\ngamma = [[1.0, 0.5], [0.5, 2.0]]\n",
        )
        .unwrap();
        let m = c.build().unwrap();
        assert_eq!(m.p(), 2);
        assert_eq!(m.gamma()[(1, 0)], 0.5);
        assert!((m.var_y() - (1.0 + 2.0 + 8.0)).abs() < 1e-12);
    }

    #[test]
    fn seeded_covariance_is_reproducible() {
        let a = GaussianConfig::seeded(4, 9).build().unwrap();
        let b = GaussianConfig::from_toml("p = 4\nseed = 9\n").unwrap().build().unwrap();
        assert_eq!(a.gamma(), b.gamma());
        assert_eq!(a.beta(), &[1.0; 4]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = [
            "beta = [1.0, 1.0]\ngamma = [[1.0, 0.0], [0.0]]\n",
            "beta = [1.0, 1.0]\np = 3\nseed = 1\n",
            "beta = [1.0]\n",
            "p = 2\nseed = 1\ngamma = [[1.0, 0.0], [0.0, 1.0]]\n",
        ];
        for text in bad {
            let c = GaussianConfig::from_toml(text).unwrap();
            assert!(matches!(c.build(), Err(ConfigError::Invalid(_))), "{text}");
        }
        assert!(GaussianConfig::from_toml("beta = [1.0]\nsigma = 2\n").is_err());
    }

    #[test]
    fn bundled_fixtures_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        assert_eq!(load_gaussian(&dir.join("p3.toml")).unwrap().p(), 3);
        assert_eq!(load_gaussian(&dir.join("p10.toml")).unwrap().p(), 10);
    }
}
