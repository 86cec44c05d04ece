//! Run configuration: a flat TOML file whose keys command-line flags override.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actuarial::{default_rates, parse_rates, ENTRY_AGES, MATURITIES};
use crate::curve::{Sex, DEFAULT_RADIX};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_TEST_LEN;
use crate::factor::Selector;
use crate::transforms::Transform;
use crate::uncertainty::DEFAULT_ALPHAS;

pub const DATA_ENV: &str = "CODA_MORTALITY_DATA";
pub const DEFAULT_HORIZON: usize = 50;
pub const DEFAULT_SEED: u64 = 20250518;

/// Settings for every command. Unset list fields fall back to per-command
/// defaults: backtests cover both transforms and both selectors, forecasts
/// use the CDF transform with six components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    /// Empty means every population found in `data_dir`.
    pub countries: Vec<String>,
    pub sexes: Vec<Sex>,
    pub transforms: Vec<Transform>,
    pub selectors: Vec<Selector>,
    pub test_len: usize,
    pub alphas: Vec<f64>,
    pub horizon: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub radix: f64,
    /// Overrides the per-country table for every population.
    pub rate: Option<f64>,
    pub rates: BTreeMap<String, f64>,
    pub entry_ages: Vec<usize>,
    pub maturities: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            countries: Vec::new(),
            sexes: vec![Sex::Female, Sex::Male],
            transforms: Vec::new(),
            selectors: Vec::new(),
            test_len: DEFAULT_TEST_LEN,
            alphas: DEFAULT_ALPHAS.to_vec(),
            horizon: DEFAULT_HORIZON,
            out_dir: PathBuf::from("out"),
            seed: DEFAULT_SEED,
            radix: DEFAULT_RADIX,
            rate: None,
            rates: default_rates(),
            entry_ages: ENTRY_AGES.to_vec(),
            maturities: MATURITIES.to_vec(),
        }
    }
}

impl RunConfig {
    /// Parses a config file; `rates` entries are merged over the bundled table.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = default_rates();
        merged.append(&mut cfg.rates);
        cfg.rates = merged;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Replaces the rate table with the `[rates]` table of `path`.
    pub fn load_rates(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.rates = parse_rates(&text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.test_len == 0 {
            return bad("test_len must be at least 1".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("alpha {a} outside (0, 1)"));
        }
        if let Some(r) = self.rate.filter(|r| !(*r >= 0.0 && r.is_finite())) {
            return bad(format!("rate {r} must be non-negative"));
        }
        if let Some((c, r)) = self.rates.iter().find(|(_, r)| !(**r >= 0.0 && r.is_finite())) {
            return bad(format!("rate for {c} must be non-negative, got {r}"));
        }
        if !(self.radix > 0.0 && self.radix.is_finite()) {
            return bad(format!("radix must be positive, got {}", self.radix));
        }
        if self.sexes.is_empty() {
            return bad("no sexes selected".into());
        }
        Ok(())
    }

    /// Data directory from the config, falling back to the environment.
    pub fn resolved_data_dir(&self) -> Result<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
            .ok_or_else(|| Error::Config(format!("no data directory: pass --data-dir or set {DATA_ENV}")))
    }

    pub fn backtest_transforms(&self) -> Vec<Transform> {
        if self.transforms.is_empty() {
            Transform::ALL.to_vec()
        } else {
            self.transforms.clone()
        }
    }

    pub fn backtest_selectors(&self) -> Vec<Selector> {
        if self.selectors.is_empty() {
            Selector::PAIRED.to_vec()
        } else {
            self.selectors.clone()
        }
    }

    /// The single (transform, selector) pair forecasts run with.
    pub fn forecast_method(&self) -> Result<(Transform, Selector)> {
        let pick = |n: usize, what: &str| {
            if n > 1 {
                Err(Error::Config(format!("forecasts take a single {what}, {n} given")))
            } else {
                Ok(())
            }
        };
        pick(self.transforms.len(), "transform")?;
        pick(self.selectors.len(), "selector")?;
        Ok((
            self.transforms.first().copied().unwrap_or(Transform::Cdf),
            self.selectors.first().copied().unwrap_or(Selector::Fixed(6)),
        ))
    }

    pub fn rate_for(&self, country: &str) -> Result<f64> {
        self.rate
            .or_else(|| self.rates.get(country).copied())
            .ok_or_else(|| Error::Config(format!("no discount rate for {country}; pass --rate or add it to the rates table")))
    }

    /// SHA-256 of the resolved settings and the command they drive. The
    /// output directory is left out so relocated reruns hash the same.
    pub fn hash(&self, command: &str) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let body = toml::to_string(&canonical).expect("config serialises");
        let digest = Sha256::digest(format!("command = \"{command}\"\n{body}").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
