//! Run configuration: a TOML file with sections, overridable from the
//! environment.
//!
//! ```toml
//! seed = 0
//! out = "runs"
//! methods = ["full", "double_hash"]
//! budgets = [0.5, 0.1, 0.01, 0.001]
//! jobs = 1
//!
//! [data]
//! source = "synthetic"        # or "csv" / "file"
//!
//! [data.synthetic]
//! samples = 100000
//!
//! [train]
//! lr = 0.001
//!
//! [solver]
//! robe_chunk = 4
//!
//! [posttrain]
//! methods = ["pq", "svd"]
//! rows = 10000
//! ```
//!
//! Every key can be overridden by `EMBCOMP_<PATH>` where `PATH` joins the
//! section path and key with `__`, e.g. `EMBCOMP_TRAIN__LR=0.01`,
//! `EMBCOMP_DATA__SYNTHETIC__SAMPLES=5000` or `EMBCOMP_SEED=3`. Values are
//! parsed as TOML literals and fall back to plain strings.

use std::path::{Path, PathBuf};

use embcomp::budget::{Method, SolverConfig};
use embcomp::data::{CsvSchema, SplitFractions};
use embcomp::{Error, Result, SyntheticSpec, TrainConfig};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "EMBCOMP_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialisation, training order and codec fitting.
    pub seed: u64,
    pub out: PathBuf,
    /// Training methods benchmarked by `bench-train`.
    pub methods: Vec<String>,
    /// Budgets as fractions of the uncompressed table.
    pub budgets: Vec<f64>,
    /// Grid cells run concurrently.
    pub jobs: usize,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    pub posttrain: PosttrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            methods: Method::TRAINING.iter().map(|m| m.to_string()).collect(),
            budgets: vec![0.5, 0.1, 0.01, 0.001],
            jobs: 1,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            posttrain: PosttrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
    /// A dataset checkpoint written by `gen-data`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
    /// Dataset checkpoint read when `source = "file"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            synthetic: SyntheticSpec::default(),
            csv: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(flatten)]
    pub schema: CsvSchema,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosttrainConfig {
    /// Codecs benchmarked by `bench-posttrain`.
    pub methods: Vec<String>,
    /// Matrix to compress; a seeded Gaussian matrix when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,
    pub rows: usize,
    pub dim: usize,
    pub queries: usize,
    pub k: usize,
    /// Rows decoded per timed batch.
    pub latency_batch: usize,
    pub repeats: usize,
}

impl Default for PosttrainConfig {
    fn default() -> Self {
        Self {
            methods: Method::POST_TRAINING.iter().map(|m| m.to_string()).collect(),
            matrix: None,
            rows: 10_000,
            dim: 64,
            queries: 100,
            k: 10,
            latency_batch: 1024,
            repeats: 5,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults when `None`) and applies environment
    /// overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    pub fn from_toml_with_env(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (key, value) in overrides {
            apply_override(&mut table, &key[ENV_PREFIX.len()..], &value)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Checks the parts every command relies on.
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(Error::Config("budget list is empty".into()));
        }
        if let Some(b) = self.budgets.iter().find(|b| !(b.is_finite() && **b > 0.0 && **b <= 1.0)) {
            return Err(Error::Config(format!("budget {b} must be in (0, 1]")));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.train.validate()?;
        if self.data.source == DataSource::Synthetic {
            self.data.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn training_methods(&self) -> Result<Vec<Method>> {
        parse_methods(&self.methods, Method::parse_training)
    }

    pub fn posttrain_methods(&self) -> Result<Vec<Method>> {
        parse_methods(&self.posttrain.methods, Method::parse_post_training)
    }
}

fn parse_methods(names: &[String], parse: fn(&str) -> Result<Method>) -> Result<Vec<Method>> {
    if names.is_empty() {
        return Err(Error::Config("method list is empty".into()));
    }
    names.iter().map(|n| parse(n.trim())).collect()
}

fn apply_override(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let keys: Vec<String> = path.split("__").map(str::to_ascii_lowercase).collect();
    if keys.iter().any(String::is_empty) {
        return Err(Error::Config(format!("malformed override {ENV_PREFIX}{path}")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{ENV_PREFIX}{path}: {k} is not a section")))?;
    }
    cur.insert(last.clone(), parse_literal(raw));
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
