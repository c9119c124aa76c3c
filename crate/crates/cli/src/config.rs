use std::path::Path;

use neuromon::classifier::TrainConfig;
use neuromon::monitor::{BenchConfig, MonitorConfig};
use neuromon::reconstruct::ReconstructConfig;
use neuromon::sim::CorpusSpec;
use neuromon::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment overrides look like `NEUROMON_<SECTION>__<KEY>=value`.
pub const ENV_PREFIX: &str = "NEUROMON_";

/// Resolved configuration, one section per module.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub monitor: MonitorConfig,
    pub train: TrainConfig,
    pub corpus: CorpusSpec,
    pub reconstruct: ReconstructConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    /// File, then environment, then `--set` overrides; later sources win.
    pub fn resolve<I, S>(file: Option<&Path>, env: I, sets: &[String]) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::Parse { location: path.display().to_string(), message: e.to_string() })?
            }
            None => toml::Table::new(),
        };
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.as_ref().strip_prefix(ENV_PREFIX)?;
                key.contains("__").then(|| (key.to_lowercase().replace("__", "."), v.as_ref().to_string()))
            })
            .collect();
        env.sort();
        for (key, value) in env {
            set_key(&mut table, &key, &value).map_err(|e| Error::Config(format!("{ENV_PREFIX}{}: {e}", key.to_uppercase().replace('.', "__"))))?;
        }
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects section.key=value, got {s:?}")))?;
            set_key(&mut table, key.trim(), value.trim()).map_err(|e| Error::Config(format!("--set {s}: {e}")))?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid configuration: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.monitor.validate()?;
        self.train.validate()?;
        self.corpus.validate()?;
        self.reconstruct.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

fn set_key(table: &mut toml::Table, key: &str, value: &str) -> std::result::Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(format!("key {key:?} must look like section.key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("{p} is not a section"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value));
    Ok(())
}
