//! Plain-text `key=value` configuration files. Command-line flags take
//! precedence over values from the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

const KNOWN_KEYS: &[&str] = &[
    "batch",
    "clicks",
    "command",
    "clicks-sha256",
    "data",
    "dataset-sha256",
    "delta",
    "deltas",
    "epochs",
    "features",
    "group-feature",
    "groups",
    "items",
    "lr",
    "mode",
    "model",
    "model-sha256",
    "noise",
    "out-dir",
    "p",
    "queries",
    "seed",
    "sweeps",
    "test",
    "test-sha256",
    "version",
    "workers",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key=value", idx + 1);
            };
            let key = key.trim().trim_start_matches("--").replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                log::warn!("ignoring unknown config key `{key}`");
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    /// Fills `slot` from the file if the flag was not given.
    pub fn fill<T>(&self, slot: &mut Option<T>, key: &str) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if slot.is_some() {
            return Ok(());
        }
        if let Some(raw) = self.values.get(key) {
            *slot = Some(raw.parse().map_err(|e| anyhow::anyhow!("config key `{key}`: {e}"))?);
        }
        Ok(())
    }
}

/// Manifest written next to every output, in the same `key=value` format so
/// it can be passed back through `--config`.
#[derive(Debug, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
