//! key=value run configuration with flag overrides (overrides win).

use emoclass_core::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Load the optional config file, apply `key=value` overrides, then
    /// reject anything outside the command's allowed key set.
    pub fn resolve(
        file: Option<&Path>,
        overrides: &[String],
        allowed: &[&str],
    ) -> Result<RunConfig> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::parse(
                        path.display().to_string(),
                        i + 1,
                        "expected key=value".to_string(),
                    )
                })?;
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        for pair in overrides {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("bad override {pair:?}: expected key=value")))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        if let Some(bad) = values.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::validation(format!(
                "unknown config key {bad:?}; allowed: {}",
                allowed.join(", ")
            )));
        }
        Ok(RunConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::validation(format!("missing required config key {key:?}")))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        let p = PathBuf::from(self.require(key)?);
        if !p.exists() {
            return Err(Error::validation(format!(
                "path for {key:?} does not exist: {}",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::validation(format!("{key} must be an integer, got {v:?}"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::validation(format!("{key} must be a number, got {v:?}"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::validation(format!("{key} must be an integer, got {v:?}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => Err(Error::validation(format!(
                "{key} must be true/false, got {v:?}"
            ))),
        }
    }

    /// Exact resolved configuration, one key=value per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn set_default(&mut self, key: &str, value: String) {
        self.values.entry(key.to_string()).or_insert(value);
    }
}
