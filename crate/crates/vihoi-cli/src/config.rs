//! Plain-text run configuration: dotted `key = value` lines, `--set`
//! overrides, typed accessors that record a default for every key they
//! consume, and rejection of keys no accessor asked for.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

pub struct RunConfig {
    values: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, Value>>,
    defaults: RefCell<BTreeMap<String, Value>>,
}

impl RunConfig {
    pub fn empty() -> Self {
        Self {
            values: BTreeMap::new(),
            resolved: RefCell::default(),
            defaults: RefCell::default(),
        }
    }

    /// File first, then `--set` pairs on top.
    pub fn from_sources(path: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut cfg = Self::empty();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            parse_config(&text, &mut cfg.values)
                .with_context(|| format!("parsing {}", path.display()))?;
        }
        for set in sets {
            let (k, v) = set
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got {set:?}"))?;
            insert_pair(&mut cfg.values, k, v)?;
        }
        Ok(cfg)
    }

    /// Override applied by a dedicated flag such as `--seed`.
    pub fn force_set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn record(&self, key: &str, default: Value, value: Value) {
        self.defaults.borrow_mut().insert(key.to_string(), default);
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        let v = match self.raw(key) {
            Some(s) => s
                .parse::<u64>()
                .with_context(|| format!("{key}: expected an unsigned integer, got {s:?}"))?,
            None => default,
        };
        self.record(key, json!(default), json!(v));
        Ok(v)
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_u64(key, default as u64)? as usize)
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        let v = match self.raw(key) {
            Some(s) => s
                .parse::<f64>()
                .with_context(|| format!("{key}: expected a number, got {s:?}"))?,
            None => default,
        };
        self.record(key, json!(default), json!(v));
        Ok(v)
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        let v = match self.raw(key) {
            Some("true") => true,
            Some("false") => false,
            Some(s) => bail!("{key}: expected true or false, got {s:?}"),
            None => default,
        };
        self.record(key, json!(default), json!(v));
        Ok(v)
    }

    pub fn get_str(&self, key: &str, default: &str) -> Result<String> {
        let v = self.raw(key).unwrap_or(default).to_string();
        self.record(key, json!(default), json!(v));
        Ok(v)
    }

    pub fn get_choice(&self, key: &str, default: &str, allowed: &[&str]) -> Result<String> {
        debug_assert!(allowed.contains(&default));
        let v = self.get_str(key, default)?;
        if !allowed.contains(&v.as_str()) {
            bail!("{key}: expected one of {allowed:?}, got {v:?}");
        }
        Ok(v)
    }

    /// Comma-separated list; empty string means an empty list.
    pub fn get_list(&self, key: &str, default: &str) -> Result<Vec<String>> {
        let raw = self.raw(key).unwrap_or(default).to_string();
        let items: Vec<String> = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        self.record(key, json!(default), json!(items));
        Ok(items)
    }

    /// Errors on any configured key no accessor consumed; called by each
    /// command after it resolved its parameters and before any side effects.
    pub fn reject_unknown(&self) -> Result<()> {
        let resolved = self.resolved.borrow();
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| !resolved.contains_key(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            bail!("unknown config keys for this command: {}", unknown.join(", "));
        }
        Ok(())
    }

    pub fn resolved(&self) -> BTreeMap<String, Value> {
        self.resolved.borrow().clone()
    }

    pub fn defaults(&self) -> BTreeMap<String, Value> {
        self.defaults.borrow().clone()
    }
}

fn insert_pair(values: &mut BTreeMap<String, String>, k: &str, v: &str) -> Result<()> {
    let key = k.trim();
    if key.is_empty() || key.contains(char::is_whitespace) {
        bail!("bad config key {k:?}");
    }
    let mut value = v.trim();
    if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
        value = &value[1..value.len() - 1];
    }
    values.insert(key.to_string(), value.to_string());
    Ok(())
}

fn parse_config(text: &str, values: &mut BTreeMap<String, String>) -> Result<()> {
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", ln + 1))?;
        insert_pair(values, k, v).with_context(|| format!("line {}", ln + 1))?;
    }
    Ok(())
}
