//! Flat `key = value` run configuration with default tracking: every key a
//! command consults is recorded with its final value so `run.cfg` echoes
//! the fully resolved configuration.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use gait_core::error::{Error, Result};
use gait_core::kv;

#[derive(Debug, Default)]
pub struct Cfg {
    raw: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
    consumed: RefCell<BTreeSet<String>>,
}

impl Cfg {
    pub fn from_path(path: Option<&Path>) -> Result<Self> {
        let raw = match path {
            Some(p) => kv::parse(&std::fs::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        Ok(Cfg {
            raw,
            ..Cfg::default()
        })
    }

    /// Command-line override: takes precedence over the config file.
    pub fn set(&mut self, key: &str, value: String) {
        self.raw.insert(key.to_string(), value);
    }

    fn record(&self, key: &str, value: &str) {
        self.consumed.borrow_mut().insert(key.to_string());
        self.resolved
            .borrow_mut()
            .insert(key.to_string(), value.to_string());
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        let v = self.raw.get(key).map(String::as_str).unwrap_or(default);
        self.record(key, v);
        v.to_string()
    }

    pub fn opt_str(&self, key: &str) -> Option<String> {
        let v = self.raw.get(key).cloned();
        if let Some(ref s) = v {
            self.record(key, s);
        }
        v
    }

    pub fn require_str(&self, key: &str) -> Result<String> {
        self.opt_str(key)
            .ok_or_else(|| Error::config(format!("missing required config key '{}'", key)))
    }

    pub fn parse_or<T: FromStr + Display>(&self, key: &str, default: T) -> Result<T> {
        match self.raw.get(key) {
            Some(v) => {
                self.record(key, v);
                v.parse::<T>()
                    .map_err(|_| Error::config(format!("bad value for '{}': '{}'", key, v)))
            }
            None => {
                self.record(key, &default.to_string());
                Ok(default)
            }
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw.get(key) {
            Some(v) => {
                self.record(key, v);
                match v.as_str() {
                    "true" | "on" | "1" => Ok(true),
                    "false" | "off" | "0" => Ok(false),
                    _ => Err(Error::config(format!("bad boolean for '{}': '{}'", key, v))),
                }
            }
            None => {
                self.record(key, &default.to_string());
                Ok(default)
            }
        }
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw.get(key) {
            Some(v) => {
                self.record(key, v);
                kv::parse_usize_list(v)
            }
            None => {
                self.record(key, &kv::format_usize_list(default));
                Ok(default.to_vec())
            }
        }
    }

    /// Reject keys the command never consulted (typo guard).
    pub fn reject_unknown(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<&String> = self.raw.keys().filter(|k| !consumed.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "unknown config keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }

    /// The fully resolved config (defaults filled in) for the `run.cfg`
    /// echo.
    pub fn echo(&self) -> String {
        kv::format(&self.resolved.borrow())
    }

    pub fn write_echo(&self, out_dir: &Path) -> Result<()> {
        std::fs::write(out_dir.join("run.cfg"), self.echo())?;
        Ok(())
    }
}
