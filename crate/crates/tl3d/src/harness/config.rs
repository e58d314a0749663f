//! Flat key=value run configuration: diff-friendly text files, CLI
//! overrides, typed access with documented defaults, and a verbatim echo
//! of every effective value into the run directory.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Every key that was read, with the value actually used (explicit or
    /// default) — the source of the config echo.
    used: RefCell<BTreeMap<String, String>>,
}

impl Config {
    pub fn new() -> Config {
        Config::default()
    }

    /// Parse `key=value` lines; '#' starts a comment, blank lines ignored.
    pub fn from_text(text: &str) -> Result<Config> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            values.insert(key.to_string(), v.trim().to_string());
        }
        Ok(Config {
            values,
            used: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_text(&text)
    }

    /// CLI override (`--set key=value`); wins over file values.
    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {p:?} is not key=value")))?;
            self.set(k.trim(), v.trim());
        }
        Ok(())
    }

    fn record(&self, key: &str, effective: String) {
        self.used.borrow_mut().insert(key.to_string(), effective);
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        let v = self.values.get(key).cloned().unwrap_or_else(|| default.to_string());
        self.record(key, v.clone());
        v
    }

    pub fn get_opt_str(&self, key: &str) -> Option<String> {
        let v = self.values.get(key).cloned();
        if let Some(s) = &v {
            self.record(key, s.clone());
        }
        v
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.values.get(key) {
            Some(s) => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: {s:?} is not a number")))?;
                self.record(key, s.clone());
                Ok(v)
            }
            None => {
                self.record(key, format!("{default}"));
                Ok(default)
            }
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.values.get(key) {
            Some(s) => {
                let v: usize = s
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: {s:?} is not a non-negative integer")))?;
                self.record(key, s.clone());
                Ok(v)
            }
            None => {
                self.record(key, format!("{default}"));
                Ok(default)
            }
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.values.get(key) {
            Some(s) => {
                let v: u64 = s
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: {s:?} is not a non-negative integer")))?;
                self.record(key, s.clone());
                Ok(v)
            }
            None => {
                self.record(key, format!("{default}"));
                Ok(default)
            }
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.values.get(key).map(|s| s.as_str()) {
            Some("true") | Some("1") => {
                self.record(key, "true".into());
                Ok(true)
            }
            Some("false") | Some("0") => {
                self.record(key, "false".into());
                Ok(false)
            }
            Some(other) => Err(Error::Config(format!("{key}: {other:?} is not a bool"))),
            None => {
                self.record(key, format!("{default}"));
                Ok(default)
            }
        }
    }

    /// Every key read so far with its effective value, as config text.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.used.borrow().iter() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// Keys present in the input that nothing ever read (likely typos).
    pub fn unused_keys(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.values
            .keys()
            .filter(|k| !used.contains_key(*k))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_defaults_and_overrides() {
        let mut cfg = Config::from_text("lr = 0.01  # learning rate\n\nsteps=100\n").unwrap();
        assert_eq!(cfg.get_f64("lr", 1.0).unwrap(), 0.01);
        assert_eq!(cfg.get_usize("steps", 5).unwrap(), 100);
        assert_eq!(cfg.get_usize("batch", 8).unwrap(), 8); // default
        cfg.apply_overrides(&["lr=0.5".into()]).unwrap();
        assert_eq!(cfg.get_f64("lr", 1.0).unwrap(), 0.5);
    }

    #[test]
    fn echo_reflects_effective_values() {
        let cfg = Config::from_text("a=1\n").unwrap();
        let _ = cfg.get_usize("a", 0).unwrap();
        let _ = cfg.get_f64("b", 2.5).unwrap();
        let echo = cfg.echo();
        assert!(echo.contains("a=1\n"));
        assert!(echo.contains("b=2.5\n"));
        // echo text re-parses to the same effective values
        let back = Config::from_text(&echo).unwrap();
        assert_eq!(back.get_f64("b", 0.0).unwrap(), 2.5);
    }

    #[test]
    fn malformed_lines_and_values_are_config_errors() {
        assert!(matches!(Config::from_text("not a pair\n"), Err(Error::Config(_))));
        let cfg = Config::from_text("x=abc\n").unwrap();
        assert!(matches!(cfg.get_f64("x", 0.0), Err(Error::Config(_))));
        assert!(matches!(cfg.get_bool("x", false), Err(Error::Config(_))));
    }

    #[test]
    fn unused_keys_are_reported() {
        let cfg = Config::from_text("real=1\ntypo_key=2\n").unwrap();
        let _ = cfg.get_usize("real", 0);
        assert_eq!(cfg.unused_keys(), vec!["typo_key".to_string()]);
    }
}
