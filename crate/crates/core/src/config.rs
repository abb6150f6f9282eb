//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted
//! (`mlp.learning_rate`, `preprocess.valid.chart_heart_rate`); later
//! lines override earlier ones.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", i + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", i + 1)));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::InvalidConfig(format!("{key} = {v:?}: {e}"))),
        }
    }

    /// Overwrites `slot` when `key` is present.
    pub fn read_into<T>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Comma-separated list value.
    pub fn get_list(&self, key: &str) -> Option<Vec<String>> {
        self.entries.get(key).map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
    }

    /// Entries whose key starts with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        self.entries
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(move |(k, v)| (&k[prefix.len()..], v.as_str()))
    }

    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl fmt::Display for KvConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = KvConfig::parse(
            "# comment\n\nmlp.epochs = 20\nmlp.learning_rate=0.01\nmlp.epochs = 30\n",
        )
        .unwrap();
        assert_eq!(cfg.get::<usize>("mlp.epochs").unwrap(), Some(30));
        assert_eq!(cfg.get::<f64>("mlp.learning_rate").unwrap(), Some(0.01));
        assert_eq!(cfg.get::<f64>("absent").unwrap(), None);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(KvConfig::parse("just words").is_err());
    }

    #[test]
    fn bad_value_names_the_key() {
        let cfg = KvConfig::parse("mlp.epochs = many").unwrap();
        let err = cfg.get::<usize>("mlp.epochs").unwrap_err().to_string();
        assert!(err.contains("mlp.epochs"));
    }

    #[test]
    fn prefix_scan() {
        let cfg = KvConfig::parse("a.x = 1\nb.valid.hr = 1,2\nb.valid.sbp = 3,4\nc = 0").unwrap();
        let got: Vec<_> = cfg.with_prefix("b.valid.").collect();
        assert_eq!(got, vec![("hr", "1,2"), ("sbp", "3,4")]);
    }

    #[test]
    fn display_round_trips() {
        let cfg = KvConfig::parse("b = 2\na = hello world").unwrap();
        assert_eq!(KvConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }
}
