//! Line-oriented `key = value` files: experiment configs, manifests, metadata.
//!
//! Blank lines and lines starting with `#` are ignored. A key may repeat; list
//! values are comma-separated.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    source: String,
    entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: idx + 1,
                    msg: format!("expected `key = value`, got {trimmed:?}"),
                });
            };
            entries.push((k.trim().to_string(), v.trim().to_string(), idx + 1));
        }
        Ok(KeyValues {
            source: source.to_string(),
            entries,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }

    /// Last value for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    /// Every value for a repeated key, with its line number.
    pub fn get_all(&self, key: &str) -> Vec<(&str, usize)> {
        self.entries
            .iter()
            .filter(|(k, _, _)| k == key)
            .map(|(_, v, line)| (v.as_str(), *line))
            .collect()
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map(|(_, _, l)| *l)
            .unwrap_or(0)
    }

    fn convert<T: FromStr>(&self, key: &str, raw: &str) -> Result<T>
    where
        T::Err: Display,
    {
        raw.parse().map_err(|e: T::Err| Error::Parse {
            path: self.source.clone(),
            line: self.line_of(key),
            msg: format!("{key}: cannot parse {raw:?}: {e}"),
        })
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("{}: missing key {key:?}", self.source)))?;
        self.convert(key, raw)
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.get(key) {
            Some(raw) => self.convert(key, raw),
            None => Ok(default),
        }
    }

    /// Comma-separated list; `default` when the key is absent.
    pub fn list_or<T: FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| self.convert(key, s))
                .collect(),
        }
    }
}
