//! Line-oriented `key = value` configuration merged with command-line flags.
//! Flags win over file values, file values win over defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

#[derive(Clone, Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key = value, got {raw:?}", k + 1);
            };
            let key = normalize(key);
            if key.is_empty() {
                bail!("config line {}: empty key", k + 1);
            }
            file.insert(key, value.trim().to_string());
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    /// Flag, else file value, else default. The chosen value is recorded for
    /// the run manifest.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(s)) => s.parse().map_err(|e| anyhow::anyhow!("config key {key}: cannot parse {s:?}: {e}"))?,
            (None, None) => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like [`Settings::get`] without a default.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => Some(v),
            (None, Some(s)) => {
                Some(s.parse().map_err(|e| anyhow::anyhow!("config key {key}: cannot parse {s:?}: {e}"))?)
            }
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    /// File keys that no command option consumed.
    pub fn unused(&self) -> Vec<&str> {
        self.file
            .keys()
            .filter(|k| !self.resolved.contains_key(*k))
            .map(String::as_str)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_default() {
        let mut s = Settings::parse("# comment\nseed = 7\nsigma-r = 0.2  # trailing\n\n").unwrap();
        assert_eq!(s.get("seed", Some(3u64), 0).unwrap(), 3);
        assert_eq!(s.get("sigma_r", None, 0.3).unwrap(), 0.2);
        assert_eq!(s.get("n", None, 20usize).unwrap(), 20);
        assert_eq!(s.resolved()["seed"], "3");
        assert!(s.unused().is_empty());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(Settings::parse("seed 7").is_err());
        let mut s = Settings::parse("n = many").unwrap();
        assert!(s.get("n", None, 1usize).is_err());
    }

    #[test]
    fn unused_keys_are_reported() {
        let mut s = Settings::parse("n = 5\ntypo = 1").unwrap();
        s.get("n", None, 1usize).unwrap();
        assert_eq!(s.unused(), vec!["typo"]);
    }
}
