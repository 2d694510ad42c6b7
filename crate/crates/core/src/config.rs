//! Flat `key = value` configuration files.
//!
//! Blank lines and everything after `#` are ignored. Keys are lower-case
//! identifiers; a repeated key keeps the last value. Values set later through
//! [`ConfigMap::set`] (command line overrides) replace file values.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("config line {}: expected 'key = value', got '{line}'", lineno + 1)))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::param(format!("config line {}: bad key '{key}'", lineno + 1)));
            }
            entries.insert(key.to_ascii_lowercase(), value.trim().to_string());
        }
        Ok(ConfigMap { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_ascii_lowercase(), value.into());
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::param(format!("override '{pair}' is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::param(format!("config key '{key}' = '{v}': {e}"))))
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }
}

/// Parses a number grid: a comma list `0.5, 1, 2` or a range
/// `start:stop:count` with evenly spaced points including both ends.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    let bad = |what: &str| Error::param(format!("grid '{text}': {what}"));
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let grid = match parts.as_slice() {
        [single] => single
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("not a number list")))
            .collect::<Result<Vec<_>>>()?,
        [a, b, n] => {
            let a: f64 = a.parse().map_err(|_| bad("bad start"))?;
            let b: f64 = b.parse().map_err(|_| bad("bad stop"))?;
            let n: usize = n.parse().map_err(|_| bad("bad count"))?;
            match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
            }
        }
        _ => return Err(bad("expected a list or start:stop:count")),
    };
    if grid.is_empty() {
        return Err(bad("empty"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value"));
    }
    Ok(grid)
}

/// Parses problem sizes `n:k` (square) or `n1xn2:k1xk2`, comma separated,
/// into `(n1, n2, k1, k2)` tuples.
pub fn parse_sizes(text: &str) -> Result<Vec<(usize, usize, usize, usize)>> {
    fn pair(s: &str) -> Option<(usize, usize)> {
        match s.split_once('x') {
            Some((a, b)) => Some((a.trim().parse().ok()?, b.trim().parse().ok()?)),
            None => {
                let v = s.trim().parse().ok()?;
                Some((v, v))
            }
        }
    }
    let sizes = text
        .split(',')
        .map(|item| {
            let item = item.trim();
            let (n, k) = item
                .split_once(':')
                .ok_or_else(|| Error::param(format!("size '{item}' is not n:k")))?;
            let (n1, n2) = pair(n).ok_or_else(|| Error::param(format!("bad matrix size '{n}'")))?;
            let (k1, k2) = pair(k).ok_or_else(|| Error::param(format!("bad block size '{k}'")))?;
            Ok((n1, n2, k1, k2))
        })
        .collect::<Result<Vec<_>>>()?;
    if sizes.is_empty() {
        return Err(Error::param("no sizes given"));
    }
    Ok(sizes)
}
