//! Settings files, flag resolution and the error categories reported on
//! exit.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use needlenet::error::Error;

/// A failed command: a stable category word, its exit code and a message.
#[derive(Debug)]
pub struct Failure {
    pub category: &'static str,
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const USAGE: u8 = 2;

    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            category: "invalid-argument",
            code: 3,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            category: "internal",
            code: 10,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (category, code) = match &e {
            Error::InvalidArgument(_) => ("invalid-argument", 3),
            Error::Io { .. } => ("io", 4),
            Error::Dataset(_) => ("dataset", 5),
            Error::Checkpoint(_) => ("checkpoint", 6),
            Error::Stream(_) => ("stream", 7),
            Error::Divergence { .. } => ("divergence", 8),
            Error::Shape(_) => ("shape", 9),
        };
        Self {
            category,
            code,
            message: e.to_string(),
        }
    }
}

/// Values from a `key = value` file. Keys may use `-` or `_`.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Failure::from(Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Failure::invalid(format!("config line {}: expected key = value", n + 1)))?;
            values.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(Self { values })
    }

    /// The flag value if given, else the file's value for `key`.
    pub fn pick<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        let from_file = self.values.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        from_file
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Failure::invalid(format!("config {key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(key, flag)?
            .ok_or_else(|| Failure::invalid(format!("--{} is required", key.replace('_', "-"))))
    }

    /// Keys not consumed so far.
    pub fn drain(&mut self) -> BTreeMap<String, String> {
        std::mem::take(&mut self.values)
    }

    /// Fails on keys the command does not understand.
    pub fn finish(self) -> Result<(), Failure> {
        match self.values.keys().next() {
            Some(k) => Err(Failure::invalid(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }
}
