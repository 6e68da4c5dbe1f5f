//! Flat `key=value` run configuration shared by config files, flags and
//! the records written next to every artifact.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Value,
    Flag,
}

/// One configurable key of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub kind: Kind,
    pub help: &'static str,
}

pub const fn value(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key {
        name,
        default,
        kind: Kind::Value,
        help,
    }
}

pub const fn flag(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: Some("false"),
        kind: Kind::Flag,
        help,
    }
}

/// Effective settings of one run, in schema order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    command: &'static str,
    schema: &'static [Key],
    values: Vec<Option<String>>,
}

impl RunConfig {
    pub fn new(command: &'static str, schema: &'static [Key]) -> Self {
        RunConfig {
            command,
            schema,
            values: schema.iter().map(|k| k.default.map(str::to_string)).collect(),
        }
    }

    pub fn command(&self) -> &'static str {
        self.command
    }

    fn slot(&self, key: &str) -> Result<usize> {
        let key = key.replace('-', "_");
        self.schema
            .iter()
            .position(|k| k.name == key)
            .ok_or_else(|| Error::Config(format!("unknown key {key:?} for `{}`", self.command)))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let i = self.slot(key)?;
        let value = value.into();
        if self.schema[i].kind == Kind::Flag && value != "true" && value != "false" {
            return Err(Error::Config(format!("{} takes true or false, got {value:?}", self.schema[i].name)));
        }
        self.values[i] = Some(value);
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key=value, got {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let i = self.slot(key).expect("key is in the schema");
        self.values[i].as_deref()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required --{}", key.replace('_', "-"))))
    }

    pub fn flag(&self, key: &str) -> bool {
        self.raw(key) == Some("true")
    }

    /// `key=value` lines for every key that has a value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command={}", self.command);
        for (k, v) in self.schema.iter().zip(&self.values) {
            if let Some(v) = v {
                let _ = writeln!(out, "{}={v}", k.name);
            }
        }
        out
    }

    /// [`RunConfig::to_text`] with every line prefixed by `prefix`.
    pub fn commented(&self, prefix: &str) -> String {
        self.to_text().lines().map(|l| format!("{prefix}{l}\n")).collect()
    }
}
