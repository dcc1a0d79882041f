//! Flag > config file > default resolution, with a record of where every
//! value came from.
//!
//! The config file is TOML. Keys in `[global]` apply to every subcommand;
//! keys in a section named after the subcommand (`[make-pairs]`, ...) apply
//! to that subcommand and override `[global]`. Keys are the long flag names
//! without the leading dashes; `_` and `-` are interchangeable.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::error::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Flag,
    Config,
    Default,
}

impl Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::Config => "config",
            Source::Default => "default",
        })
    }
}

pub struct Settings {
    section: String,
    values: BTreeMap<String, (String, bool)>,
    effective: Vec<(String, String, Source)>,
}

fn key(raw: &str) -> String {
    raw.replace('_', "-")
}

fn scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(x) => Some(x.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

impl Settings {
    pub fn new(section: &str, config: Option<&str>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(text) = config {
            let table: toml::Table = text
                .parse()
                .map_err(|e| UsageError(format!("config file is not valid TOML: {e}")))?;
            for name in ["global", section] {
                let Some(entry) = table.get(name) else { continue };
                let sub = entry
                    .as_table()
                    .ok_or_else(|| UsageError(format!("config entry `{name}` must be a table")))?;
                for (k, v) in sub {
                    let s = scalar(v)
                        .ok_or_else(|| UsageError(format!("config key `{name}.{k}` must be a scalar")))?;
                    values.insert(key(k), (s, name == section));
                }
            }
        }
        Ok(Settings {
            section: section.to_string(),
            values,
            effective: Vec::new(),
        })
    }

    fn configured<T>(&mut self, name: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.remove(name) {
            None => Ok(None),
            Some((raw, _)) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| UsageError(format!("config key `{name}` = `{raw}`: {e}")).into()),
        }
    }

    fn record(&mut self, name: &str, value: impl Display, source: Source) {
        self.effective.push((name.to_string(), value.to_string(), source));
    }

    pub fn value<T>(&mut self, name: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        Ok(self.optional(name, flag)?.unwrap_or_else(|| {
            self.record(name, &default, Source::Default);
            default
        }))
    }

    pub fn optional<T>(&mut self, name: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_config = self.configured::<T>(name)?;
        let (value, source) = match (flag, from_config) {
            (Some(v), _) => (Some(v), Source::Flag),
            (None, Some(v)) => (Some(v), Source::Config),
            (None, None) => (None, Source::Default),
        };
        if let Some(v) = &value {
            self.record(name, v, source);
        }
        Ok(value)
    }

    pub fn required<T>(&mut self, name: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(name, flag)?
            .ok_or_else(|| UsageError(format!("missing required --{name} (flag or `{name}` in the config file)")))
            .map_err(Into::into)
    }

    /// Boolean switch: a set flag wins, otherwise the config value, otherwise off.
    pub fn switch(&mut self, name: &str, flag: bool) -> Result<bool> {
        self.value(name, flag.then_some(true), false)
    }

    /// Config keys of this subcommand's section that nothing asked for.
    pub fn unused(&self) -> Vec<String> {
        self.values
            .iter()
            .filter(|(_, (_, own))| *own)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn render(&self) -> String {
        let width = self.effective.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        let mut out = format!("[{}]\n", self.section);
        for (k, v, s) in &self.effective {
            out.push_str(&format!("{k:<width$} = {v}  # {s}\n"));
        }
        out
    }
}

pub fn read_config(path: Option<&std::path::Path>) -> Result<Option<String>> {
    path.map(|p| {
        std::fs::read_to_string(p)
            .map_err(|e| UsageError(format!("cannot read config file {}: {e}", p.display())))
            .context("loading config")
    })
    .transpose()
}
