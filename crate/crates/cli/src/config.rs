//! Flat `key = value` scenario files.
//!
//! One assignment per line; keys are dotted (`section.name_unit`), `#` starts
//! a comment, blank lines are ignored. Values are bare: numbers, booleans
//! (`true`/`false`), words, or comma-separated number lists. Every key must
//! be consumed by the reader, so a misspelt key is an error rather than a
//! silently ignored setting.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: key `{key}` repeats the assignment on line {first}")]
    Duplicate { key: String, line: usize, first: usize },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("`{key}` (line {line}): {message}")]
    Invalid { key: String, line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    Unknown { key: String, line: usize },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl ToString) -> Self {
        Self::Field {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed file plus a record of which keys have been read.
#[derive(Debug, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, Entry>,
    used: RefCell<BTreeSet<String>>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

impl FromStr for ConfigFile {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !valid_key(key) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("malformed key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("`{key}` has no value"),
                });
            }
            if let Some(first) = entries.get(key) {
                return Err(ConfigError::Duplicate {
                    key: key.into(),
                    line,
                    first: first.line,
                });
            }
            entries.insert(
                key.into(),
                Entry {
                    value: value.into(),
                    line,
                },
            );
        }
        Ok(Self {
            entries,
            used: RefCell::default(),
        })
    }
}

impl ConfigFile {
    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Inserts or replaces a value, as if it had been written in the file.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let line = self.entries.get(key).map_or(0, |e| e.line);
        self.entries.insert(
            key.into(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }

    fn entry(&self, key: &str) -> Option<&Entry> {
        let e = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.into());
        Some(e)
    }

    fn parse_with<T>(&self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>, ConfigError> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => f(&e.value).map(Some).ok_or_else(|| ConfigError::Invalid {
                key: key.into(),
                line: e.line,
                message: format!("expected {what}, found `{}`", e.value),
            }),
        }
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse_with(key, "a finite number", |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        // accept `1e6`-style integers as well
        self.parse_with(key, "a non-negative integer", |v| {
            v.replace('_', "").parse::<u64>().ok().or_else(|| {
                let x = v.parse::<f64>().ok()?;
                (x >= 0.0 && x.fract() == 0.0 && x < 1.8e19).then_some(x as u64)
            })
        })
    }

    pub fn opt_bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.parse_with(key, "`true` or `false`", |v| match v {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    pub fn opt_str(&self, key: &str) -> Option<String> {
        self.entry(key).map(|e| e.value.clone())
    }

    pub fn opt_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.parse_with(key, "a comma-separated list of numbers", |v| {
            v.split(',')
                .map(|s| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect()
        })
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.opt_f64(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.opt_u64(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn str(&self, key: &str) -> Result<String, ConfigError> {
        self.opt_str(key).ok_or_else(|| ConfigError::Missing(key.into()))
    }

    /// Line of a key, for error messages.
    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    /// Fails on the first key that no reader asked for.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            Some((key, e)) => Err(ConfigError::Unknown {
                key: key.clone(),
                line: e.line,
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_comments() {
        let c: ConfigFile = "# header\nemitter.gamma_ns_inv = 0.4167 # trailing\n\nsim.duration_ps = 1e9\nflag = true\nlist = 1, 2.5,3"
            .parse()
            .unwrap();
        assert_eq!(c.f64("emitter.gamma_ns_inv").unwrap(), 0.4167);
        assert_eq!(c.u64("sim.duration_ps").unwrap(), 1_000_000_000);
        assert_eq!(c.opt_bool("flag").unwrap(), Some(true));
        assert_eq!(c.opt_f64_list("list").unwrap(), Some(vec![1.0, 2.5, 3.0]));
        c.finish().unwrap();
    }

    #[test]
    fn reports_line_numbers() {
        let err = "a = 1\nnot an assignment".parse::<ConfigFile>().unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
        let err = "a = 1\na = 2".parse::<ConfigFile>().unwrap_err();
        assert!(matches!(err, ConfigError::Duplicate { line: 2, first: 1, .. }));
        let c: ConfigFile = "x = abc".parse().unwrap();
        let err = c.f64("x").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { line: 1, .. }), "{err}");
    }

    #[test]
    fn unused_keys_are_rejected() {
        let c: ConfigFile = "known = 1\ntypo_key = 2".parse().unwrap();
        c.f64("known").unwrap();
        assert_eq!(
            c.finish().unwrap_err(),
            ConfigError::Unknown {
                key: "typo_key".into(),
                line: 2
            }
        );
    }

    #[test]
    fn rejects_bad_keys_and_empty_values() {
        assert!("a..b = 1".parse::<ConfigFile>().is_err());
        assert!("a = ".parse::<ConfigFile>().is_err());
        assert!("= 3".parse::<ConfigFile>().is_err());
    }

    #[test]
    fn integer_forms() {
        let c: ConfigFile = "a = 1_000\nb = 2.5\nc = -1".parse().unwrap();
        assert_eq!(c.u64("a").unwrap(), 1000);
        assert!(c.u64("b").is_err());
        assert!(c.u64("c").is_err());
    }
}
