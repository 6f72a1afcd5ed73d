//! Flat `key=value` text format shared by SCMs, networks, configs and
//! verification reports.
//!
//! One entry per line. Blank lines and lines starting with `#` are ignored.
//! Floats are written with 17 significant digits so every `f64` survives a
//! round trip bit-for-bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key-value document. Remembers the source line of each key so that
/// lookup failures can point back into the file.
#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, (usize, String)>,
    order: Vec<String>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            if doc.entries.contains_key(k) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key {k:?}"),
                });
            }
            doc.order.push(k.to_string());
            doc.entries
                .insert(k.to_string(), (i + 1, v.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        if self
            .entries
            .insert(key.clone(), (0, value.to_string()))
            .is_none()
        {
            self.order.push(key);
        }
    }

    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, fmt_f64(value));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing key {key:?}"),
            })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self.entries.get(key).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing key {key:?}"),
        })?;
        v.parse::<T>().map_err(|_| Error::Parse {
            line: *line,
            msg: format!("cannot parse value {v:?} for key {key:?}"),
        })
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        if self.contains(key) {
            self.get(key)
        } else {
            Ok(default)
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in &self.order {
            let _ = writeln!(out, "{}={}", k, self.entries[k].1);
        }
        out
    }
}
