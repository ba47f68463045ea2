//! Versioned, checksummed `key value` text files.
//!
//! ```text
//! <format-name> v<version>
//! key value...
//! checksum sha256:<hex digest of every byte above this line>
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting so a
//! save/load cycle is bit-exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const CHECKSUM_PREFIX: &str = "checksum sha256:";

/// Builder for a checked text document.
#[derive(Debug, Clone)]
pub struct TextWriter {
    body: String,
}

impl TextWriter {
    pub fn new(format: &str, version: u32) -> Self {
        Self {
            body: format!("{format} v{version}\n"),
        }
    }

    pub fn field(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        debug_assert!(!key.contains(char::is_whitespace));
        let _ = writeln!(self.body, "{key} {value}");
        self
    }

    pub fn f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.field(key, fmt_f64(value))
    }

    pub fn f64s(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let joined = values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ");
        self.field(key, joined)
    }

    pub fn finish(mut self) -> String {
        let digest = Sha256::digest(self.body.as_bytes());
        let _ = writeln!(self.body, "{CHECKSUM_PREFIX}{}", hex::encode(digest));
        self.body
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::CorruptModel(format!("not a number: {s:?}")))
}

/// Parsed fields of a checked text document.
#[derive(Debug, Clone)]
pub struct TextFields {
    order: Vec<String>,
    fields: HashMap<String, String>,
}

impl TextFields {
    /// Verifies the header and checksum, then splits the body into fields.
    pub fn parse(text: &str, format: &str, version: u32) -> Result<Self> {
        let mut lines = text.split_inclusive('\n');
        let header = lines.next().ok_or_else(|| Error::CorruptModel("empty file".into()))?;
        let (name, found_version) = header
            .trim_end()
            .rsplit_once(' ')
            .ok_or_else(|| Error::CorruptModel("missing header".into()))?;
        if name != format {
            return Err(Error::CorruptModel(format!("expected a {format} file, found {name:?}")));
        }
        let expected_version = format!("v{version}");
        if found_version != expected_version {
            return Err(Error::VersionMismatch {
                expected: expected_version,
                found: found_version.to_string(),
            });
        }

        let checksum_at = text
            .rfind(CHECKSUM_PREFIX)
            .filter(|&i| i == 0 || text.as_bytes()[i - 1] == b'\n')
            .ok_or_else(|| Error::CorruptModel("missing checksum line".into()))?;
        let (body, trailer) = text.split_at(checksum_at);
        let stated = trailer[CHECKSUM_PREFIX.len()..].trim_end();
        if !trailer.ends_with('\n') || stated.contains('\n') {
            return Err(Error::CorruptModel("malformed checksum line".into()));
        }
        if hex::encode(Sha256::digest(body.as_bytes())) != stated {
            return Err(Error::CorruptModel("checksum mismatch".into()));
        }

        let mut order = Vec::new();
        let mut fields = HashMap::new();
        for line in body.lines().skip(1) {
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            if fields.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::CorruptModel(format!("duplicate field {key}")));
            }
            order.push(key.to_string());
        }
        Ok(Self { order, fields })
    }

    pub fn read(path: &Path, format: &str, version: u32) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, format, version)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::CorruptModel(format!("missing field {key}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        parse_f64(self.str(key)?)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let s = self.str(key)?;
        s.parse()
            .map_err(|_| Error::CorruptModel(format!("field {key}: not an integer: {s:?}")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let s = self.str(key)?;
        s.parse()
            .map_err(|_| Error::CorruptModel(format!("field {key}: not an integer: {s:?}")))
    }

    pub fn f64s(&self, key: &str) -> Result<Vec<f64>> {
        self.str(key)?.split_whitespace().map(parse_f64).collect()
    }
}
