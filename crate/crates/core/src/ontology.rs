//! ICD-10-CM code parsing, the prefix hierarchy, and the code/description table.
//!
//! Codes are stored in their canonical dotless uppercase form (`T450X1A`) and
//! rendered with a dot after the category (`T45.0X1A`). Lookups accept either
//! form in any letter case.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::anchor::tokenize;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("invalid ICD-10-CM code {raw:?}: {reason}")]
    InvalidCodeFormat { raw: String, reason: &'static str },
    #[error("line {line}: invalid ICD-10-CM code {raw:?}: {reason}")]
    InvalidCodeAtLine {
        line: usize,
        raw: String,
        reason: &'static str,
    },
    #[error("line {line}: duplicate code {code}")]
    DuplicateCode { line: usize, code: String },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: &'static str },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A grammar-valid ICD-10-CM code in canonical (dotless, uppercase) form.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IcdCode(String);

impl IcdCode {
    pub const MIN_LEN: usize = 3;
    pub const MAX_LEN: usize = 7;

    /// Parses a dotted (`F98.3`) or dotless (`F983`) code.
    pub fn parse(raw: &str) -> Result<Self, OntologyError> {
        let invalid = |reason| OntologyError::InvalidCodeFormat {
            raw: raw.to_string(),
            reason,
        };
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(invalid("empty code"));
        }
        let upper = trimmed.to_ascii_uppercase();
        let normalized = match upper.find('.') {
            None => upper,
            Some(3) => {
                let (head, tail) = upper.split_at(3);
                let tail = &tail[1..];
                if tail.is_empty() {
                    return Err(invalid("dot must be followed by at least one character"));
                }
                if tail.contains('.') {
                    return Err(invalid("more than one dot"));
                }
                format!("{head}{tail}")
            }
            Some(_) => return Err(invalid("dot must follow the third character")),
        };
        let bytes = normalized.as_bytes();
        if !(Self::MIN_LEN..=Self::MAX_LEN).contains(&bytes.len()) {
            return Err(invalid("length must be 3 to 7 characters"));
        }
        if !bytes[0].is_ascii_uppercase() {
            return Err(invalid("first character must be a letter"));
        }
        if !bytes[1].is_ascii_digit() {
            return Err(invalid("second character must be a digit"));
        }
        if !bytes[2..]
            .iter()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
        {
            return Err(invalid("characters 3-7 must be letters or digits"));
        }
        Ok(IcdCode(normalized))
    }

    /// Canonical dotless form.
    pub fn normalized(&self) -> &str {
        &self.0
    }

    /// Clinical display form with a dot after the category.
    pub fn display(&self) -> String {
        if self.0.len() > 3 {
            format!("{}.{}", &self.0[..3], &self.0[3..])
        } else {
            self.0.clone()
        }
    }

    /// The three-character category this code belongs to.
    pub fn category(&self) -> IcdCode {
        IcdCode(self.0[..3].to_string())
    }

    /// Successive prefix truncations down to the category, nearest first.
    pub fn ancestors(&self) -> Vec<IcdCode> {
        (Self::MIN_LEN..self.0.len())
            .rev()
            .map(|len| IcdCode(self.0[..len].to_string()))
            .collect()
    }

    /// True iff `self` is a strict prefix of `other`.
    pub fn is_ancestor_of(&self, other: &IcdCode) -> bool {
        self.0.len() >= Self::MIN_LEN
            && self.0.len() < other.0.len()
            && other.0.starts_with(&self.0)
    }
}

pub fn parse_code(raw: &str) -> Result<IcdCode, OntologyError> {
    IcdCode::parse(raw)
}

pub fn ancestors(code: &IcdCode) -> Vec<IcdCode> {
    code.ancestors()
}

pub fn is_ancestor(a: &IcdCode, b: &IcdCode) -> bool {
    a.is_ancestor_of(b)
}

impl fmt::Debug for IcdCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IcdCode({})", self.0)
    }
}

impl fmt::Display for IcdCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for IcdCode {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IcdCode::parse(s)
    }
}

impl Serialize for IcdCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for IcdCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        IcdCode::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcdEntry {
    pub code: IcdCode,
    pub description: String,
}

/// Immutable code → description table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IcdTable {
    entries: BTreeMap<IcdCode, IcdEntry>,
}

impl IcdTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an entry, rejecting duplicates and descriptions without tokens.
    pub fn insert(&mut self, code: IcdCode, description: &str) -> Result<(), OntologyError> {
        if tokenize(description).is_empty() {
            return Err(OntologyError::MalformedLine {
                line: self.entries.len() + 1,
                reason: "description has no tokens",
            });
        }
        if self.entries.contains_key(&code) {
            return Err(OntologyError::DuplicateCode {
                line: self.entries.len() + 1,
                code: code.to_string(),
            });
        }
        self.entries.insert(
            code.clone(),
            IcdEntry {
                code,
                description: description.trim().to_string(),
            },
        );
        Ok(())
    }

    /// Parses `<code>\t<description>` lines. Blank lines are ignored.
    pub fn from_tsv(contents: &str) -> Result<Self, OntologyError> {
        let mut table = IcdTable::new();
        for (idx, line) in contents.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (raw_code, desc) = line.split_once('\t').ok_or(OntologyError::MalformedLine {
                line: line_no,
                reason: "expected <code>\\t<description>",
            })?;
            let code = IcdCode::parse(raw_code).map_err(|err| match err {
                OntologyError::InvalidCodeFormat { raw, reason } => {
                    OntologyError::InvalidCodeAtLine {
                        line: line_no,
                        raw,
                        reason,
                    }
                }
                other => other,
            })?;
            if table.entries.contains_key(&code) {
                return Err(OntologyError::DuplicateCode {
                    line: line_no,
                    code: code.to_string(),
                });
            }
            if tokenize(desc).is_empty() {
                return Err(OntologyError::MalformedLine {
                    line: line_no,
                    reason: "description has no tokens",
                });
            }
            table.insert(code, desc)?;
        }
        Ok(table)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .values()
            .map(|e| format!("{}\t{}\n", e.code, e.description))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, code: &IcdCode) -> Option<&IcdEntry> {
        self.entries.get(code)
    }

    pub fn contains(&self, code: &IcdCode) -> bool {
        self.entries.contains_key(code)
    }

    pub fn description(&self, code: &IcdCode) -> Option<&str> {
        self.entries.get(code).map(|e| e.description.as_str())
    }

    /// Looks up a raw code string in either dotted or dotless form.
    pub fn lookup(&self, raw: &str) -> Option<&IcdEntry> {
        IcdCode::parse(raw).ok().and_then(|c| self.entries.get(&c))
    }

    pub fn iter(&self) -> impl Iterator<Item = &IcdEntry> {
        self.entries.values()
    }
}

pub fn load_table(path: impl AsRef<Path>) -> Result<IcdTable, OntologyError> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path).map_err(|source| OntologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    IcdTable::from_tsv(&contents)
}

pub fn description<'a>(table: &'a IcdTable, code: &IcdCode) -> Option<&'a str> {
    table.description(code)
}
