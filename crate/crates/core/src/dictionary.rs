//! Bias dictionary: attribute axes mapping source terms to their substitutes.
//!
//! File format is UTF-8 TSV, one substitution per line:
//!
//! ```text
//! # comment
//! Gender<TAB>he<TAB>she
//! Gender<TAB>he<TAB>they
//! ```
//!
//! Lines sharing `(axis, source)` merge into a single [`TermEntry`].

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest allowed source term, in words.
pub const MAX_SOURCE_TOKENS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttributeAxis {
    Gender,
    Race,
    Body,
}

impl AttributeAxis {
    pub const ALL: [AttributeAxis; 3] = [AttributeAxis::Gender, AttributeAxis::Race, AttributeAxis::Body];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeAxis::Gender => "Gender",
            AttributeAxis::Race => "Race",
            AttributeAxis::Body => "Body",
        }
    }
}

impl fmt::Display for AttributeAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributeAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(AttributeAxis::Gender),
            "race" => Ok(AttributeAxis::Race),
            "body" => Ok(AttributeAxis::Body),
            _ => Err(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermEntry {
    pub axis: AttributeAxis,
    /// Lowercase, single-space separated.
    pub source: String,
    pub replacements: Vec<String>,
}

impl TermEntry {
    pub fn source_tokens(&self) -> impl Iterator<Item = &str> {
        self.source.split(' ')
    }

    pub fn token_count(&self) -> usize {
        self.source_tokens().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasDictionary {
    pub version: String,
    pub entries: Vec<TermEntry>,
    /// Number of exact duplicate lines collapsed during load.
    #[serde(default)]
    pub duplicates_collapsed: usize,
}

/// Lowercases and collapses internal whitespace.
pub fn normalize_term(term: &str) -> String {
    term.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl BiasDictionary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let version = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&text, version)
    }

    pub fn parse(text: &str, version: impl Into<String>) -> Result<Self> {
        let mut entries: Vec<TermEntry> = Vec::new();
        let mut index: HashMap<(AttributeAxis, String), usize> = HashMap::new();
        let mut duplicates = 0;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.trim_end_matches('\r').split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Malformed {
                    line,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let axis: AttributeAxis = fields[0].parse().map_err(|value| Error::UnknownAxis { line, value })?;
            let source = normalize_term(fields[1]);
            let replacement = normalize_term(fields[2]);
            if source.is_empty() || replacement.is_empty() {
                return Err(Error::Malformed {
                    line,
                    message: "empty source or replacement".into(),
                });
            }
            let tokens = source.split(' ').count();
            if tokens > MAX_SOURCE_TOKENS {
                return Err(Error::Malformed {
                    line,
                    message: format!("source `{source}` has {tokens} words (max {MAX_SOURCE_TOKENS})"),
                });
            }
            if source == replacement {
                return Err(Error::Malformed {
                    line,
                    message: format!("replacement equals source `{source}`"),
                });
            }

            match index.get(&(axis, source.clone())) {
                Some(&i) => {
                    let entry = &mut entries[i];
                    if entry.replacements.contains(&replacement) {
                        duplicates += 1;
                    } else {
                        entry.replacements.push(replacement);
                    }
                }
                None => {
                    index.insert((axis, source.clone()), entries.len());
                    entries.push(TermEntry {
                        axis,
                        source,
                        replacements: vec![replacement],
                    });
                }
            }
        }

        if entries.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        if duplicates > 0 {
            log::warn!("collapsed {duplicates} duplicate dictionary line(s)");
        }
        Ok(BiasDictionary {
            version: version.into(),
            entries,
            duplicates_collapsed: duplicates,
        })
    }

    /// Serializes back to the TSV format, one replacement per line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# version: {}\n", self.version);
        for entry in &self.entries {
            for replacement in &entry.replacements {
                out.push_str(&format!("{}\t{}\t{}\n", entry.axis, entry.source, replacement));
            }
        }
        out
    }

    /// Entries of one axis, in load order.
    pub fn entries_for_axis(&self, axis: AttributeAxis) -> Vec<&TermEntry> {
        self.entries.iter().filter(|e| e.axis == axis).collect()
    }

    pub fn has_axis(&self, axis: AttributeAxis) -> bool {
        self.entries.iter().any(|e| e.axis == axis)
    }
}
