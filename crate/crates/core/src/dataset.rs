//! Query datasets: records carry an id, surface text, and a split tag.
//!
//! Dataset files are newline-delimited UTF-8 with tab-separated
//! `id <TAB> split <TAB> text` fields. Splits are pairwise disjoint by id.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Proxy,
    SuffixTrain,
    EvalIn,
    EvalOod,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Proxy, Split::SuffixTrain, Split::EvalIn, Split::EvalOod];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Proxy => "proxy",
            Split::SuffixTrain => "suffix-train",
            Split::EvalIn => "eval-in",
            Split::EvalOod => "eval-ood",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "proxy" => Some(Split::Proxy),
            "suffix-train" => Some(Split::SuffixTrain),
            "eval-in" => Some(Split::EvalIn),
            "eval-ood" => Some(Split::EvalOod),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<QueryRecord>,
}

impl Dataset {
    /// Validates id uniqueness across the whole dataset (which implies the
    /// splits are pairwise disjoint by id).
    pub fn new(records: Vec<QueryRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut violations = Vec::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                violations.push(format!("duplicate query id `{}` across splits", r.id));
            }
            if r.text.contains('\t') || r.text.contains('\n') {
                violations.push(format!("query `{}` text contains tab or newline", r.id));
            }
        }
        if !violations.is_empty() {
            return Err(Error::Config(violations));
        }
        Ok(Dataset { records })
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn split(&self, split: Split) -> Vec<&QueryRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&format!("{}\t{}\t{}\n", r.id, r.split, r.text));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let id = parts.next().unwrap_or_default();
            let split = parts.next().unwrap_or_default();
            let body = parts.next();
            let (Some(body), Some(split)) = (body, Split::parse(split)) else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    message: "expected `id<TAB>split<TAB>text` with a known split".into(),
                });
            };
            records.push(QueryRecord {
                id: id.to_string(),
                text: body.to_string(),
                split,
            });
        }
        Dataset::new(records)
    }
}
