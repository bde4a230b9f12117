//! Fixed experiment vocabulary and the reference tokenizer.
//!
//! The tokenizer splits on whitespace and peels punctuation into single-char
//! units; anything not in the vocabulary maps to the reserved unknown token
//! rather than failing, because attacked queries may carry suffix tokens a
//! toy router has never seen.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokens::TokenSequence;

/// Surface form of the reserved unknown token in vocabulary files.
pub const UNKNOWN_TOKEN: &str = "<unk>";

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    unknown: u32,
}

impl Vocabulary {
    /// Builds a vocabulary from distinct token strings; one of them must be
    /// [`UNKNOWN_TOKEN`].
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary token `{t}`")));
            }
        }
        let unknown = *index
            .get(UNKNOWN_TOKEN)
            .ok_or_else(|| Error::contract(format!("vocabulary has no `{UNKNOWN_TOKEN}` entry")))?;
        Ok(Vocabulary {
            tokens,
            index,
            unknown,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn unknown_id(&self) -> u32 {
        self.unknown
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id of a surface unit, falling back to the unknown id.
    pub fn id_of(&self, unit: &str) -> u32 {
        self.index.get(unit).copied().unwrap_or(self.unknown)
    }

    /// Exact lookup without the unknown fallback.
    pub fn lookup(&self, unit: &str) -> Option<u32> {
        self.index.get(unit).copied()
    }

    /// Whitespace + punctuation splitting, then vocabulary lookup.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        let mut unit = String::new();
        let flush = |unit: &mut String, ids: &mut Vec<u32>| {
            if !unit.is_empty() {
                ids.push(self.id_of(unit));
                unit.clear();
            }
        };
        for ch in text.chars() {
            if ch.is_whitespace() {
                flush(&mut unit, &mut ids);
            } else if ch.is_alphanumeric() {
                unit.push(ch);
            } else {
                // punctuation and symbols are single-character units
                flush(&mut unit, &mut ids);
                ids.push(self.id_of(&ch.to_string()));
            }
        }
        flush(&mut unit, &mut ids);
        TokenSequence::from_raw(ids)
    }

    /// Surface text for a sequence of ids, space-joined.
    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        seq.ids()
            .iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; the line number is the id.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                message: "empty vocabulary file".into(),
            });
        }
        Vocabulary::new(tokens)
    }
}
