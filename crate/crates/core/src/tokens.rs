//! Token sequences and length-budgeted adversarial suffixes.

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

/// A sequence of vocabulary ids. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    /// Builds a sequence after checking every id against the vocabulary size.
    pub fn from_ids(ids: Vec<u32>, vocab: &Vocabulary) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab.size()) {
            return Err(Error::contract(format!(
                "token id {bad} out of range for vocabulary of size {}",
                vocab.size()
            )));
        }
        Ok(TokenSequence { ids })
    }

    /// Internal constructor for ids already known to be in range.
    pub(crate) fn from_raw(ids: Vec<u32>) -> Self {
        TokenSequence { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The query followed by the suffix tokens.
    pub fn concat_suffix(&self, suffix: &Suffix) -> TokenSequence {
        let mut ids = Vec::with_capacity(self.ids.len() + suffix.len());
        ids.extend_from_slice(&self.ids);
        ids.extend_from_slice(suffix.ids());
        TokenSequence { ids }
    }
}

/// An adversarial suffix bounded by a token budget.
///
/// Construction rejects sequences longer than the budget, so every suffix
/// that exists satisfies its own length constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suffix {
    seq: TokenSequence,
    max_len: usize,
}

impl Suffix {
    pub fn new(seq: TokenSequence, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::contract("suffix token budget must be positive"));
        }
        if seq.len() > max_len {
            return Err(Error::contract(format!(
                "suffix has {} tokens, budget is {max_len}",
                seq.len()
            )));
        }
        Ok(Suffix { seq, max_len })
    }

    pub fn ids(&self) -> &[u32] {
        self.seq.ids()
    }

    pub fn sequence(&self) -> &TokenSequence {
        &self.seq
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// A copy with the token at `pos` replaced; the budget carries over.
    pub fn with_replacement(&self, pos: usize, id: u32) -> Result<Suffix> {
        if pos >= self.len() {
            return Err(Error::contract(format!(
                "replacement position {pos} out of range for suffix of length {}",
                self.len()
            )));
        }
        let mut ids = self.seq.ids().to_vec();
        ids[pos] = id;
        Ok(Suffix {
            seq: TokenSequence::from_raw(ids),
            max_len: self.max_len,
        })
    }

    pub fn text(&self, vocab: &Vocabulary) -> String {
        vocab.detokenize(&self.seq)
    }

    /// The empty suffix (identity under concatenation).
    pub fn empty(max_len: usize) -> Suffix {
        Suffix {
            seq: TokenSequence::default(),
            max_len: max_len.max(1),
        }
    }
}
