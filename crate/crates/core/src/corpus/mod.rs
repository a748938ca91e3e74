//! Tokenization, vocabulary, and the synthetic desk-scale datasets.

pub mod synthetic;
mod vocab;

pub use synthetic::{
    lexicon, make_synthetic_suite, PairLabel, SentencePair, Story, SyntheticSuite, Tag, TaggedSentence, SENTENCE_END,
    STORY_SENTENCES,
};
pub use vocab::{Vocab, BOS, EOS, INSTRUCTION, MASK, NUM_SPECIALS, PAD, SPECIAL_TOKENS, UNK};

use crate::error::{Error, Result};

/// Word-level tokenizer: runs of alphanumerics (plus `_` and `'`) form one
/// word, every other non-space character is its own token. Case is kept.
pub fn tokenize(text: &str) -> Tokens<'_> {
    Tokens { text, pos: 0 }
}

pub struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

impl<'a> Iterator for Tokens<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let rest = &self.text[self.pos..];
        let start = rest.find(|c: char| !c.is_whitespace())?;
        let rest = &rest[start..];
        let first = rest.chars().next()?;
        let len = if is_word_char(first) {
            rest.find(|c: char| !is_word_char(c)).unwrap_or(rest.len())
        } else {
            first.len_utf8()
        };
        self.pos += start + len;
        Some(&rest[..len])
    }
}

/// Token ids framed by BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>, max_seq_len: usize) -> Result<Self> {
        let s = Self { ids };
        s.validate(max_seq_len)?;
        Ok(s)
    }

    pub fn validate(&self, max_seq_len: usize) -> Result<()> {
        let n = self.ids.len();
        if n < 2 || n > max_seq_len {
            return Err(Error::InvalidLength(format!("sequence length {n} outside [2, {max_seq_len}]")));
        }
        if self.ids[0] != BOS || self.ids[n - 1] != EOS {
            return Err(Error::InvalidArgument("sequence must start with BOS and end with EOS".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
