use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{tokenize, TokenSeq};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const MASK: u32 = 3;
pub const UNK: u32 = 4;
pub const NUM_SPECIALS: u32 = 5;

/// Surface strings of the special ids. They contain `<` and `>`, which the
/// tokenizer always splits off, so ordinary text can never produce them.
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<mask>", "<unk>"];

/// Prefix prepended to every sentence on the contrastive stream.
pub const INSTRUCTION: &str = "Given the sentence, find its representation:";

/// Word-level vocabulary with fixed special ids `0..5`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocab entry {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// Builds from documents: most frequent words first, ties broken by
    /// byte order, at most `max_size` ordinary words.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for w in tokenize(doc) {
                *counts.entry(w).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
        words.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().take(max_size).map(|(w, _)| w.to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    /// Ids of the words of `text`, without BOS/EOS.
    pub fn encode_words(&self, text: &str) -> Vec<u32> {
        tokenize(text).map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        let mut ids = Vec::with_capacity(text.len() / 3 + 2);
        ids.push(BOS);
        ids.extend(self.encode_words(text));
        ids.push(EOS);
        TokenSeq { ids }
    }

    /// Space-joined words. PAD, BOS and EOS are dropped; MASK and UNK are
    /// rendered by their surface strings.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn instruction_ids(&self) -> Vec<u32> {
        self.encode_words(INSTRUCTION)
    }

    /// `id<TAB>token` lines, specials first.
    pub fn to_text(&self) -> String {
        self.tokens.iter().enumerate().map(|(i, t)| format!("{i}\t{t}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| Error::InvalidArgument(format!("vocab line {} has no tab", n + 1)))?;
            if id.parse::<usize>().ok() != Some(n) {
                return Err(Error::InvalidArgument(format!("vocab line {} has id {id:?}", n + 1)));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(Error::InvalidArgument("vocab file must start with the special tokens".into()));
        }
        Self::from_tokens(tokens)
    }

    /// SHA-256 of [`Vocab::to_text`].
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn frequency_order() {
        let v = Vocab::build(["a b a"], 10).unwrap();
        assert_eq!(v.len(), 7);
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        assert_eq!(v.id("a"), Some(5));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(Vocab::build([""], 10).unwrap_err().to_string(), "empty corpus");
        assert!(Vocab::build(["   \n "], 10).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::build(["a b"], 10).unwrap();
        let s = v.encode("a b");
        assert_eq!(s.ids, vec![BOS, v.id("a").unwrap(), v.id("b").unwrap(), EOS]);
        assert_eq!(v.decode(&s.ids), "a b");
    }

    #[test]
    fn oov_maps_to_unk_once() {
        let v = Vocab::build(["the cat sat"], 10).unwrap();
        let s = v.encode("the zzz sat");
        assert_eq!(s.ids.iter().filter(|&&i| i == UNK).count(), 1);
        assert_eq!(v.decode(&s.ids), "the <unk> sat");
    }

    #[test]
    fn specials_are_never_tokenized() {
        let v = Vocab::build(["<mask> <unk> a"], 10).unwrap();
        assert!(!v.encode("<mask>").ids[1..].contains(&MASK));
        assert_eq!(v.id("mask").map(|i| i >= NUM_SPECIALS), Some(true));
    }

    #[test]
    fn cap_on_many_distinct_words() {
        // Independent count: every generated word is distinct by construction.
        let words: Vec<String> = (0..5000).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let distinct: HashSet<&str> = text.split(' ').collect();
        assert_eq!(distinct.len(), 5000);
        let v = Vocab::build([text.as_str()], 2000).unwrap();
        assert_eq!(v.len(), 2005);
        assert_eq!(v.encode("w4999").ids[1], UNK);
    }

    #[test]
    fn file_round_trip_and_hash() {
        let v = Vocab::build(["x y z x"], 10).unwrap();
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert!(Vocab::from_text("0\ta\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_over_vocab_words(picks in proptest::collection::vec(0usize..40, 1..30)) {
            let words: Vec<String> = (0..40).map(|i| format!("t{i}")).collect();
            let v = Vocab::build([words.join(" ").as_str()], 100).unwrap();
            let text: Vec<&str> = picks.iter().map(|&i| words[i].as_str()).collect();
            let text = text.join(" ");
            prop_assert_eq!(v.decode(&v.encode(&text).ids), text);
        }

        #[test]
        fn build_is_deterministic(text in "[a-d ,.]{1,60}") {
            prop_assume!(text.chars().any(|c| c != ' '));
            prop_assert_eq!(Vocab::build([text.as_str()], 8).unwrap(), Vocab::build([text.as_str()], 8).unwrap());
        }
    }
}
