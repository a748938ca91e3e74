use std::collections::HashSet;
use std::hash::Hash;

use crate::corpus::{tokenize, SENTENCE_END};
use crate::error::{Error, Result};

/// Splits after every period token. Words are re-joined with single
/// spaces; a trailing fragment without a period counts as a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for tok in tokenize(text) {
        cur.push(tok);
        if tok == SENTENCE_END {
            out.push(cur.join(" "));
            cur.clear();
        }
    }
    if !cur.is_empty() {
        out.push(cur.join(" "));
    }
    out
}

/// `1 − |unique sentences| / |sentences|` per document, averaged over
/// documents holding at least one sentence.
pub fn rep_sen<S: AsRef<str>>(docs: &[S], split: impl Fn(&str) -> Vec<String>) -> Result<f64> {
    let (mut total, mut used) = (0.0, 0);
    for doc in docs {
        let sentences = split(doc.as_ref());
        if sentences.is_empty() {
            continue;
        }
        let unique: HashSet<&String> = sentences.iter().collect();
        total += 1.0 - unique.len() as f64 / sentences.len() as f64;
        used += 1;
    }
    if used < docs.len() {
        log::warn!("rep_sen: skipped {} of {} empty documents", docs.len() - used, docs.len());
    }
    if used == 0 {
        return Err(Error::InvalidArgument("rep_sen needs a document with at least one sentence".into()));
    }
    Ok(total / used as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepN {
    pub value: f64,
    /// Streams long enough to hold one n-gram.
    pub used: usize,
    pub skipped: usize,
}

/// `1 − |unique n-grams| / |n-grams|` per stream, averaged over streams of
/// length at least `n`. Shorter streams are skipped with a warning.
pub fn rep_n<T: Eq + Hash>(streams: &[Vec<T>], n: usize) -> Result<RepN> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
    }
    let (mut total, mut used, mut skipped) = (0.0, 0, 0);
    for s in streams {
        if s.len() < n {
            skipped += 1;
            continue;
        }
        let grams: HashSet<&[T]> = s.windows(n).collect();
        let count = s.len() - n + 1;
        total += 1.0 - grams.len() as f64 / count as f64;
        used += 1;
    }
    if skipped > 0 {
        log::warn!("rep_n: skipped {skipped} of {} streams shorter than {n}", streams.len());
    }
    if used == 0 {
        return Err(Error::InvalidArgument(format!("no stream holds a {n}-gram")));
    }
    Ok(RepN { value: total / used as f64, used, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    #[test]
    fn sentence_formula() {
        let v = rep_sen(&["a. b. a."], split_sentences).unwrap();
        assert!((v - (1.0 - 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(rep_sen(&["a. b. c."], split_sentences).unwrap(), 0.0);
    }

    #[test]
    fn splitter_keeps_fragment() {
        assert_eq!(split_sentences("the cat sat . a dog"), vec!["the cat sat .", "a dog"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn empty_documents_are_skipped() {
        assert!(rep_sen(&[""], split_sentences).is_err());
        assert!(rep_sen::<&str>(&[], split_sentences).is_err());
        assert_eq!(rep_sen(&["", "a. a."], split_sentences).unwrap(), 0.5);
    }

    #[test]
    fn ngram_examples() {
        assert_eq!(rep_n(&[vec!['a'; 5]], 4).unwrap().value, 0.5);
        assert_eq!(rep_n(&[vec![1, 2, 3, 4, 5]], 4).unwrap().value, 0.0);
    }

    #[test]
    fn short_streams_are_skipped() {
        let r = rep_n(&[vec![1, 2], vec![1, 1, 1, 1, 1]], 4).unwrap();
        assert_eq!((r.used, r.skipped), (1, 1));
        assert_eq!(r.value, 0.5);
        assert!(rep_n(&[vec![1, 2, 3]], 4).is_err());
        assert!(rep_n(&[vec![1, 2, 3]], 0).is_err());
    }

    /// Counting by sorting into a map instead of hashing slices.
    fn brute_rep(units: &[String]) -> f64 {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for u in units {
            *seen.entry(u).or_default() += 1;
        }
        1.0 - seen.len() as f64 / units.len() as f64
    }

    #[test]
    fn matches_brute_force_on_constructed_corpora() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let docs: Vec<String> = (0..rng.gen_range(1..6))
                .map(|_| {
                    (0..rng.gen_range(1..8))
                        .map(|_| format!("w{} w{} .", rng.gen_range(0..3), rng.gen_range(0..3)))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let expect: f64 = docs
                .iter()
                .map(|d| {
                    let units: Vec<String> = d.split(" .").filter(|s| !s.trim().is_empty()).map(|s| s.trim().to_string()).collect();
                    brute_rep(&units)
                })
                .sum::<f64>()
                / docs.len() as f64;
            assert_eq!(rep_sen(&docs, split_sentences).unwrap(), expect);
        }
    }

    proptest! {
        #[test]
        fn rep_n_in_unit_interval_and_zero_iff_unique(s in proptest::collection::vec(0u8..4, 4..30)) {
            let r = rep_n(std::slice::from_ref(&s), 3).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&r));
            let distinct = s.windows(3).collect::<std::collections::BTreeSet<_>>().len() == s.len() - 2;
            prop_assert_eq!(r == 0.0, distinct);
        }

        #[test]
        fn rep_sen_in_unit_interval(words in proptest::collection::vec(0u8..3, 1..20)) {
            let doc: String = words.iter().map(|w| format!("s{w} .")).collect::<Vec<_>>().join(" ");
            let r = rep_sen(&[doc], split_sentences).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
