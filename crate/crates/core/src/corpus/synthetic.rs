//! Templated-grammar datasets standing in for real benchmarks.
//!
//! Every content word belongs to a concept with two interchangeable surface
//! forms (`tom`/`thomas`, `park`/`garden`, ...). Documents keep a fixed cast
//! of concepts and pick a surface form independently at each mention, so a
//! sentence and its all-forms-swapped twin carry the same meaning with
//! disjoint content tokens. That twin is the paraphrase of the pair dataset.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, Rng as StreamRng};

const NAMES: [[&str; 2]; 12] = [
    ["tom", "thomas"],
    ["ann", "anna"],
    ["bob", "robert"],
    ["kate", "katherine"],
    ["sam", "samuel"],
    ["liz", "elizabeth"],
    ["ben", "benjamin"],
    ["meg", "margaret"],
    ["joe", "joseph"],
    ["sue", "susan"],
    ["dan", "daniel"],
    ["jen", "jennifer"],
];
const PLACES: [[&str; 2]; 10] = [
    ["park", "garden"],
    ["shop", "store"],
    ["school", "academy"],
    ["house", "cottage"],
    ["river", "stream"],
    ["city", "town"],
    ["forest", "woods"],
    ["beach", "shore"],
    ["office", "bureau"],
    ["market", "bazaar"],
];
const OBJECTS: [[&str; 2]; 10] = [
    ["hat", "cap"],
    ["book", "novel"],
    ["car", "automobile"],
    ["cup", "mug"],
    ["bag", "sack"],
    ["coat", "jacket"],
    ["lamp", "lantern"],
    ["stone", "rock"],
    ["gift", "present"],
    ["box", "crate"],
];
const ADJECTIVES: [[&str; 2]; 8] = [
    ["big", "large"],
    ["small", "little"],
    ["old", "ancient"],
    ["new", "modern"],
    ["red", "crimson"],
    ["happy", "glad"],
    ["quick", "fast"],
    ["quiet", "silent"],
];
const MOTION_VERBS: [[&str; 2]; 4] = [["walked", "strolled"], ["ran", "hurried"], ["drove", "traveled"], ["went", "moved"]];
const OBJECT_VERBS: [[&str; 2]; 6] = [
    ["found", "discovered"],
    ["took", "grabbed"],
    ["bought", "purchased"],
    ["saw", "noticed"],
    ["lost", "misplaced"],
    ["kept", "retained"],
];

/// Placeholders: `N0`/`N1` names, `P` place, `O` object, `AP`/`AO` the
/// place and object adjectives, `MV` motion verb, `OV` object verb.
const TEMPLATES: [&str; 8] = [
    "N0 MV to the P .",
    "N0 OV the AO O .",
    "the AO O was near the P .",
    "N0 and N1 MV to the P .",
    "N0 gave the O to N1 .",
    "later N1 MV back to the AP P .",
    "N1 OV a O at the P .",
    "the P was AP .",
];

pub const SENTENCE_END: &str = ".";

/// Grammatical role of a word in the templated grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Name,
    Verb,
    Det,
    Adj,
    Place,
    Object,
    Prep,
    Conj,
    Aux,
    Adv,
    Punct,
}

impl Tag {
    pub const ALL: [Tag; 11] = [
        Tag::Name,
        Tag::Verb,
        Tag::Det,
        Tag::Adj,
        Tag::Place,
        Tag::Object,
        Tag::Prep,
        Tag::Conj,
        Tag::Aux,
        Tag::Adv,
        Tag::Punct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Name => "NAME",
            Tag::Verb => "VERB",
            Tag::Det => "DET",
            Tag::Adj => "ADJ",
            Tag::Place => "PLACE",
            Tag::Object => "OBJ",
            Tag::Prep => "PREP",
            Tag::Conj => "CONJ",
            Tag::Aux => "AUX",
            Tag::Adv => "ADV",
            Tag::Punct => "PUNCT",
        }
    }

    pub fn index(self) -> usize {
        Tag::ALL.iter().position(|&t| t == self).expect("listed")
    }

    pub fn parse(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn literal_tag(word: &str) -> Tag {
    match word {
        "the" | "a" => Tag::Det,
        "to" | "near" | "at" => Tag::Prep,
        "and" => Tag::Conj,
        "was" => Tag::Aux,
        "gave" => Tag::Verb,
        "later" | "back" => Tag::Adv,
        "." => Tag::Punct,
        other => panic!("untagged template literal {other:?}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Paraphrase,
    Unrelated,
}

impl PairLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Paraphrase => "paraphrase",
            PairLabel::Unrelated => "unrelated",
        }
    }

    pub fn parse(s: &str) -> Option<PairLabel> {
        [PairLabel::Paraphrase, PairLabel::Unrelated].into_iter().find(|l| l.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub a: String,
    pub b: String,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<Tag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Story {
    pub sentences: Vec<String>,
}

impl Story {
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSuite {
    /// One document per entry.
    pub lm_corpus: Vec<String>,
    pub pairs: Vec<SentencePair>,
    pub tagging: Vec<TaggedSentence>,
    pub stories: Vec<Story>,
}

/// Concepts fixed for one document.
#[derive(Debug, Clone, Copy)]
struct Cast {
    names: [usize; 2],
    place: usize,
    object: usize,
    place_adj: usize,
    object_adj: usize,
}

impl Cast {
    fn sample(rng: &mut StreamRng) -> Self {
        let mut names: Vec<usize> = (0..NAMES.len()).collect();
        names.shuffle(rng);
        Self {
            names: [names[0], names[1]],
            place: rng.gen_range(0..PLACES.len()),
            object: rng.gen_range(0..OBJECTS.len()),
            place_adj: rng.gen_range(0..ADJECTIVES.len()),
            object_adj: rng.gen_range(0..ADJECTIVES.len()),
        }
    }
}

/// A sentence with every concept chosen but surface forms still open.
#[derive(Debug, Clone, Copy)]
struct Plan {
    template: usize,
    cast: Cast,
    motion: usize,
    object_verb: usize,
}

impl Plan {
    fn sample(cast: Cast, rng: &mut StreamRng) -> Self {
        Self {
            template: rng.gen_range(0..TEMPLATES.len()),
            cast,
            motion: rng.gen_range(0..MOTION_VERBS.len()),
            object_verb: rng.gen_range(0..OBJECT_VERBS.len()),
        }
    }

    /// Renders with one surface-form bit per content slot, consumed in order.
    fn render(&self, forms: &mut impl FnMut() -> usize) -> Vec<(&'static str, Tag)> {
        let c = &self.cast;
        TEMPLATES[self.template]
            .split(' ')
            .map(|slot| match slot {
                "N0" => (NAMES[c.names[0]][forms()], Tag::Name),
                "N1" => (NAMES[c.names[1]][forms()], Tag::Name),
                "P" => (PLACES[c.place][forms()], Tag::Place),
                "O" => (OBJECTS[c.object][forms()], Tag::Object),
                "AP" => (ADJECTIVES[c.place_adj][forms()], Tag::Adj),
                "AO" => (ADJECTIVES[c.object_adj][forms()], Tag::Adj),
                "MV" => (MOTION_VERBS[self.motion][forms()], Tag::Verb),
                "OV" => (OBJECT_VERBS[self.object_verb][forms()], Tag::Verb),
                lit => (lit, literal_tag(lit)),
            })
            .collect()
    }

    fn render_random(&self, rng: &mut StreamRng) -> Vec<(&'static str, Tag)> {
        self.render(&mut || rng.gen_range(0..2))
    }
}

fn join(words: &[(&str, Tag)]) -> String {
    words.iter().map(|(w, _)| *w).collect::<Vec<_>>().join(" ")
}

fn document(n_sentences: usize, rng: &mut StreamRng) -> Vec<String> {
    let cast = Cast::sample(rng);
    (0..n_sentences)
        .map(|_| join(&Plan::sample(cast, rng).render_random(rng)))
        .collect()
}

pub const LM_DOCS: usize = 4000;
pub const PAIRS: usize = 200;
pub const TAGGED: usize = 400;
pub const STORIES: usize = 200;
pub const STORY_SENTENCES: usize = 5;

/// Deterministic suite for `seed`. Each part draws from its own stream.
pub fn make_synthetic_suite(seed: u64) -> SyntheticSuite {
    let mut rng = stream(seed, "corpus.lm", 0);
    let lm_corpus = (0..LM_DOCS)
        .map(|_| {
            let n = rng.gen_range(3..=6);
            document(n, &mut rng).join(" ")
        })
        .collect();

    let mut rng = stream(seed, "corpus.pairs", 0);
    let pairs = (0..PAIRS)
        .map(|i| {
            let plan = Plan::sample(Cast::sample(&mut rng), &mut rng);
            let bits: Vec<usize> = (0..8).map(|_| rng.gen_range(0..2)).collect();
            let mut k = 0;
            let a = join(&plan.render(&mut || {
                k += 1;
                bits[k - 1]
            }));
            if i % 2 == 0 {
                let mut k = 0;
                let b = join(&plan.render(&mut || {
                    k += 1;
                    1 - bits[k - 1]
                }));
                SentencePair { a, b, label: PairLabel::Paraphrase }
            } else {
                let other = Plan::sample(Cast::sample(&mut rng), &mut rng);
                let b = join(&other.render_random(&mut rng));
                SentencePair { a, b, label: PairLabel::Unrelated }
            }
        })
        .collect();

    let mut rng = stream(seed, "corpus.tagging", 0);
    let tagging = (0..TAGGED)
        .map(|_| {
            let plan = Plan::sample(Cast::sample(&mut rng), &mut rng);
            let words = plan.render_random(&mut rng);
            TaggedSentence {
                words: words.iter().map(|(w, _)| w.to_string()).collect(),
                tags: words.iter().map(|(_, t)| *t).collect(),
            }
        })
        .collect();

    let mut rng = stream(seed, "corpus.stories", 0);
    let stories = (0..STORIES)
        .map(|_| Story { sentences: document(STORY_SENTENCES, &mut rng) })
        .collect();

    SyntheticSuite { lm_corpus, pairs, tagging, stories }
}

impl SyntheticSuite {
    pub fn lm_token_count(&self) -> usize {
        self.lm_corpus.iter().map(|d| super::tokenize(d).count()).sum()
    }

    /// Writes `lm_corpus.txt`, `pairs.tsv`, `tagging.tsv` and
    /// `stories.txt` (one item per line).
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("lm_corpus.txt"), self.lm_corpus.join("\n") + "\n")?;
        let mut pairs = String::new();
        for p in &self.pairs {
            writeln!(pairs, "{}\t{}\t{}", p.a, p.b, p.label.as_str()).expect("string write");
        }
        std::fs::write(dir.join("pairs.tsv"), pairs)?;
        let mut tagging = String::new();
        for s in &self.tagging {
            let tags: Vec<&str> = s.tags.iter().map(|t| t.as_str()).collect();
            writeln!(tagging, "{}\t{}", s.words.join(" "), tags.join(" ")).expect("string write");
        }
        std::fs::write(dir.join("tagging.tsv"), tagging)?;
        let stories: Vec<String> = self.stories.iter().map(Story::text).collect();
        std::fs::write(dir.join("stories.txt"), stories.join("\n") + "\n")?;
        Ok(())
    }

    /// Reads the layout written by [`SyntheticSuite::write_to`]. Stories are
    /// re-split after every period.
    pub fn read_from(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<String>> {
            let text = std::fs::read_to_string(dir.join(name))?;
            Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
        };
        let bad = |file: &str, i: usize| Error::InvalidArgument(format!("{file} line {} is malformed", i + 1));
        let lm_corpus = read("lm_corpus.txt")?;
        let pairs = read("pairs.tsv")?
            .iter()
            .enumerate()
            .map(|(i, l)| match l.split('\t').collect::<Vec<_>>()[..] {
                [a, b, label] => Ok(SentencePair {
                    a: a.into(),
                    b: b.into(),
                    label: PairLabel::parse(label).ok_or_else(|| bad("pairs.tsv", i))?,
                }),
                _ => Err(bad("pairs.tsv", i)),
            })
            .collect::<Result<_>>()?;
        let tagging = read("tagging.tsv")?
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (words, tags) = l.split_once('\t').ok_or_else(|| bad("tagging.tsv", i))?;
                let words: Vec<String> = words.split(' ').map(str::to_string).collect();
                let tags = tags.split(' ').map(Tag::parse).collect::<Option<Vec<_>>>().ok_or_else(|| bad("tagging.tsv", i))?;
                if tags.len() != words.len() {
                    return Err(bad("tagging.tsv", i));
                }
                Ok(TaggedSentence { words, tags })
            })
            .collect::<Result<_>>()?;
        let stories = read("stories.txt")?
            .iter()
            .map(|l| {
                let mut sentences = Vec::new();
                let mut cur: Vec<&str> = Vec::new();
                for w in l.split_whitespace() {
                    cur.push(w);
                    if w == SENTENCE_END {
                        sentences.push(cur.join(" "));
                        cur.clear();
                    }
                }
                if !cur.is_empty() {
                    sentences.push(cur.join(" "));
                }
                Story { sentences }
            })
            .collect();
        if lm_corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(SyntheticSuite { lm_corpus, pairs, tagging, stories })
    }
}

/// Every word the grammar can emit, for sizing vocabularies in tests.
pub fn lexicon() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = [&NAMES[..], &PLACES, &OBJECTS, &ADJECTIVES, &MOTION_VERBS, &OBJECT_VERBS]
        .iter()
        .flat_map(|group| group.iter().flatten().copied())
        .chain(TEMPLATES.iter().flat_map(|t| t.split(' ')).filter(|w| w.chars().all(|c| !c.is_ascii_uppercase())))
        .collect();
    words.sort_unstable();
    words.dedup();
    words
}
