//! Seeded generators for the shipped synthetic corpora.
//!
//! Text is built from pseudo-words so that every short window of words is
//! effectively unique across the corpus. Repetition is planted in two places:
//! answers quote short runs of a source passage given in the first user turn,
//! and later answers restate earlier ones with light edits. Quotes are
//! followed by different words than in the passage, so a short match on a
//! quote points at the wrong continuation.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Role, Transcript, Turn};

/// Seed used for the checked-in corpora.
pub const DEFAULT_CORPUS_SEED: u64 = 20250212;
/// Transcripts per shipped corpus.
pub const DEFAULT_CORPUS_SIZE: usize = 60;

/// Longest run of passage words an answer sentence quotes.
const MAX_QUOTE: usize = 9;
/// Sentences in the source passage of the first user turn.
const PASSAGE_SENTENCES: usize = 6;
/// Fraction of answer sentences that quote the passage.
const QUOTE_RATE: f64 = 0.6;
/// Per-sentence chance that a restatement swaps one word.
const SWAP_RATE: f64 = 0.25;
/// Per-sentence chance that a restatement inserts a new sentence after it.
const INSERT_RATE: f64 = 0.12;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const CATEGORIES: [&str; 8] = [
    "writing",
    "roleplay",
    "reasoning",
    "math",
    "coding",
    "extraction",
    "stem",
    "humanities",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    /// Turn 2 asks for a lightly edited version of the turn-1 answer.
    Redundant2Turn,
    /// Turn 2 asks about something unrelated.
    Novel2Turn,
    /// Three turns, each refining the previous answer.
    SelfCorrect3Turn,
}

impl CorpusKind {
    pub const ALL: [CorpusKind; 3] = [
        CorpusKind::Redundant2Turn,
        CorpusKind::Novel2Turn,
        CorpusKind::SelfCorrect3Turn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorpusKind::Redundant2Turn => "redundant-2turn",
            CorpusKind::Novel2Turn => "novel-2turn",
            CorpusKind::SelfCorrect3Turn => "selfcorrect-3turn",
        }
    }
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorpusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CorpusKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown corpus kind {s:?}"))
    }
}

struct WordSource {
    rng: ChaCha8Rng,
    content: Vec<String>,
    unique: Vec<String>,
}

impl WordSource {
    fn new(seed: u64, content_size: usize, unique_size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut words = Vec::with_capacity(content_size + unique_size);
        while words.len() < content_size + unique_size {
            let syllables = rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
                w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
            }
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let unique = words.split_off(content_size);
        WordSource {
            rng,
            content: words,
            unique,
        }
    }

    fn word(&mut self) -> String {
        self.content[self.rng.gen_range(0..self.content.len())].clone()
    }

    /// A word used nowhere else in the corpus.
    fn fresh(&mut self) -> String {
        self.unique.pop().expect("unique word pool exhausted")
    }

    fn sentence(&mut self) -> String {
        let n = self.rng.gen_range(8..=14);
        let mut words: Vec<String> = (0..n).map(|_| self.word()).collect();
        if let Some(last) = words.last_mut() {
            last.push('.');
        }
        words.join(" ")
    }

    /// A source passage as word lists, one per sentence.
    fn passage(&mut self, n: usize) -> Vec<Vec<String>> {
        (0..n)
            .map(|_| {
                let len = self.rng.gen_range(10..=14);
                (0..len).map(|_| self.word()).collect()
            })
            .collect()
    }

    /// A sentence quoting `2..=max_quote` consecutive words of `src`. The
    /// quote never includes the last word, so the passage and the sentence
    /// continue differently after it.
    fn quoting_sentence(&mut self, src: &[String], max_quote: usize) -> String {
        let len = self.rng.gen_range(2..=max_quote.min(src.len() - 1));
        let start = self.rng.gen_range(0..src.len() - len);
        let quote = src[start..start + len].to_vec();
        let before = self.rng.gen_range(1..=4);
        let after = self.rng.gen_range(2..=5);
        let mut words: Vec<String> = (0..before).map(|_| self.word()).collect();
        words.extend(quote);
        words.extend((0..after).map(|_| self.word()));
        if let Some(last) = words.last_mut() {
            last.push('.');
        }
        words.join(" ")
    }

    /// An answer that quotes the passage in about `quote_rate` of its
    /// sentences, each passage sentence at most once. The flags mark quoting
    /// sentences.
    fn answer(&mut self, passage: &[Vec<String>], max_quote: usize, quote_rate: f64) -> Answer {
        let n = self.rng.gen_range(5..=8);
        let mut unquoted: Vec<&Vec<String>> = passage.iter().collect();
        unquoted.shuffle(&mut self.rng);
        let mut answer = Answer::default();
        for _ in 0..n {
            if self.rng.gen_bool(quote_rate) && !unquoted.is_empty() {
                let src = unquoted.pop().expect("non-empty");
                answer.push(self.quoting_sentence(src, max_quote), true);
            } else {
                answer.push(self.sentence(), false);
            }
        }
        answer
    }

    /// Light edit of an answer: some sentences get one word swapped, some
    /// get a new sentence inserted after them. Quoting sentences are kept
    /// verbatim.
    fn vary(&mut self, answer: &Answer) -> Answer {
        let mut out = Answer::default();
        for (s, &quoting) in answer.sentences.iter().zip(&answer.quoting) {
            let r: f64 = self.rng.gen();
            if r < SWAP_RATE && !quoting {
                let mut words: Vec<String> = s.split(' ').map(str::to_owned).collect();
                let i = self.rng.gen_range(0..words.len());
                let punct = words[i].ends_with('.');
                words[i] = self.word();
                if punct {
                    words[i].push('.');
                }
                out.push(words.join(" "), false);
            } else {
                out.push(s.clone(), quoting);
                if r > 1.0 - INSERT_RATE {
                    out.push(self.sentence(), false);
                }
            }
        }
        out
    }
}

#[derive(Default)]
struct Answer {
    sentences: Vec<String>,
    quoting: Vec<bool>,
}

impl Answer {
    fn push(&mut self, sentence: String, quoting: bool) {
        self.sentences.push(sentence);
        self.quoting.push(quoting);
    }
}

fn join(words: &[Vec<String>]) -> String {
    let sentences: Vec<String> = words.iter().map(|w| format!("{}.", w.join(" "))).collect();
    sentences.join(" ")
}

fn user(text: String) -> Turn {
    Turn {
        role: Role::User,
        text,
    }
}

fn assistant(answer: &Answer) -> Turn {
    Turn {
        role: Role::Assistant,
        text: answer.sentences.join(" "),
    }
}

/// Generates `count` transcripts of the given kind. Identical arguments
/// always give identical output.
pub fn generate(kind: CorpusKind, count: usize, seed: u64) -> Vec<Transcript> {
    let mut src = WordSource::new(seed ^ kind as u64, 2500, 12 * count + 16);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let topic = format!("{} {} {}", src.fresh(), src.fresh(), src.fresh());
        let category = CATEGORIES[i % CATEGORIES.len()].to_owned();
        let passage = src.passage(PASSAGE_SENTENCES);
        let source = join(&passage);
        let turns = match kind {
            CorpusKind::Redundant2Turn => {
                let a1 = src.answer(&passage, MAX_QUOTE, QUOTE_RATE);
                let a2 = src.vary(&a1);
                vec![
                    user(format!(
                        "explain {topic} in plain words for {} : {source}",
                        src.fresh()
                    )),
                    assistant(&a1),
                    user(format!(
                        "rewrite your answer about {topic} with small edits for {}",
                        src.fresh()
                    )),
                    assistant(&a2),
                ]
            }
            CorpusKind::Novel2Turn => {
                // Quotes stay shorter than the target's context so that a
                // single occurrence in the answer cannot tie with the source.
                let a1 = src.answer(&passage, 3, QUOTE_RATE);
                let other = format!("{} {}", src.fresh(), src.fresh());
                let a2 = src.answer(&passage, 3, 0.0);
                vec![
                    user(format!(
                        "explain {topic} in plain words for {} : {source}",
                        src.fresh()
                    )),
                    assistant(&a1),
                    user(format!("now explain {other} instead for {}", src.fresh())),
                    assistant(&a2),
                ]
            }
            CorpusKind::SelfCorrect3Turn => {
                let a1 = src.answer(&passage, MAX_QUOTE, QUOTE_RATE);
                let a2 = src.vary(&a1);
                let a3 = src.vary(&a2);
                vec![
                    user(format!(
                        "solve {topic} step by step for {} : {source}",
                        src.fresh()
                    )),
                    assistant(&a1),
                    user(format!(
                        "check each step of your solution and fix mistakes for {}",
                        src.fresh()
                    )),
                    assistant(&a2),
                    user(format!(
                        "write out the corrected solution in full for {}",
                        src.fresh()
                    )),
                    assistant(&a3),
                ]
            }
        };
        out.push(Transcript {
            id: format!("{}-{:03}", kind.name(), i),
            category,
            turns,
        });
    }
    out
}

/// Token sequences over `0..vocab_size` where each token is a fixed function
/// of the previous `gamma` tokens, except for a `noise` fraction of uniformly
/// random tokens. Used to plant a left-context dependence of known width.
pub fn planted_left_dependence(
    vocab_size: usize,
    gamma: usize,
    sequences: usize,
    length: usize,
    noise: f64,
    seed: u64,
) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contexts = vocab_size.pow(gamma as u32);
    let table: Vec<u32> = (0..contexts)
        .map(|_| rng.gen_range(0..vocab_size as u32))
        .collect();
    let mut out = Vec::with_capacity(sequences);
    for _ in 0..sequences {
        let mut seq: Vec<u32> = (0..gamma).map(|_| rng.gen_range(0..vocab_size as u32)).collect();
        while seq.len() < length {
            let next = if rng.gen_bool(noise) {
                rng.gen_range(0..vocab_size as u32)
            } else {
                let key = seq[seq.len() - gamma..]
                    .iter()
                    .fold(0usize, |acc, &t| acc * vocab_size + t as usize);
                table[key]
            };
            seq.push(next);
        }
        out.push(seq);
    }
    out
}

/// Shuffles a slice with a seeded generator.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        for kind in CorpusKind::ALL {
            let a = generate(kind, 12, 5);
            assert_eq!(a, generate(kind, 12, 5));
            assert_eq!(a.len(), 12);
            let turns = if kind == CorpusKind::SelfCorrect3Turn {
                6
            } else {
                4
            };
            assert!(a.iter().all(|t| t.turns.len() == turns && t.validate_roles()));
        }
    }

    #[test]
    fn kind_names_roundtrip() {
        for kind in CorpusKind::ALL {
            assert_eq!(kind.name().parse::<CorpusKind>().unwrap(), kind);
        }
    }

    #[test]
    fn planted_sequences_follow_table_without_noise() {
        let seqs = planted_left_dependence(5, 2, 3, 30, 0.0, 1);
        let mut seen = std::collections::HashMap::new();
        for s in &seqs {
            for w in s.windows(3) {
                let prev = seen.insert((w[0], w[1]), w[2]);
                assert!(prev.is_none() || prev == Some(w[2]));
            }
        }
    }
}
