//! Tokenization and transcript ingestion.
//!
//! The tokenizer is word level: text is split on Unicode whitespace and any
//! trailing run of `.,;:!?` is peeled off into one token per character. Ids
//! are handed out in first-seen order and never change once assigned.

pub mod synth;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a [`Vocabulary`].
pub type TokenId = u32;

/// End-of-text symbol; id 0 in every session vocabulary.
pub const EOT: &str = "<eot>";
/// Role tag placed before each user turn in an assembled context.
pub const USER_TAG: &str = "<user>";
/// Role tag placed before each assistant turn in an assembled context.
pub const ASSISTANT_TAG: &str = "<assistant>";

/// Id of [`EOT`] in a vocabulary built with [`Vocabulary::with_reserved`].
pub const EOT_ID: TokenId = 0;
pub const USER_ID: TokenId = 1;
pub const ASSISTANT_ID: TokenId = 2;

const TRAILING_PUNCT: [char; 6] = ['.', ',', ';', ':', '!', '?'];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("invalid token id {id} (vocabulary has {size} symbols)")]
    InvalidTokenId { id: TokenId, size: usize },
    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("roles must alternate user/assistant starting with user")]
    BadRoleSequence,
}

/// Ordered set of unique symbols with a reverse lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    symbols: Vec<String>,
    lookup: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(symbols: Vec<String>) -> Self {
        let mut vocab = Vocabulary::new();
        for s in symbols {
            vocab.intern(&s);
        }
        vocab
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.symbols
    }
}

impl Vocabulary {
    /// A vocabulary with no symbols at all.
    pub fn new() -> Self {
        Self::default()
    }

    /// A session vocabulary: `<eot>`, `<user>`, `<assistant>` at ids 0, 1, 2.
    pub fn with_reserved() -> Self {
        let mut vocab = Self::new();
        vocab.intern(EOT);
        vocab.intern(USER_TAG);
        vocab.intern(ASSISTANT_TAG);
        vocab
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.lookup.get(symbol).copied()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Returns the id of `symbol`, appending it if unseen.
    pub fn intern(&mut self, symbol: &str) -> TokenId {
        if let Some(id) = self.id(symbol) {
            return id;
        }
        let id = self.symbols.len() as TokenId;
        self.symbols.push(symbol.to_owned());
        self.lookup.insert(symbol.to_owned(), id);
        id
    }
}

/// Splits text into word and punctuation symbols.
pub fn split_symbols(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let stem = word.trim_end_matches(TRAILING_PUNCT);
        if !stem.is_empty() {
            out.push(stem);
        }
        let tail = &word[stem.len()..];
        for (i, c) in tail.char_indices() {
            out.push(&tail[i..i + c.len_utf8()]);
        }
    }
    out
}

/// Maps text to token ids. With `grow` set, unseen symbols are appended to
/// `vocab`; otherwise they are an error.
pub fn tokenize(text: &str, vocab: &mut Vocabulary, grow: bool) -> Result<Vec<TokenId>, CorpusError> {
    split_symbols(text)
        .into_iter()
        .map(|sym| {
            if grow {
                Ok(vocab.intern(sym))
            } else {
                vocab
                    .id(sym)
                    .ok_or_else(|| CorpusError::UnknownSymbol(sym.to_owned()))
            }
        })
        .collect()
}

/// Joins the symbols for `seq` with single spaces.
pub fn detokenize(seq: &[TokenId], vocab: &Vocabulary) -> Result<String, CorpusError> {
    let mut parts = Vec::with_capacity(seq.len());
    for &id in seq {
        let sym = vocab.symbol(id).ok_or(CorpusError::InvalidTokenId {
            id,
            size: vocab.len(),
        })?;
        parts.push(sym);
    }
    Ok(parts.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// One multi-turn conversation. Assistant turns are optional references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub category: String,
    pub turns: Vec<Turn>,
}

impl Transcript {
    fn validate_roles(&self) -> bool {
        let mut users = 0;
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return false;
            }
            if turn.role == Role::User {
                users += 1;
            }
        }
        users > 0
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
    }

    /// Reference answer following user turn `i`, if the file carries one.
    pub fn reference(&self, i: usize) -> Option<&str> {
        self.turns
            .get(2 * i + 1)
            .filter(|t| t.role == Role::Assistant)
            .map(|t| t.text.as_str())
    }
}

#[derive(Deserialize)]
struct RawTranscript {
    id: Option<String>,
    category: Option<String>,
    turns: Option<Vec<Turn>>,
}

/// Parses one JSON-lines transcript record. `line` is 1-based and only used
/// for error reporting.
pub fn parse_transcript(text: &str, line: usize) -> Result<Transcript, CorpusError> {
    let err = |kind| CorpusError::Parse { line, kind };
    let raw: RawTranscript =
        serde_json::from_str(text).map_err(|e| err(ParseErrorKind::Json(e.to_string())))?;
    let transcript = Transcript {
        id: raw.id.ok_or_else(|| err(ParseErrorKind::MissingField("id")))?,
        category: raw.category.unwrap_or_default(),
        turns: raw
            .turns
            .ok_or_else(|| err(ParseErrorKind::MissingField("turns")))?,
    };
    if !transcript.validate_roles() {
        return Err(err(ParseErrorKind::BadRoleSequence));
    }
    Ok(transcript)
}

/// Loads a JSON-lines transcript file. Blank lines are skipped.
pub fn load_transcripts(path: impl AsRef<Path>) -> Result<Vec<Transcript>, CorpusError> {
    let file = File::open(path.as_ref()).map_err(|e| CorpusError::Io(e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_transcript(&line, i + 1)?);
    }
    Ok(out)
}

/// Serializes transcripts one per line, in order.
pub fn transcripts_to_jsonl(transcripts: &[Transcript]) -> String {
    let mut out = String::new();
    for t in transcripts {
        out.push_str(&serde_json::to_string(t).expect("transcript serializes"));
        out.push('\n');
    }
    out
}

/// A transcript mapped to token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTranscript {
    pub id: String,
    pub category: String,
    pub user_turns: Vec<Vec<TokenId>>,
    pub references: Vec<Option<Vec<TokenId>>>,
}

/// Encodes a transcript. `vocab` must have been built with
/// [`Vocabulary::with_reserved`].
pub fn encode_transcript(
    transcript: &Transcript,
    vocab: &mut Vocabulary,
    grow: bool,
) -> Result<EncodedTranscript, CorpusError> {
    let mut user_turns = Vec::new();
    let mut references = Vec::new();
    for (i, text) in transcript.user_turns().enumerate() {
        user_turns.push(tokenize(text, vocab, grow)?);
        references.push(match transcript.reference(i) {
            Some(r) => Some(tokenize(r, vocab, grow)?),
            None => None,
        });
    }
    Ok(EncodedTranscript {
        id: transcript.id.clone(),
        category: transcript.category.clone(),
        user_turns,
        references,
    })
}

/// Encodes a whole corpus into one growing session vocabulary.
pub fn encode_corpus(
    transcripts: &[Transcript],
    vocab: &mut Vocabulary,
) -> Result<Vec<EncodedTranscript>, CorpusError> {
    transcripts
        .iter()
        .map(|t| encode_transcript(t, vocab, true))
        .collect()
}

/// The tokens appended to the running context when user turn `user` starts:
/// `<user> text... <assistant>`.
pub fn turn_prompt(user: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(user.len() + 2);
    out.push(USER_ID);
    out.extend_from_slice(user);
    out.push(ASSISTANT_ID);
    out
}

/// The full conversation with reference answers, each terminated by `<eot>`.
/// This is what the reference models are trained on.
pub fn training_sequence(t: &EncodedTranscript) -> Vec<TokenId> {
    let mut out = Vec::new();
    for (user, reference) in t.user_turns.iter().zip(&t.references) {
        out.extend(turn_prompt(user));
        if let Some(r) = reference {
            out.extend_from_slice(r);
            out.push(EOT_ID);
        }
    }
    out
}
