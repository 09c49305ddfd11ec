//! Trace events, vocabularies and the integer-coded records consumed by the
//! representation layer.

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One parsed trace line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    #[serde(rename = "ts_ns")]
    pub timestamp_ns: u64,
    #[serde(rename = "host")]
    pub hostname: String,
    #[serde(rename = "cpu")]
    pub cpu_id: u32,
    pub procname: String,
    pub pid: u32,
    pub tid: u32,
    pub sysname: String,
    pub entry: bool,
    pub ret: Option<i64>,
    #[serde(rename = "args")]
    pub extra_args: IndexMap<String, String>,
}

impl Event {
    pub fn validate(&self) -> Result<()> {
        if self.sysname.is_empty() || self.sysname.chars().any(char::is_whitespace) {
            return Err(Error::InvalidEvent(format!(
                "sysname {:?} must be non-empty without whitespace",
                self.sysname
            )));
        }
        match (self.entry, self.ret) {
            (true, Some(_)) => Err(Error::InvalidEvent(format!(
                "entry event {} carries a return value",
                self.sysname
            ))),
            (false, None) => Err(Error::InvalidEvent(format!(
                "exit event {} has no return value",
                self.sysname
            ))),
            _ => Ok(()),
        }
    }
}

/// Simplified return value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RetClass {
    Success,
    Failure,
    Unavailable,
}

impl RetClass {
    pub const ALL: [RetClass; 3] = [RetClass::Success, RetClass::Failure, RetClass::Unavailable];

    /// Row of this class in the return-value embedding table.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetClass::Success => "success",
            RetClass::Failure => "failure",
            RetClass::Unavailable => "unavailable",
        })
    }
}

/// Collapses a raw return value: non-negative is success, negative is
/// failure, absent (entry events) is unavailable.
pub fn ret_simplify(ret: Option<i64>) -> RetClass {
    match ret {
        Some(v) if v >= 0 => RetClass::Success,
        Some(_) => RetClass::Failure,
        None => RetClass::Unavailable,
    }
}

/// Bidirectional token/id map. Ids 0..=2 are reserved for PAD, UNK and MASK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const MASK: u32 = 2;
    pub const RESERVED: [&'static str; 3] = ["<pad>", "<unk>", "<mask>"];
    /// Number of reserved ids preceding corpus tokens.
    pub const N_RESERVED: usize = 3;

    /// Vocabulary holding only the reserved tokens.
    pub fn reserved_only() -> Self {
        Self::from_corpus_tokens(Vec::<String>::new())
    }

    /// Builds a vocab whose corpus tokens follow the reserved ids in the
    /// given order. Reserved literals and duplicates are skipped.
    pub fn from_corpus_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for tok in tokens {
            let tok = tok.into();
            if index.contains_key(&tok) {
                continue;
            }
            index.insert(tok.clone(), all.len() as u32);
            all.push(tok);
        }
        Vocab { tokens: all, index }
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Ids that belong to corpus tokens.
    pub fn corpus_ids(&self) -> std::ops::Range<u32> {
        Self::N_RESERVED as u32..self.tokens.len() as u32
    }

    /// SHA-256 over the newline-joined token list, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        let reserved_ok = tokens.len() >= Self::N_RESERVED
            && tokens
                .iter()
                .zip(Self::RESERVED)
                .all(|(have, want)| have == want);
        if !reserved_ok {
            return Err(Error::config("vocabulary must start with <pad>, <unk>, <mask>"));
        }
        let vocab = Self::from_corpus_tokens(tokens[Self::N_RESERVED..].iter().cloned());
        if vocab.len() != tokens.len() {
            return Err(Error::config("vocabulary contains duplicate tokens"));
        }
        Ok(vocab)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Counts tokens and keeps those seen at least `min_count` times, ordered
/// by descending count then lexicographically.
pub fn build_vocab<I, S>(corpus: I, min_count: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count == 0 {
        return Err(Error::config("min_count must be at least 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for tok in corpus {
        let tok = tok.as_ref();
        match counts.get_mut(tok) {
            Some(c) => *c += 1,
            None => {
                counts.insert(tok.to_owned(), 1);
            }
        }
    }
    vocab_from_counts(counts, min_count)
}

/// Vocabulary from precomputed token counts; same filtering and ordering
/// as [`build_vocab`].
pub fn vocab_from_counts(counts: HashMap<String, usize>, min_count: usize) -> Result<Vocab> {
    if min_count == 0 {
        return Err(Error::config("min_count must be at least 1"));
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(tok, c)| *c >= min_count && !Vocab::RESERVED.contains(&tok.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocab::from_corpus_tokens(kept.into_iter().map(|(t, _)| t)))
}

/// Integer-coded event ready for the representation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventRecord {
    pub sysname_id: u32,
    pub entry: bool,
    pub ret_class: RetClass,
    pub procname_id: u32,
    pub pid: u32,
    pub tid: u32,
    pub timestamp_us: u64,
}

impl EventRecord {
    /// Row of the entry flag in the entry embedding table (exit = 0, entry = 1).
    pub fn entry_index(&self) -> usize {
        usize::from(self.entry)
    }
}

pub fn encode_event(e: &Event, sys_vocab: &Vocab, proc_vocab: &Vocab) -> EventRecord {
    EventRecord {
        sysname_id: sys_vocab.lookup(&e.sysname),
        entry: e.entry,
        ret_class: ret_simplify(e.ret),
        procname_id: proc_vocab.lookup(&e.procname),
        pid: e.pid,
        tid: e.tid,
        timestamp_us: e.timestamp_ns / 1000,
    }
}
