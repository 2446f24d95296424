use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{LabelSet, GRAMMAR_TAGS};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

const PUNCT: [&str; 4] = [",", ".", ";", ":"];

/// Section template words, canonical negatives, the query and a small
/// clinical lexicon. Case-sensitive.
pub const BASE_WORDS: &[&str] = &[
    "Analyze",
    "ECG",
    "Evidence",
    "Findings",
    "Increased",
    "Normal",
    "No",
    "Pathological",
    "Prolonged",
    "Q",
    "QRS",
    "Regular",
    "ST",
    "Sinus",
    "T",
    "P",
    "PR",
    "abnormalities",
    "and",
    "anterior",
    "atrial",
    "axis",
    "block",
    "bpm",
    "branch",
    "bundle",
    "conduction",
    "consistent",
    "depression",
    "deviation",
    "duration",
    "elevation",
    "fibrillation",
    "hypertrophy",
    "identified",
    "in",
    "inferior",
    "infarction",
    "interval",
    "inversion",
    "is",
    "lateral",
    "leads",
    "left",
    "morphological",
    "normal",
    "not",
    "of",
    "present",
    "rate",
    "rhythm",
    "right",
    "segment",
    "the",
    "ventricular",
    "voltage",
    "wave",
    "waves",
    "with",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Tag,
    Punct,
    Word,
}

fn class_of(token: &str) -> Class {
    if token.starts_with('<') {
        Class::Tag
    } else if PUNCT.contains(&token) {
        Class::Punct
    } else {
        Class::Word
    }
}

/// Token ids for one sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        TokenSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Closed word/tag vocabulary.
///
/// Decoding inserts a single space before a word that follows a word or a
/// punctuation mark and nothing anywhere else, so `encode(decode(ids)) == ids`
/// for every id sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tokenizer {
    /// Standard vocabulary extended with the given diagnosis labels.
    pub fn new(labels: &LabelSet) -> Self {
        let mut tokens: Vec<String> = [PAD, UNK, EOS].iter().map(|s| s.to_string()).collect();
        tokens.extend(GRAMMAR_TAGS.iter().map(|s| s.to_string()));
        tokens.extend(PUNCT.iter().map(|s| s.to_string()));
        tokens.extend((0..10).map(|d| d.to_string()));
        tokens.extend(BASE_WORDS.iter().map(|s| s.to_string()));
        for label in labels.iter() {
            // Multi-word labels are spelled with their words.
            for word in label.split(' ') {
                tokens.push(word.to_string());
            }
        }
        Self::from_tokens(tokens).expect("standard vocabulary is well formed")
    }

    /// Rebuilds a tokenizer from a stored token list, dropping duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        let mut unique = Vec::with_capacity(tokens.len());
        for t in tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!("bad vocabulary entry {t:?}")));
            }
            if !index.contains_key(&t) {
                index.insert(t.clone(), unique.len());
                unique.push(t);
            }
        }
        for required in [PAD, UNK, EOS] {
            if !index.contains_key(required) {
                return Err(Error::InvalidInput(format!("vocabulary lacks {required}")));
            }
        }
        Ok(Tokenizer {
            tokens: unique,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn eos(&self) -> usize {
        self.index[EOS]
    }

    pub fn unk(&self) -> usize {
        self.index[UNK]
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        let mut rest = text;
        loop {
            rest = rest.trim_start();
            let Some(c) = rest.chars().next() else { break };
            let len = if c == '<' {
                rest.find('>').map_or(rest.len(), |p| p + 1)
            } else if PUNCT.iter().any(|p| rest.starts_with(p)) {
                1
            } else {
                rest.find(|ch: char| {
                    ch.is_whitespace() || ch == '<' || PUNCT.iter().any(|p| p.starts_with(ch))
                })
                .unwrap_or(rest.len())
            };
            let piece = &rest[..len];
            rest = &rest[len..];
            match self.id(piece) {
                Some(id) => ids.push(id),
                None if c != '<' && piece.chars().all(|ch| ch.is_ascii_digit()) => {
                    ids.extend(piece.chars().map(|d| self.index[&d.to_string()]));
                }
                None => ids.push(self.unk()),
            }
        }
        TokenSequence { ids }
    }

    pub fn decode(&self, seq: &TokenSequence) -> String {
        let mut out = String::new();
        let mut prev: Option<Class> = None;
        for &id in &seq.ids {
            let token = self.token(id).unwrap_or(UNK);
            let class = class_of(token);
            if class == Class::Word && matches!(prev, Some(Class::Word | Class::Punct)) {
                out.push(' ');
            }
            out.push_str(token);
            prev = Some(class);
        }
        out
    }

    /// Decodes generated ids, dropping everything from the first end token.
    pub fn decode_generated(&self, seq: &TokenSequence) -> String {
        let eos = self.eos();
        let end = seq
            .ids
            .iter()
            .position(|&i| i == eos)
            .unwrap_or(seq.ids.len());
        self.decode(&TokenSequence::new(seq.ids[..end].to_vec()))
    }

    /// Encodes a target trace and appends the end token.
    pub fn encode_target(&self, text: &str) -> TokenSequence {
        let mut seq = self.encode(text);
        seq.ids.push(self.eos());
        seq
    }
}
