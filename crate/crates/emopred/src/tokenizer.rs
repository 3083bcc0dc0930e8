//! Word-level vocabulary and fixed-length integer encoding.
//!
//! Tokens are whitespace-delimited words of already-cleaned text. Five
//! special ids are reserved at the bottom of every vocabulary:
//! `[PAD]`=0, `[UNK]`=1, `[CLS]`=2, `[SEP]`=3, `[MASK]`=4. Real tokens are
//! ranked by descending corpus frequency (ties broken lexicographically)
//! and assigned ids from 5 upward.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;

/// Literal names of the special tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// First id that can be predicted or masked: everything below is special.
pub const FIRST_REGULAR_ID: usize = 5;

/// Immutable token ↔ id bijection with dense ids `0..size()`.
///
/// A vocabulary holding only the five specials (size 5) is legal — it
/// arises when frequency thresholds exclude every corpus token — but is
/// useless for modeling, so builders warn via their return rather than
/// forbid it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token: tokens,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// One token per line, line number = id.
    fn serialize(&self) -> String {
        let mut out = String::new();
        for tok in &self.id_to_token {
            let _ = writeln!(out, "{tok}");
        }
        out
    }

    /// Hex SHA-256 of the serialized vocabulary, used to tie checkpoints to
    /// the exact vocabulary they were trained with.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = content.lines().map(str::to_string).collect();
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Data(format!(
                "vocabulary file {path:?} has only {} lines",
                tokens.len()
            )));
        }
        for (id, name) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[id] != *name {
                return Err(Error::Data(format!(
                    "vocabulary line {id} is {:?}, expected {name:?}",
                    tokens[id]
                )));
            }
        }
        Self::from_tokens(tokens)
    }
}

/// Build a vocabulary from cleaned texts. `max_size` bounds the total size
/// including the five specials; tokens seen fewer than `min_freq` times are
/// excluded, as is any corpus token spelled like a special name.
pub fn build_vocab<S: AsRef<str>>(
    corpus: &[S],
    min_freq: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    if min_freq < 1 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    if max_size < 6 {
        return Err(Error::Config(format!(
            "max_size {max_size} leaves no room beyond the 5 special tokens"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for text in corpus {
        for tok in text.as_ref().split_whitespace() {
            if SPECIAL_TOKENS.contains(&tok) {
                continue;
            }
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, n)| n >= min_freq)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - SPECIAL_TOKENS.len());

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

/// A tweet encoded to fixed length: `[CLS] w1 … wn [SEP] [PAD]…`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// 1 for real positions (including CLS/SEP), 0 for padding.
    pub attention_mask: Vec<u8>,
    /// Number of non-padding positions; `ids[true_length - 1]` is SEP.
    pub true_length: usize,
}

/// Encode cleaned text. Unknown words map to UNK; sequences longer than
/// `max_len` keep their head (the first `max_len - 2` words) — tweets
/// front-load content.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len < 3 {
        return Err(Error::Config(format!(
            "max_len {max_len} cannot hold CLS, SEP, and a token"
        )));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    for tok in text.split_whitespace().take(max_len - 2) {
        ids.push(vocab.id(tok).unwrap_or(UNK));
    }
    ids.push(SEP);
    let true_length = ids.len();
    ids.resize(max_len, PAD);
    let mut attention_mask = vec![1u8; true_length];
    attention_mask.resize(max_len, 0);
    Ok(TokenSequence {
        ids,
        attention_mask,
        true_length,
    })
}

/// Map ids back to token strings (specials render as their literal names).
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Result<Vec<String>> {
    ids.iter()
        .map(|&id| {
            vocab
                .token(id)
                .map(str::to_string)
                .ok_or_else(|| Error::Data(format!("id {id} out of range for V={}", vocab.size())))
        })
        .collect()
}
