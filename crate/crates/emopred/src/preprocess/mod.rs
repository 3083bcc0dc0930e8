//! Tweet cleaning and optional stemming.
//!
//! Cleaning walks the text token by token (a token here is a maximal run
//! of non-whitespace): URLs collapse to the `<url>` sentinel, emoji glyphs
//! are always removed from bodies (they are the labels this pipeline
//! predicts — leaving them in would leak the answer), case folding and
//! punctuation stripping follow the config, and `#`/`@` survive stripping
//! only as word-initial markers when their keep-flags are set.
//!
//! [`clean_text`] is idempotent under every configuration. Stemming is
//! not (Porter makes no such promise), which is why it lives in the
//! separate [`preprocess_text`] applied once per record, never re-applied.

pub mod porter;

pub use porter::porter_stem;

use crate::data::RawTweetRecord;

/// Sentinel that replaces any URL-shaped token.
pub const URL_SENTINEL: &str = "<url>";

/// Cleaning switches. All fields are explicit — defaults are the CLI's
/// business, not this type's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CleanConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub keep_hashtags: bool,
    pub keep_mentions: bool,
    pub enable_stemming: bool,
    pub collapse_whitespace: bool,
}

/// Clean one tweet body. Total and idempotent for every config; never
/// applies stemming.
pub fn clean_text(text: &str, config: &CleanConfig) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_sep = String::new();
    // Walk alternating whitespace / token segments.
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        let is_ws = c.is_whitespace();
        let mut end = start;
        while let Some(&(i, c)) = chars.peek() {
            if c.is_whitespace() != is_ws {
                break;
            }
            end = i + c.len_utf8();
            chars.next();
        }
        let segment = &text[start..end];
        if is_ws {
            pending_sep.push_str(segment);
        } else {
            let cleaned = clean_token(segment, config);
            if !cleaned.is_empty() {
                if !out.is_empty() {
                    if config.collapse_whitespace {
                        out.push(' ');
                    } else {
                        out.push_str(&pending_sep);
                    }
                }
                out.push_str(&cleaned);
                pending_sep.clear();
            }
        }
    }
    out
}

/// Clean, then stem each plain-alphabetic token if the config asks for it.
pub fn preprocess_text(text: &str, config: &CleanConfig) -> String {
    let cleaned = clean_text(text, config);
    if !config.enable_stemming {
        return cleaned;
    }
    map_tokens(&cleaned, |tok| {
        if tok.bytes().all(|b| b.is_ascii_lowercase()) {
            porter_stem(tok)
        } else {
            // Hashtags, mentions, sentinels, numbers, and mixed-case or
            // non-ASCII words bypass the (lowercase-ASCII) stemmer.
            tok.to_string()
        }
    })
}

/// Outcome of corpus-level preprocessing: cleaned records plus how many
/// were dropped for cleaning down to nothing.
#[derive(Debug, Clone)]
pub struct CleanedCorpus {
    pub records: Vec<RawTweetRecord>,
    pub dropped_empty: usize,
}

/// Apply [`preprocess_text`] to every record, dropping records whose text
/// cleans to empty. Labels and order are untouched.
pub fn preprocess_corpus(records: Vec<RawTweetRecord>, config: &CleanConfig) -> CleanedCorpus {
    let mut out = Vec::with_capacity(records.len());
    let mut dropped_empty = 0;
    for mut r in records {
        let text = preprocess_text(&r.text, config);
        if text.is_empty() {
            dropped_empty += 1;
            continue;
        }
        r.text = text;
        out.push(r);
    }
    CleanedCorpus {
        records: out,
        dropped_empty,
    }
}

/// Rewrite each whitespace-delimited token, preserving the separators
/// verbatim.
fn map_tokens(text: &str, f: impl Fn(&str) -> String) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        let is_ws = c.is_whitespace();
        let mut end = start;
        while let Some(&(i, c)) = chars.peek() {
            if c.is_whitespace() != is_ws {
                break;
            }
            end = i + c.len_utf8();
            chars.next();
        }
        let segment = &text[start..end];
        if is_ws {
            out.push_str(segment);
        } else {
            out.push_str(&f(segment));
        }
    }
    out
}

fn clean_token(token: &str, config: &CleanConfig) -> String {
    if token == URL_SENTINEL || is_url(token) {
        return URL_SENTINEL.to_string();
    }

    // Emoji are stripped unconditionally, then case folding, then
    // punctuation. The order matters: folding can expand characters, and
    // stripping must see the folded form.
    let mut folded = String::with_capacity(token.len());
    for c in token.chars() {
        if is_emoji_char(c) {
            continue;
        }
        if config.lowercase {
            folded.extend(c.to_lowercase());
        } else {
            folded.push(c);
        }
    }
    if !config.strip_punctuation {
        return folded;
    }

    let mut scratch = String::with_capacity(folded.len());
    let mut word_open = false;
    for c in folded.chars() {
        let keep_marker = (c == '#' && config.keep_hashtags) || (c == '@' && config.keep_mentions);
        if c.is_alphanumeric() || (keep_marker && !word_open) {
            scratch.push(c);
            word_open = true;
        } else {
            // Any punctuation run becomes a single separator.
            if word_open {
                scratch.push(' ');
            }
            word_open = false;
        }
    }
    // Drop marker-only fragments like a bare "#" left by "##tag".
    let pieces: Vec<&str> = scratch
        .split_whitespace()
        .filter(|p| p.chars().any(|c| c != '#' && c != '@'))
        .collect();
    pieces.join(" ")
}

/// URL-shaped token: http://, https://, or www. prefix, case-insensitive.
fn is_url(token: &str) -> bool {
    let starts = |prefix: &str| {
        token
            .get(..prefix.len())
            .is_some_and(|head| head.eq_ignore_ascii_case(prefix))
    };
    starts("http://") || starts("https://") || starts("www.")
}

/// Codepoints treated as emoji glyphs: the main symbol/pictograph planes
/// plus joiners, variation selectors, and keycap marks that only appear as
/// part of emoji clusters.
fn is_emoji_char(c: char) -> bool {
    matches!(u32::from(c),
        0x1F000..=0x1FAFF  // pictographs, emoticons, transport, supplemental
        | 0x2600..=0x27BF  // miscellaneous symbols and dingbats
        | 0x2B00..=0x2BFF  // additional symbols (stars, squares)
        | 0xFE00..=0xFE0F  // variation selectors
        | 0x200D           // zero-width joiner
        | 0x20E3           // combining keycap
    )
}
