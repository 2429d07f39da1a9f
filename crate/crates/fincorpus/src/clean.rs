//! Text cleaning: URL removal, character allowlisting, long-token removal
//! and whitespace standardization.
//!
//! Each step is a pure function; [`clean_text`] chains them in a fixed
//! order (URLs first, whitespace last) and repeats the chain until the text
//! stops changing. One pass is not always a fixed point: stripping a control
//! character can expose a URL that the first URL pass could not see, as in
//! `ht\u{0}tp://x`.

use crate::model::{CleanDocument, RawDocument};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    /// Whitespace-delimited tokens longer than this many characters are
    /// dropped. Must be at least 1.
    #[serde(default = "default_max_word_len")]
    pub max_word_len: usize,
    #[serde(default = "default_url_removal")]
    pub url_removal: bool,
}

fn default_max_word_len() -> usize {
    50
}

fn default_url_removal() -> bool {
    true
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            max_word_len: default_max_word_len(),
            url_removal: default_url_removal(),
        }
    }
}

/// `\S*` rather than `\S+` so a bare dangling scheme like `www.` is deleted
/// too; the pipeline guarantees no URL-prefixed token survives cleaning.
fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:https?://|www\.)\S*").expect("static pattern"))
}

pub fn remove_urls(text: &str) -> String {
    url_pattern().replace_all(text, "").into_owned()
}

/// Deletes characters outside the allowlist: letters, digits, whitespace,
/// common punctuation, currency signs, and CJK ideographs plus CJK/fullwidth
/// punctuation. Control, zero-width and replacement characters always go.
pub fn remove_uncommon_chars(text: &str) -> String {
    text.chars().filter(|&c| is_allowed_char(c)).collect()
}

fn is_allowed_char(c: char) -> bool {
    // Tabs and newlines are control characters too; whitespace must win so
    // the whitespace pass sees them.
    if c.is_whitespace() {
        return true;
    }
    if c.is_control()
        || matches!(c, '\u{200B}'..='\u{200F}' | '\u{2060}' | '\u{FEFF}' | '\u{FFFD}')
    {
        return false;
    }
    if c.is_alphanumeric() || c.is_ascii_punctuation() {
        return true;
    }
    matches!(c as u32,
        0x00A1..=0x00BF     // Latin-1 punctuation and signs
        | 0x2010..=0x205E   // general punctuation: dashes, quotes, ellipsis
        | 0x20A0..=0x20CF   // currency signs
        | 0x3000..=0x303F   // CJK symbols and punctuation
        | 0xFF00..=0xFFEF   // fullwidth and halfwidth forms
    )
}

pub fn drop_long_words(text: &str, cfg: &CleaningConfig) -> String {
    text.split_whitespace()
        .filter(|w| w.chars().count() <= cfg.max_word_len)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn standardize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Step names recorded in [`CleanDocument::transforms`], in application
/// order.
pub const TRANSFORM_REMOVE_URLS: &str = "remove_urls";
pub const TRANSFORM_REMOVE_UNCOMMON_CHARS: &str = "remove_uncommon_chars";
pub const TRANSFORM_DROP_LONG_WORDS: &str = "drop_long_words";
pub const TRANSFORM_STANDARDIZE_WHITESPACE: &str = "standardize_whitespace";

fn composite_once(text: &str, cfg: &CleaningConfig) -> String {
    let text = if cfg.url_removal {
        remove_urls(text)
    } else {
        text.to_string()
    };
    let text = remove_uncommon_chars(&text);
    let text = drop_long_words(&text, cfg);
    standardize_whitespace(&text)
}

/// Runs the cleaning chain to a fixed point. Terminates because every pass
/// is non-increasing in character count, and a pass that changes the text
/// without shortening it can only have standardized whitespace, after which
/// the next pass changes nothing.
pub fn clean_text(text: &str, cfg: &CleaningConfig) -> String {
    let mut current = composite_once(text, cfg);
    loop {
        let next = composite_once(&current, cfg);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Cleans `title + " " + body` and records the applied transform names.
pub fn clean_document(doc: &RawDocument, cfg: &CleaningConfig) -> CleanDocument {
    let joined = format!("{} {}", doc.title, doc.body);
    let text = clean_text(&joined, cfg);
    let mut transforms = Vec::with_capacity(4);
    if cfg.url_removal {
        transforms.push(TRANSFORM_REMOVE_URLS.to_string());
    }
    transforms.push(TRANSFORM_REMOVE_UNCOMMON_CHARS.to_string());
    transforms.push(TRANSFORM_DROP_LONG_WORDS.to_string());
    transforms.push(TRANSFORM_STANDARDIZE_WHITESPACE.to_string());
    CleanDocument {
        id: doc.id.clone(),
        original_len: doc.title.chars().count() + doc.body.chars().count(),
        cleaned_len: text.chars().count(),
        transforms,
        text,
    }
}
