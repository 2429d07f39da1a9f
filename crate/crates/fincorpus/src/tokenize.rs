//! Reference tokenizer shared by the language model, repetition statistics
//! and shingling.
//!
//! The rules are deliberately tiny so the token stream is reproducible
//! anywhere: lowercase, split on whitespace and punctuation, and emit each
//! CJK ideograph as its own token (Chinese has no useful whitespace
//! boundaries). Production systems would swap in a trained tokenizer; the
//! trait keeps that door open without shipping one.

/// Anything that turns text into a token stream.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// The built-in deterministic bilingual tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct BasicTokenizer;

impl Tokenizer for BasicTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text)
    }
}

pub(crate) fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF)
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_splits_on_punctuation() {
        assert_eq!(tokenize("Apple Q3: profit up 5%!"), ["apple", "q3", "profit", "up", "5"]);
    }

    #[test]
    fn cjk_characters_become_single_tokens() {
        assert_eq!(tokenize("股价上涨"), ["股", "价", "上", "涨"]);
        assert_eq!(tokenize("AAPL股价涨了"), ["aapl", "股", "价", "涨", "了"]);
    }

    #[test]
    fn empty_and_punctuation_only_inputs_yield_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("?! ... --").is_empty());
    }

    #[test]
    fn apostrophes_split_words() {
        assert_eq!(tokenize("don't"), ["don", "t"]);
    }

    #[test]
    fn deterministic_across_calls() {
        let text = "Mixed 中文 and English, twice.";
        assert_eq!(tokenize(text), tokenize(text));
    }
}
