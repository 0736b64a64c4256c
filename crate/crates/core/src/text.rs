//! Tokenizer and suffix stemmer shared by the catalog and the query matcher.
//!
//! Both sides of every lexical comparison (utterances, synonyms, codebook
//! labels, trigger phrases) go through [`tokenize`], so a synonym written as
//! "day of the month" and an utterance containing "days of the month" meet in
//! the same normalized form.

use std::collections::HashSet;
use std::sync::LazyLock;

/// Versioned stop-word list shipped with the repository.
pub const STOPWORDS_V1: &str = include_str!("../../../catalog/stopwords.txt");

static STOPWORDS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    STOPWORDS_V1
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .collect()
});

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(word)
}

/// Strips one inflectional suffix. The rule set is fixed:
///
/// * `-ies` → `-y` (`categories` → `category`)
/// * `-ing` when at least three letters remain (`lighting` → `light`)
/// * `-es` after a sibilant (`sexes` → `sex`, `crashes` → `crash`)
/// * `-s` unless the word ends in `ss`, `us` or `is` (`months` → `month`)
///
/// Words shorter than four letters and numbers are left untouched.
pub fn stem(word: &str) -> String {
    if word.len() < 4 || word.bytes().all(|b| b.is_ascii_digit()) {
        return word.to_string();
    }
    if word.len() >= 5 {
        if let Some(base) = word.strip_suffix("ies") {
            return format!("{base}y");
        }
    }
    if word.len() >= 6 {
        if let Some(base) = word.strip_suffix("ing") {
            return base.to_string();
        }
    }
    if word.len() >= 5 {
        if let Some(base) = word.strip_suffix("es") {
            if ["s", "x", "z", "ch", "sh"].iter().any(|s| base.ends_with(s)) {
                return base.to_string();
            }
        }
    }
    if word.ends_with('s') && !["ss", "us", "is"].iter().any(|s| word.ends_with(s)) {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Splits on anything that is not alphanumeric, lowercases, drops stop
/// words and stems what remains. Order is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !is_stopword(w))
        .map(|w| stem(&w))
        .collect()
}

/// Normalized phrase key: the tokens joined by single spaces.
pub fn phrase_key(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Lowercases and collapses whitespace without stemming or stop-word removal.
pub fn squash(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
