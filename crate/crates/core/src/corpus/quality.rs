use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Document, Verdict};

/// Thresholds of the heuristic quality filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityConfig {
    pub min_chars: usize,
    pub min_words: usize,
    pub word_repetition_n: usize,
    pub max_word_repetition: f64,
    pub char_repetition_n: usize,
    pub max_char_repetition: f64,
    pub max_non_alpha: f64,
    pub max_url_ratio: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            min_chars: 200,
            min_words: 40,
            word_repetition_n: 5,
            max_word_repetition: 0.19,
            char_repetition_n: 10,
            max_char_repetition: 0.106,
            max_non_alpha: 0.4,
            max_url_ratio: 0.2,
        }
    }
}

/// Share of word n-gram occurrences that belong to n-grams seen more than once.
pub fn word_repetition_ratio(text: &str, n: usize) -> f64 {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < n || n == 0 {
        return 0.0;
    }
    let mut freq: HashMap<&[&str], usize> = HashMap::new();
    for w in words.windows(n) {
        *freq.entry(w).or_default() += 1;
    }
    let total: usize = freq.values().sum();
    let repeated: usize = freq.values().filter(|&&c| c > 1).sum();
    repeated as f64 / total as f64
}

/// Occurrences covered by the ⌊√m⌋ most frequent character n-grams (m =
/// distinct n-grams; only n-grams occurring more than once are eligible)
/// over all n-gram occurrences.
pub fn char_repetition_ratio(text: &str, n: usize) -> f64 {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < n || n == 0 {
        return 0.0;
    }
    let mut freq: HashMap<&[char], usize> = HashMap::new();
    for w in chars.windows(n) {
        *freq.entry(w).or_default() += 1;
    }
    let mut counts: Vec<usize> = freq.into_values().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let singles = counts.iter().filter(|&&c| c == 1).count();
    let top = ((counts.len() as f64).sqrt() as usize).min(counts.len() - singles);
    let total: usize = counts.iter().sum();
    counts[..top].iter().sum::<usize>() as f64 / total as f64
}

/// Characters that are neither alphabetic nor whitespace, over all characters.
pub fn non_alpha_ratio(text: &str) -> f64 {
    let (mut total, mut other) = (0usize, 0usize);
    for c in text.chars() {
        total += 1;
        if !c.is_alphabetic() && !c.is_whitespace() {
            other += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        other as f64 / total as f64
    }
}

fn is_url_token(t: &str) -> bool {
    let t = t.to_ascii_lowercase();
    t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.")
}

/// Whitespace tokens that look like URLs, over all tokens.
pub fn url_token_ratio(text: &str) -> f64 {
    let (mut total, mut urls) = (0usize, 0usize);
    for t in text.split_whitespace() {
        total += 1;
        urls += is_url_token(t) as usize;
    }
    if total == 0 {
        0.0
    } else {
        urls as f64 / total as f64
    }
}

/// Applies the filters in order and reports the first failing one.
pub fn quality_filter(doc: &Document, cfg: &QualityConfig) -> Verdict {
    let text = doc.text.as_str();
    if text.chars().count() < cfg.min_chars {
        return Verdict::Reject("min-length");
    }
    if text.split_whitespace().count() < cfg.min_words {
        return Verdict::Reject("min-words");
    }
    if word_repetition_ratio(text, cfg.word_repetition_n) > cfg.max_word_repetition {
        return Verdict::Reject("word-repetition");
    }
    if char_repetition_ratio(text, cfg.char_repetition_n) > cfg.max_char_repetition {
        return Verdict::Reject("char-repetition");
    }
    if non_alpha_ratio(text) > cfg.max_non_alpha {
        return Verdict::Reject("non-alpha");
    }
    if url_token_ratio(text) > cfg.max_url_ratio {
        return Verdict::Reject("url-ratio");
    }
    Verdict::Keep
}
