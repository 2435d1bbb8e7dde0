use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Document, Source};
use crate::tokenizer::TokenizerModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub input: usize,
    pub kept: usize,
    pub rejected: usize,
    pub reasons: BTreeMap<String, usize>,
}

impl StageReport {
    pub fn new(name: &str, input: usize) -> Self {
        Self {
            name: name.to_string(),
            input,
            kept: 0,
            rejected: 0,
            reasons: BTreeMap::new(),
        }
    }

    pub(crate) fn reject(&mut self, reason: &str) {
        self.rejected += 1;
        *self.reasons.entry(reason.to_string()).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub documents: usize,
    pub document_proportion: f64,
    pub tokens: usize,
    pub token_proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_documents: usize,
    pub stages: Vec<StageReport>,
    pub documents: usize,
    pub tokens: usize,
    /// `whitespace` or `subword`.
    pub token_unit: String,
    pub sources: BTreeMap<String, SourceStats>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-source document and token counts with their proportions. Tokens are
/// whitespace-separated words, or subwords when a tokenizer is given.
pub fn corpus_stats(docs: &[Document], tokenizer: Option<&TokenizerModel>) -> FilterReport {
    let mut counts: BTreeMap<Source, (usize, usize)> = Source::ALL.iter().map(|&s| (s, (0, 0))).collect();
    for d in docs {
        let tokens = match tokenizer {
            Some(t) => t.tokenize(&d.text).len(),
            None => d.text.split_whitespace().count(),
        };
        let e = counts.entry(d.source).or_default();
        e.0 += 1;
        e.1 += tokens;
    }
    let total_tokens: usize = counts.values().map(|c| c.1).sum();
    let sources = counts
        .into_iter()
        .map(|(s, (n, t))| {
            (
                s.to_string(),
                SourceStats {
                    documents: n,
                    document_proportion: ratio(n, docs.len()),
                    tokens: t,
                    token_proportion: ratio(t, total_tokens),
                },
            )
        })
        .collect();
    FilterReport {
        input_documents: docs.len(),
        stages: Vec::new(),
        documents: docs.len(),
        tokens: total_tokens,
        token_unit: if tokenizer.is_some() { "subword" } else { "whitespace" }.to_string(),
        sources,
    }
}
