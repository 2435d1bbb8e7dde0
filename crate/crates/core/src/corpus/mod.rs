//! Corpus curation: JSON Lines ingestion, country-code TLD filtering,
//! deduplication, heuristic quality filters and composition statistics.

mod dedup;
mod quality;
mod report;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dedup::{deduplicate, fnv1a64, near_deduplicate, normalized_text};
pub use quality::{
    char_repetition_ratio, non_alpha_ratio, quality_filter, url_token_ratio, word_repetition_ratio, QualityConfig,
};
pub use report::{corpus_stats, FilterReport, SourceStats, StageReport};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("country code must be two ASCII letters, got `{0}`")]
    CountryCode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "OSCAR")]
    Oscar,
    #[serde(rename = "DCEP")]
    Dcep,
    Europarl,
    ParlamentoPT,
    #[serde(rename = "OTHER")]
    Other,
}

impl Source {
    pub const ALL: [Source; 5] = [Source::Oscar, Source::Dcep, Source::Europarl, Source::ParlamentoPT, Source::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Oscar => "OSCAR",
            Source::Dcep => "DCEP",
            Source::Europarl => "Europarl",
            Source::ParlamentoPT => "ParlamentoPT",
            Source::Other => "OTHER",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One corpus record. Fields this crate does not know about survive a
/// read/write round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tld: Option<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: Source) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source,
            url: None,
            tld: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn with_url(mut self, url: impl Into<String>) -> Self {
        self.url = Some(url.into());
        self
    }
}

/// Parses JSON Lines; blank lines are skipped. Ids must be unique.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: i + 1, source })?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Document>, CorpusError> {
    read_jsonl(BufReader::new(fs::File::open(path)?))
}

pub fn write_jsonl(mut writer: impl Write, docs: &[Document]) -> Result<(), CorpusError> {
    for d in docs {
        serde_json::to_writer(&mut writer, d)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_jsonl(&mut w, docs)?;
    w.flush()?;
    Ok(())
}

/// Outcome of a per-document filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Reject(&'static str),
}

fn validate_country_code(cc: &str) -> Result<String, CorpusError> {
    if cc.len() == 2 && cc.chars().all(|c| c.is_ascii_alphabetic()) {
        Ok(cc.to_ascii_lowercase())
    } else {
        Err(CorpusError::CountryCode(cc.to_string()))
    }
}

/// Whether the document's URL host ends in `.{cc}`.
pub fn tld_verdict(doc: &Document, cc: &str) -> Verdict {
    let Some(raw) = doc.url.as_deref() else {
        return Verdict::Reject("no-url");
    };
    let host = match url::Url::parse(raw) {
        Ok(u) => u.host_str().map(|h| h.trim_end_matches('.').to_ascii_lowercase()),
        Err(_) => return Verdict::Reject("bad-url"),
    };
    match host {
        Some(h) if h.ends_with(&format!(".{cc}")) => Verdict::Keep,
        Some(_) => Verdict::Reject("tld"),
        None => Verdict::Reject("bad-url"),
    }
}

/// Keeps documents hosted under the given country-code TLD, in input order.
pub fn filter_by_tld(docs: Vec<Document>, country_code: &str) -> Result<(Vec<Document>, StageReport), CorpusError> {
    let cc = validate_country_code(country_code)?;
    Ok(apply_stage("tld", docs, |d| tld_verdict(d, &cc)))
}

/// Runs a per-document filter in parallel, merging results in input order.
pub fn apply_stage(
    name: &str,
    docs: Vec<Document>,
    verdict: impl Fn(&Document) -> Verdict + Sync + Send,
) -> (Vec<Document>, StageReport) {
    let verdicts: Vec<Verdict> = docs.par_iter().map(verdict).collect();
    let mut stage = StageReport::new(name, docs.len());
    let kept = docs
        .into_iter()
        .zip(verdicts)
        .filter_map(|(d, v)| match v {
            Verdict::Keep => Some(d),
            Verdict::Reject(reason) => {
                stage.reject(reason);
                None
            }
        })
        .collect::<Vec<_>>();
    stage.kept = kept.len();
    (kept, stage)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Two-letter country code; `None` skips the TLD stage.
    pub country_code: Option<String>,
    pub near_dedup: bool,
    pub near_dedup_threshold: f64,
    pub quality: QualityConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            country_code: None,
            near_dedup: false,
            near_dedup_threshold: 0.8,
            quality: QualityConfig::default(),
        }
    }
}

/// TLD filter, deduplication, then quality filters. The report's source
/// statistics describe the surviving documents.
pub fn run_pipeline(
    docs: Vec<Document>,
    config: &PipelineConfig,
    tokenizer: Option<&crate::tokenizer::TokenizerModel>,
) -> Result<(Vec<Document>, FilterReport), CorpusError> {
    let input = docs.len();
    let mut stages = Vec::new();
    let mut docs = docs;
    if let Some(cc) = &config.country_code {
        let (kept, stage) = filter_by_tld(docs, cc)?;
        docs = kept;
        stages.push(stage);
    }
    let (kept, stage) = deduplicate(docs);
    docs = kept;
    stages.push(stage);
    if config.near_dedup {
        let (kept, stage) = near_deduplicate(docs, config.near_dedup_threshold);
        docs = kept;
        stages.push(stage);
    }
    let (kept, stage) = apply_stage("quality", docs, |d| quality_filter(d, &config.quality));
    docs = kept;
    stages.push(stage);
    let mut report = corpus_stats(&docs, tokenizer);
    report.input_documents = input;
    report.stages = stages;
    Ok((docs, report))
}
