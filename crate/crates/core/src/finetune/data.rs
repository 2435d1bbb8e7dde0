use std::fs;
use std::io::Read;
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::XmlVersion;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Stream};
use crate::tokenizer::{TokenSequence, TokenizerModel};

use super::{FinetuneError, Split, TaskExample, TaskSpec};

/// Published ASSIN 2 split sizes (train, dev, test).
pub const ASSIN2_SIZES: (usize, usize, usize) = (6500, 500, 2448);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub train: Vec<TaskExample>,
    pub dev: Vec<TaskExample>,
    pub test: Vec<TaskExample>,
}

impl TaskData {
    /// Carves a dev split out of train when none was supplied.
    pub fn with_dev_split(mut self, dev_fraction: f64, seed: u64) -> Result<Self, FinetuneError> {
        if self.dev.is_empty() {
            let (train, dev) = split_train_dev(self.train, dev_fraction, seed)?;
            self.train = train;
            self.dev = dev;
        }
        Ok(self)
    }

    pub fn validate(&self, spec: &TaskSpec) -> Result<(), FinetuneError> {
        for e in self.train.iter().chain(&self.dev).chain(&self.test) {
            spec.validate_label(e.label)?;
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `n − ⌈n·(1 − dev_fraction)⌉` examples
/// become dev (71 examples at 0.1 give 64/7). Both sides keep at least one
/// example.
pub fn split_train_dev(
    examples: Vec<TaskExample>,
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<TaskExample>, Vec<TaskExample>), FinetuneError> {
    let n = examples.len();
    if n < 2 {
        return Err(FinetuneError::TooFewExamples(n));
    }
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(FinetuneError::DevFraction(dev_fraction));
    }
    // The small slack keeps exact products such as 100·0.9 from rounding up.
    let train_n = ((n as f64 * (1.0 - dev_fraction)) - 1e-9).ceil() as usize;
    let dev_n = (n - train_n.min(n)).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Stream::Split, &[]));
    let mut slots: Vec<Option<TaskExample>> = examples.into_iter().map(Some).collect();
    let mut take = |i: usize, split: Split| {
        let mut e = slots[i].take().expect("each index once");
        e.split = split;
        e
    };
    let dev: Vec<_> = order[..dev_n].iter().map(|&i| take(i, Split::Dev)).collect();
    let train: Vec<_> = order[dev_n..].iter().map(|&i| take(i, Split::Train)).collect();
    Ok((train, dev))
}

/// Reads a tab-separated file with header `sentence_a  sentence_b  label`.
pub fn load_task_tsv(path: &Path, split: Split) -> Result<Vec<TaskExample>, FinetuneError> {
    read_task_tsv(fs::File::open(path)?, split)
}

pub fn read_task_tsv(reader: impl Read, split: Split) -> Result<Vec<TaskExample>, FinetuneError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sentence_a", "sentence_b", "label"] {
        return Err(FinetuneError::Format(format!(
            "expected header sentence_a<TAB>sentence_b<TAB>label, got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let label = row[2]
            .trim()
            .parse::<f64>()
            .map_err(|e| FinetuneError::Format(format!("row {}: label `{}`: {e}", i + 2, &row[2])))?;
        out.push(TaskExample {
            sentence_a: row[0].to_string(),
            sentence_b: row[1].to_string(),
            label,
            split,
        });
    }
    Ok(out)
}

pub fn save_task_tsv(path: &Path, examples: &[TaskExample]) -> Result<(), FinetuneError> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path)?;
    w.write_record(["sentence_a", "sentence_b", "label"])?;
    for e in examples {
        w.write_record([e.sentence_a.as_str(), e.sentence_b.as_str(), &e.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Pair encodings with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub seq: TokenSequence,
    pub label: f64,
}

pub fn encode_examples(
    examples: &[TaskExample],
    tokenizer: &TokenizerModel,
    max_len: usize,
) -> Result<Vec<EncodedExample>, FinetuneError> {
    examples
        .iter()
        .map(|e| {
            Ok(EncodedExample {
                seq: tokenizer.encode_pair(&e.sentence_a, &e.sentence_b, max_len)?,
                label: e.label,
            })
        })
        .collect()
}

/// Both ASSIN 2 tasks from one XML file: relatedness scores and binary
/// entailment (1 = entailment).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assin2 {
    pub sts: Vec<TaskExample>,
    pub rte: Vec<TaskExample>,
}

/// Parses `<pair entailment=".." similarity=".."><t>..</t><h>..</h></pair>`
/// records and warns when the count differs from the published split size.
pub fn import_assin2(xml: &str, split: Split) -> Result<Assin2, FinetuneError> {
    let mut reader = quick_xml::Reader::from_str(xml);
    let mut out = Assin2::default();
    let (mut entail, mut sim) = (None::<String>, None::<f64>);
    let (mut t, mut h) = (String::new(), String::new());
    let mut field: Option<u8> = None;
    loop {
        match reader.read_event()? {
            Event::Start(e) => match e.name().as_ref() {
                "pair" => {
                    entail = None;
                    sim = None;
                    t.clear();
                    h.clear();
                    for a in e.attributes() {
                        let a = a.map_err(|err| FinetuneError::Format(err.to_string()))?;
                        let v = a.normalized_value(XmlVersion::Implicit1_0)?.into_owned();
                        match a.key.as_ref() {
                            "entailment" => entail = Some(v),
                            "similarity" => {
                                sim = Some(v.parse().map_err(|_| FinetuneError::Format(format!("similarity `{v}`")))?)
                            }
                            _ => {}
                        }
                    }
                }
                "t" => field = Some(b't'),
                "h" => field = Some(b'h'),
                _ => {}
            },
            Event::Text(e) => {
                let text = e.xml10_content().into_owned();
                match field {
                    Some(b't') => t.push_str(&text),
                    Some(b'h') => h.push_str(&text),
                    _ => {}
                }
            }
            Event::GeneralRef(e) => {
                let text = match e.resolve_char_ref().ok().flatten() {
                    Some(c) => c.to_string(),
                    None => match &*e.xml10_content() {
                        "amp" => "&".into(),
                        "lt" => "<".into(),
                        "gt" => ">".into(),
                        "quot" => "\"".into(),
                        "apos" => "'".into(),
                        other => format!("&{other};"),
                    },
                };
                match field {
                    Some(b't') => t.push_str(&text),
                    Some(b'h') => h.push_str(&text),
                    _ => {}
                }
            }
            Event::End(e) => match e.name().as_ref() {
                "t" | "h" => field = None,
                "pair" => {
                    if let Some(s) = sim {
                        out.sts.push(TaskExample {
                            sentence_a: t.trim().to_string(),
                            sentence_b: h.trim().to_string(),
                            label: s,
                            split,
                        });
                    }
                    if let Some(en) = &entail {
                        out.rte.push(TaskExample {
                            sentence_a: t.trim().to_string(),
                            sentence_b: h.trim().to_string(),
                            label: if en.eq_ignore_ascii_case("entailment") { 1.0 } else { 0.0 },
                            split,
                        });
                    }
                }
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    let expected = match split {
        Split::Train => ASSIN2_SIZES.0,
        Split::Dev => ASSIN2_SIZES.1,
        Split::Test => ASSIN2_SIZES.2,
    };
    let n = out.sts.len().max(out.rte.len());
    if n != expected {
        log::warn!("ASSIN 2 {split} split has {n} pairs; the published size is {expected}");
    }
    Ok(out)
}
