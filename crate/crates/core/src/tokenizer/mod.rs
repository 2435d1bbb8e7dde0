//! Byte-pair-encoding subword tokenizer over word-boundary-marked text.
//!
//! Text is NFC-normalized and whitespace-collapsed, then every word is
//! prefixed with the boundary marker `▁` and split into characters. Training
//! greedily merges the most frequent adjacent pair; ties go to the
//! lexicographically smallest pair so the result depends only on the corpus.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const VOCAB_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MARKER: char = '▁';
pub const DEFAULT_VOCAB_SIZE: usize = 8192;
pub const NUM_SPECIALS: usize = 5;

const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot train a tokenizer on an empty corpus")]
    EmptyCorpus,
    #[error("vocab_size {requested} is too small: the base alphabet needs at least {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("token id {id} is outside the vocabulary (size {size})")]
    IdOutOfRange { id: u32, size: usize },
    #[error("max_len {max_len} leaves no room for {needed} special tokens")]
    MaxLenTooSmall { max_len: usize, needed: usize },
    #[error("invalid vocabulary file: {0}")]
    InvalidVocab(String),
    #[error("vocabulary file format version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

impl Default for SpecialIds {
    fn default() -> Self {
        Self {
            pad: 0,
            unk: 1,
            cls: 2,
            sep: 3,
            mask: 4,
        }
    }
}

impl SpecialIds {
    pub fn all(&self) -> [u32; NUM_SPECIALS] {
        [self.pad, self.unk, self.cls, self.sep, self.mask]
    }

    pub fn contains(&self, id: u32) -> bool {
        self.all().contains(&id)
    }
}

/// Encoded text plus segment ids (0 for the first span, 1 for the second).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// On-disk vocabulary layout.
#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    vocab: BTreeMap<String, u32>,
    merges: Vec<(String, String)>,
    specials: SpecialIds,
    marker: char,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    tokens: Vec<String>,
    vocab: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    specials: SpecialIds,
    marker: char,
}

/// NFC normalization plus whitespace collapsing. No case folding.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn marked_words(text: &str, marker: char) -> impl Iterator<Item = Vec<String>> + '_ {
    text.split(' ').filter(|w| !w.is_empty()).map(move |w| {
        std::iter::once(marker)
            .chain(w.chars())
            .map(String::from)
            .collect()
    })
}

/// Learns a BPE vocabulary of at most `vocab_size` entries.
///
/// Merging stops early when no adjacent pair is left, in which case the
/// vocabulary is smaller than requested. `_seed` is accepted for interface
/// uniformity; training is fully determined by the corpus because ties are
/// broken lexicographically.
pub fn train_tokenizer<'a, I>(texts: I, vocab_size: usize, _seed: u64) -> Result<TokenizerModel, TokenizerError>
where
    I: IntoIterator<Item = &'a str>,
{
    let marker = DEFAULT_MARKER;
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for text in texts {
        for w in normalize(text).split(' ').filter(|w| !w.is_empty()) {
            *word_counts.entry(w.to_string()).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let alphabet: BTreeSet<char> = word_counts
        .keys()
        .flat_map(|w| w.chars())
        .chain(std::iter::once(marker))
        .collect();
    let minimum = NUM_SPECIALS + alphabet.len() + 1;
    if vocab_size < minimum {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            minimum,
        });
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    let mut ids: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    let mut words: Vec<(Vec<u32>, i64)> = word_counts
        .iter()
        .map(|(w, &c)| {
            let syms = std::iter::once(marker)
                .chain(w.chars())
                .map(|ch| ids[&ch.to_string()])
                .collect();
            (syms, c as i64)
        })
        .collect();

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), BTreeSet<usize>> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += c;
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    type HeapEntry = (i64, Reverse<(String, String)>, (u32, u32));
    let entry = |tokens: &[String], pair: (u32, u32), count: i64| -> HeapEntry {
        (
            count,
            Reverse((tokens[pair.0 as usize].clone(), tokens[pair.1 as usize].clone())),
            pair,
        )
    };
    let mut heap: BinaryHeap<HeapEntry> = pair_counts
        .iter()
        .map(|(&p, &c)| entry(&tokens, p, c))
        .collect();

    let mut merges = Vec::new();
    while tokens.len() < vocab_size {
        let Some((count, _, pair)) = heap.pop() else { break };
        if pair_counts.get(&pair).copied().unwrap_or(0) != count || count <= 0 {
            continue;
        }
        let merged = format!("{}{}", tokens[pair.0 as usize], tokens[pair.1 as usize]);
        let new_id = tokens.len() as u32;
        merges.push((tokens[pair.0 as usize].clone(), tokens[pair.1 as usize].clone()));
        ids.insert(merged.clone(), new_id);
        tokens.push(merged);

        let affected: Vec<usize> = where_.remove(&pair).map(|s| s.into_iter().collect()).unwrap_or_default();
        let mut touched: BTreeSet<(u32, u32)> = BTreeSet::new();
        for wi in affected {
            let (syms, c) = &mut words[wi];
            if !syms.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            for p in syms.windows(2) {
                *pair_counts.get_mut(&(p[0], p[1])).expect("counted") -= *c;
                touched.insert((p[0], p[1]));
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
            for p in syms.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += *c;
                where_.entry((p[0], p[1])).or_default().insert(wi);
                touched.insert((p[0], p[1]));
            }
        }
        pair_counts.remove(&pair);
        for p in touched {
            if let Some(&c) = pair_counts.get(&p) {
                if c > 0 {
                    heap.push(entry(&tokens, p, c));
                }
            }
        }
    }

    TokenizerModel::from_parts(tokens, merges, SpecialIds::default(), marker)
}

impl TokenizerModel {
    fn from_parts(
        tokens: Vec<String>,
        merges: Vec<(String, String)>,
        specials: SpecialIds,
        marker: char,
    ) -> Result<Self, TokenizerError> {
        let vocab: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if vocab.len() != tokens.len() {
            return Err(TokenizerError::InvalidVocab("duplicate token strings".into()));
        }
        let spec = specials.all();
        if spec.iter().collect::<BTreeSet<_>>().len() != NUM_SPECIALS
            || spec.iter().any(|&s| s as usize >= NUM_SPECIALS)
        {
            return Err(TokenizerError::InvalidVocab(
                "special ids must be distinct and occupy ids 0..5".into(),
            ));
        }
        for (a, b) in &merges {
            if !vocab.contains_key(&format!("{a}{b}")) {
                return Err(TokenizerError::InvalidVocab(format!("merge output `{a}{b}` missing from vocab")));
            }
        }
        let ranks = merges
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, p)| (p, i))
            .collect();
        Ok(Self {
            tokens,
            vocab,
            merges,
            ranks,
            specials,
            marker,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn marker(&self) -> char {
        self.marker
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    fn encode_word(&self, mut syms: Vec<String>, out: &mut Vec<u32>) {
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| {
                    self.ranks
                        .get(&(p[0].clone(), p[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == a && &syms[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = merged;
        }
        out.extend(syms.iter().map(|s| self.vocab.get(s).copied().unwrap_or(self.specials.unk)));
    }

    /// Subword ids for `text` without specials or truncation.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in marked_words(&normalize(text), self.marker) {
            self.encode_word(word, &mut out);
        }
        out
    }

    /// Encodes one span. With `add_specials` the result is `[CLS] … [SEP]`
    /// and truncation keeps the closing `[SEP]`.
    pub fn encode(&self, text: &str, max_len: usize, add_specials: bool) -> Result<TokenSequence, TokenizerError> {
        let mut ids = self.tokenize(text);
        let ids = if add_specials {
            if max_len < 2 {
                return Err(TokenizerError::MaxLenTooSmall { max_len, needed: 2 });
            }
            ids.truncate(max_len - 2);
            let mut full = Vec::with_capacity(ids.len() + 2);
            full.push(self.specials.cls);
            full.extend(ids);
            full.push(self.specials.sep);
            full
        } else {
            ids.truncate(max_len);
            ids
        };
        let segments = vec![0; ids.len()];
        Ok(TokenSequence { ids, segments })
    }

    /// Encodes `[CLS] a [SEP] b [SEP]`, trimming the longer span one token
    /// at a time until the pair fits `max_len`.
    pub fn encode_pair(&self, text_a: &str, text_b: &str, max_len: usize) -> Result<TokenSequence, TokenizerError> {
        if max_len < 3 {
            return Err(TokenizerError::MaxLenTooSmall { max_len, needed: 3 });
        }
        let mut a = self.tokenize(text_a);
        let mut b = self.tokenize(text_b);
        let budget = max_len - 3;
        while a.len() + b.len() > budget {
            if a.len() > b.len() {
                a.pop();
            } else {
                b.pop();
            }
        }
        let mut ids = Vec::with_capacity(a.len() + b.len() + 3);
        ids.push(self.specials.cls);
        ids.extend(&a);
        ids.push(self.specials.sep);
        let first = ids.len();
        ids.extend(&b);
        ids.push(self.specials.sep);
        let mut segments = vec![0u8; first];
        segments.resize(ids.len(), 1);
        Ok(TokenSequence { ids, segments })
    }

    /// Inverse of [`TokenizerModel::tokenize`] for UNK-free input. All
    /// special tokens are dropped and boundary markers become spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut s = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::IdOutOfRange {
                id,
                size: self.vocab_size(),
            })?;
            if self.specials.contains(id) {
                continue;
            }
            s.push_str(tok);
        }
        let spaced = s.replace(self.marker, " ");
        Ok(spaced.strip_prefix(' ').unwrap_or(&spaced).to_string())
    }

    pub fn to_json(&self) -> Result<String, TokenizerError> {
        let file = VocabFile {
            version: VOCAB_FORMAT_VERSION,
            vocab: self.vocab.iter().map(|(k, &v)| (k.clone(), v)).collect(),
            merges: self.merges.clone(),
            specials: self.specials,
            marker: self.marker,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.version != VOCAB_FORMAT_VERSION {
            return Err(TokenizerError::UnsupportedVersion(file.version));
        }
        let size = file.vocab.len();
        let mut tokens = vec![None; size];
        for (tok, id) in file.vocab {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| TokenizerError::InvalidVocab(format!("id {id} not dense in 0..{size}")))?;
            if slot.replace(tok).is_some() {
                return Err(TokenizerError::InvalidVocab(format!("id {id} assigned twice")));
            }
        }
        let tokens = tokens.into_iter().map(Option::unwrap).collect();
        Self::from_parts(tokens, file.merges, file.specials, file.marker)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Loads a vocabulary file, including externally produced ones.
    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TokenizerModel {
        // Base alphabet: 5 specials + {▁, a, b}.
        train_tokenizer(["ababab"], 9, 0).unwrap()
    }

    #[test]
    fn first_merge_on_ababab_is_ab() {
        let m = toy();
        assert_eq!(m.merges(), &[("a".to_string(), "b".to_string())]);
        assert_eq!(m.vocab_size(), 9);
        assert_eq!(m.token_id("ab"), Some(8));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(train_tokenizer(Vec::<&str>::new(), 100, 0), Err(TokenizerError::EmptyCorpus)));
        assert!(matches!(train_tokenizer(["   "], 100, 0), Err(TokenizerError::EmptyCorpus)));
    }

    #[test]
    fn too_small_vocab_reports_minimum() {
        let err = train_tokenizer(["ababab"], 8, 0).unwrap_err();
        assert!(matches!(err, TokenizerError::VocabTooSmall { minimum: 9, .. }), "{err}");
        assert!(err.to_string().contains("at least 9"));
    }

    #[test]
    fn empty_text_encodes_to_cls_sep() {
        let m = toy();
        let s = m.specials();
        assert_eq!(m.encode("", 128, true).unwrap().ids, vec![s.cls, s.sep]);
    }

    #[test]
    fn truncation_keeps_sep_last() {
        let m = toy();
        let seq = m.encode("ab ab ab ab ab ab", 4, true).unwrap();
        assert_eq!(seq.len(), 4);
        assert_eq!(*seq.ids.last().unwrap(), m.specials().sep);
        assert!(m.encode("x", 1, true).is_err());
    }

    #[test]
    fn toy_round_trip() {
        let m = toy();
        let ids = m.encode("a b ab", 128, true).unwrap().ids;
        assert_eq!(m.decode(&ids).unwrap(), "a b ab");
    }

    #[test]
    fn unknown_symbols_map_to_unk() {
        let m = toy();
        let ids = m.tokenize("abc");
        assert_eq!(*ids.last().unwrap(), m.specials().unk);
    }

    #[test]
    fn decode_edge_cases() {
        let m = toy();
        let s = m.specials();
        assert_eq!(m.decode(&[]).unwrap(), "");
        assert_eq!(m.decode(&[s.cls, s.sep]).unwrap(), "");
        assert!(matches!(m.decode(&[9]), Err(TokenizerError::IdOutOfRange { id: 9, size: 9 })));
    }

    #[test]
    fn pair_of_empty_texts() {
        let m = toy();
        let s = m.specials();
        let seq = m.encode_pair("", "", 16).unwrap();
        assert_eq!(seq.ids, vec![s.cls, s.sep, s.sep]);
        assert_eq!(seq.segments, vec![0, 0, 1]);
    }

    #[test]
    fn pair_truncation_is_longest_first() {
        // Each "a" is two tokens (▁, a) with this model, so use a model that
        // learned whole words.
        let m = train_tokenizer(["x y"], 64, 0).unwrap();
        let a = ["x"; 10].join(" ");
        let b = ["y"; 2].join(" ");
        assert_eq!(m.tokenize(&a).len(), 10);
        let seq = m.encode_pair(&a, &b, 9).unwrap();
        let a_len = seq.segments.iter().filter(|&&s| s == 0).count() - 2;
        let b_len = seq.segments.iter().filter(|&&s| s == 1).count() - 1;
        assert_eq!((a_len, b_len), (4, 2));

        let seq = m.encode_pair(&a, &a, 9).unwrap();
        let a_len = seq.segments.iter().filter(|&&s| s == 0).count() - 2;
        let b_len = seq.segments.iter().filter(|&&s| s == 1).count() - 1;
        assert_eq!((a_len, b_len), (3, 3));
    }

    #[test]
    fn vocab_json_round_trips_and_is_deterministic() {
        let corpus = ["o rato roeu a roupa do rei de roma", "a aranha arranha a rã"];
        let m1 = train_tokenizer(corpus, 60, 1).unwrap();
        let m2 = train_tokenizer(corpus, 60, 1).unwrap();
        assert_eq!(m1.to_json().unwrap(), m2.to_json().unwrap());
        let back = TokenizerModel::from_json(&m1.to_json().unwrap()).unwrap();
        assert_eq!(back, m1);
    }

    #[test]
    fn rejects_malformed_vocab_files() {
        let m = toy();
        let json = m.to_json().unwrap().replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(TokenizerModel::from_json(&json), Err(TokenizerError::UnsupportedVersion(7))));
        let json = m.to_json().unwrap().replace("\"ab\": 8", "\"ab\": 12");
        assert!(TokenizerModel::from_json(&json).is_err());
    }

    #[test]
    fn normalization_composes_and_collapses() {
        assert_eq!(normalize("  cafe\u{301}\t\n  Ok "), "café Ok");
    }
}
