use std::collections::{HashMap, HashSet};

use super::{Document, StageReport};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Text with every whitespace run collapsed to one space and the ends trimmed.
pub fn normalized_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Exact deduplication on the hash of the normalized text. The first
/// occurrence wins.
pub fn deduplicate(docs: Vec<Document>) -> (Vec<Document>, StageReport) {
    let mut stage = StageReport::new("dedup", docs.len());
    let mut seen = HashSet::new();
    let kept: Vec<Document> = docs
        .into_iter()
        .filter(|d| {
            let fresh = seen.insert(fnv1a64(normalized_text(&d.text).as_bytes()));
            if !fresh {
                stage.reject("duplicate");
            }
            fresh
        })
        .collect();
    stage.kept = kept.len();
    (kept, stage)
}

fn shingles(text: &str) -> HashSet<u64> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < 5 {
        return std::iter::once(fnv1a64(words.join(" ").as_bytes())).collect();
    }
    words.windows(5).map(|w| fnv1a64(w.join(" ").as_bytes())).collect()
}

/// Drops documents whose 5-word shingle set has Jaccard similarity at or
/// above `threshold` with an earlier kept document.
pub fn near_deduplicate(docs: Vec<Document>, threshold: f64) -> (Vec<Document>, StageReport) {
    let mut stage = StageReport::new("near-dedup", docs.len());
    let mut kept_sets: Vec<HashSet<u64>> = Vec::new();
    // Inverted index from shingle to kept documents, so only candidates
    // sharing at least one shingle are compared.
    let mut index: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();
    for d in docs {
        let s = shingles(&d.text);
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for h in &s {
            for &k in index.get(h).map(Vec::as_slice).unwrap_or(&[]) {
                *overlap.entry(k).or_default() += 1;
            }
        }
        let dup = overlap.iter().any(|(&k, &inter)| {
            let union = s.len() + kept_sets[k].len() - inter;
            union > 0 && inter as f64 / union as f64 >= threshold
        });
        if dup {
            stage.reject("near-duplicate");
            continue;
        }
        let k = kept_sets.len();
        for &h in &s {
            index.entry(h).or_default().push(k);
        }
        kept_sets.push(s);
        kept.push(d);
    }
    stage.kept = kept.len();
    (kept, stage)
}
