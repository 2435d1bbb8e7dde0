use rand::Rng;

use crate::autodiff::IGNORE_INDEX;
use crate::tokenizer::SpecialIds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// BERT-style corruption. Every non-special position is selected with
/// probability `mask_rate`; a selected token becomes `[MASK]` (80%), a
/// uniformly drawn non-special token (10%) or stays (10%). Labels hold the
/// original id at selected positions and `IGNORE_INDEX` elsewhere.
///
/// Also returns the action taken at each selected position, in order.
pub fn apply_mlm_masking(
    ids: &[u32],
    specials: &SpecialIds,
    vocab_size: usize,
    mask_rate: f64,
    rng: &mut impl Rng,
) -> (Vec<u32>, Vec<i64>, Vec<MaskAction>) {
    let mut input = ids.to_vec();
    let mut labels = vec![IGNORE_INDEX; ids.len()];
    let mut actions = Vec::new();
    let regular = vocab_size.saturating_sub(specials.all().len()) as u32;
    for (i, &id) in ids.iter().enumerate() {
        if specials.contains(id) || rng.random::<f64>() >= mask_rate {
            continue;
        }
        labels[i] = id as i64;
        let u = rng.random::<f64>();
        let action = if u < 0.8 {
            input[i] = specials.mask;
            MaskAction::Mask
        } else if u < 0.9 && regular > 0 {
            // Non-special ids are the ones left after skipping the specials.
            let mut r = rng.random_range(0..regular);
            for s in sorted(specials) {
                if r >= s {
                    r += 1;
                }
            }
            input[i] = r;
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        actions.push(action);
    }
    (input, labels, actions)
}

fn sorted(specials: &SpecialIds) -> Vec<u32> {
    let mut s = specials.all().to_vec();
    s.sort_unstable();
    s.dedup();
    s
}
