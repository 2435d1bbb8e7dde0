use rand::seq::SliceRandom;

use crate::rng::{stream, Stream};

use super::PretrainError;

/// One micro-batch: indices into the sequence list plus the padded width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroBatch {
    pub indices: Vec<usize>,
    /// Longest member, capped at `seq_len`.
    pub width: usize,
}

/// Shuffles with an epoch-derived seed and cuts the permutation into
/// micro-batches. The last batch may be short.
pub fn make_batches(
    lengths: &[usize],
    micro_batch_size: usize,
    seq_len: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<MicroBatch>, PretrainError> {
    if lengths.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    if micro_batch_size == 0 {
        return Err(PretrainError::InvalidConfig("micro_batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut stream(seed, Stream::Shuffle, &[epoch]));
    Ok(order
        .chunks(micro_batch_size)
        .map(|c| MicroBatch {
            indices: c.to_vec(),
            width: c.iter().map(|&i| lengths[i]).max().unwrap_or(0).min(seq_len),
        })
        .collect())
}
