use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Conversation, PAD};
use crate::error::{Error, Result};

/// Padded block of conversations, laid out `[conversation][utterance][position]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub max_utterances: usize,
    pub pad_length: usize,
    pub token_ids: Vec<usize>,
    /// `[conversation][utterance]`, zero for absent utterances.
    pub lengths: Vec<usize>,
    pub conversation_lengths: Vec<usize>,
    pub mask: Vec<u8>,
    /// Index of each row in the source slice.
    pub source_indices: Vec<usize>,
}

impl Batch {
    fn build(convs: &[&Conversation], source_indices: Vec<usize>, pad_length: usize) -> Self {
        let batch_size = convs.len();
        let max_utterances = convs.iter().map(|c| c.len()).max().unwrap_or(0);
        let cells = batch_size * max_utterances;
        let mut token_ids = vec![PAD; cells * pad_length];
        let mut mask = vec![0u8; cells * pad_length];
        let mut lengths = vec![0usize; cells];
        for (b, conv) in convs.iter().enumerate() {
            for (t, utt) in conv.utterances.iter().enumerate() {
                let cell = b * max_utterances + t;
                let len = utt.len().min(pad_length);
                lengths[cell] = len;
                let base = cell * pad_length;
                token_ids[base..base + len].copy_from_slice(&utt.token_ids[..len]);
                mask[base..base + len].fill(1);
            }
        }
        Batch {
            batch_size,
            max_utterances,
            pad_length,
            token_ids,
            lengths,
            conversation_lengths: convs.iter().map(|c| c.len()).collect(),
            mask,
            source_indices,
        }
    }

    /// Padded token rows of conversation `b`, one per utterance.
    pub fn conversation(&self, b: usize) -> Vec<&[usize]> {
        (0..self.conversation_lengths[b])
            .map(|t| {
                let base = (b * self.max_utterances + t) * self.pad_length;
                &self.token_ids[base..base + self.pad_length]
            })
            .collect()
    }

    pub fn mask_sum(&self) -> usize {
        self.mask.iter().map(|&m| m as usize).sum()
    }
}

/// Yields one epoch of batches in a seeded shuffled order; the last batch may be short.
pub struct BatchIter<'a> {
    conversations: &'a [Conversation],
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    pad_length: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let convs: Vec<&Conversation> = idx.iter().map(|&i| &self.conversations[i]).collect();
        Some(Batch::build(&convs, idx, self.pad_length))
    }
}

/// Epoch order for a shuffle seed; `None` keeps input order.
pub fn epoch_order(n: usize, shuffle_seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

pub fn make_batches(
    conversations: &[Conversation],
    batch_size: usize,
    pad_length: usize,
    shuffle_seed: Option<u64>,
) -> Result<BatchIter<'_>> {
    if batch_size < 1 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    Ok(BatchIter {
        conversations,
        order: epoch_order(conversations.len(), shuffle_seed),
        cursor: 0,
        batch_size,
        pad_length,
    })
}
