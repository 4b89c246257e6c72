//! Corpus ingestion: JSON-lines loading, filtering, splitting, tokenization,
//! vocabulary and padded batches.

mod batch;
mod vocab;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{epoch_order, make_batches, Batch, BatchIter};
pub use vocab::{
    Vocabulary, DEFAULT_MAX_SIZE, DEFAULT_MIN_COUNT, EOS, EOS_TOKEN, PAD, PAD_TOKEN, SOS,
    SOS_TOKEN, UNK, UNK_TOKEN,
};

pub const DEFAULT_PAD_LENGTH: usize = 15;
pub const DEFAULT_MAX_CONV_LENGTH: usize = 10;
/// Conversations must have strictly more utterances than this.
pub const MIN_UTTERANCES_EXCLUSIVE: usize = 3;

/// One conversation record as stored on disk: `{"dialog": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawConversation {
    pub dialog: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub raw_text: String,
    /// Token ids, terminated by EOS unless truncated.
    pub token_ids: Vec<usize>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn token_rows(&self) -> Vec<&[usize]> {
        self.utterances.iter().map(|u| u.token_ids.as_slice()).collect()
    }
}

/// Lowercased whitespace split; ASCII punctuation other than the apostrophe
/// becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars().flat_map(char::to_lowercase) {
            if ch.is_ascii_punctuation() && ch != '\'' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Reads a dialog JSON-lines file, drops conversations with 3 or fewer
/// utterances and keeps the most recent `max_conv_length` utterances of the rest.
pub fn load_corpus(path: &Path, max_conv_length: usize) -> Result<Vec<RawConversation>> {
    if max_conv_length <= MIN_UTTERANCES_EXCLUSIVE {
        return Err(Error::invalid(format!(
            "max_conv_length must exceed {MIN_UTTERANCES_EXCLUSIVE}, got {max_conv_length}"
        )));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let record: RawConversation =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if record.dialog.is_empty() {
            return Err(parse_err("\"dialog\" must hold at least one string".into()));
        }
        if let Some(conv) = filter_conversation(record, max_conv_length) {
            out.push(conv);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

pub fn filter_conversation(
    mut conv: RawConversation,
    max_conv_length: usize,
) -> Option<RawConversation> {
    if conv.dialog.len() <= MIN_UTTERANCES_EXCLUSIVE {
        return None;
    }
    if conv.dialog.len() > max_conv_length {
        let drop = conv.dialog.len() - max_conv_length;
        conv.dialog.drain(..drop);
    }
    Some(conv)
}

pub fn write_jsonl(path: &Path, conversations: &[RawConversation]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for conv in conversations {
        let line = serde_json::to_string(conv).map_err(|e| Error::Other(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded random partition. Valid and test sizes are `floor(n * ratio)`; the
/// remainder goes to train. Each part keeps the input's relative order.
pub fn split_corpus<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<Split<T>> {
    let (rt, rv, rs) = ratios;
    if !(rt > 0.0 && rv > 0.0 && rs > 0.0) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be positive and sum to 1, got ({rt}, {rv}, {rs})"
        )));
    }
    let n = items.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 conversations to split, got {n}"
        )));
    }
    let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let n_valid = floor(rv);
    let n_test = floor(rs);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut valid_idx = order[..n_valid].to_vec();
    let mut test_idx = order[n_valid..n_valid + n_test].to_vec();
    let mut train_idx = order[n_valid + n_test..].to_vec();
    valid_idx.sort_unstable();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&train_idx),
        valid: pick(&valid_idx),
        test: pick(&test_idx),
    })
}

pub fn encode_utterance(text: &str, vocab: &Vocabulary, pad_length: usize) -> Utterance {
    let mut token_ids: Vec<usize> = tokenize(text)
        .iter()
        .take(pad_length.saturating_sub(1))
        .map(|t| vocab.id(t))
        .collect();
    token_ids.push(EOS);
    Utterance {
        raw_text: text.to_string(),
        token_ids,
    }
}

pub fn encode_conversation(
    conv: &RawConversation,
    vocab: &Vocabulary,
    pad_length: usize,
) -> Result<Conversation> {
    if pad_length < 2 {
        return Err(Error::invalid(format!("pad_length must be >= 2, got {pad_length}")));
    }
    Ok(Conversation {
        utterances: conv
            .dialog
            .iter()
            .map(|u| encode_utterance(u, vocab, pad_length))
            .collect(),
    })
}
