//! Test-time latent handling, decoding and multi-turn sessions.

mod session;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_utterance, Conversation, Vocabulary, EOS, SOS};
use crate::error::{Error, Result};
use crate::model::{argmax, CsrrModel, LatentBundle, LatentNoise, ModelConfig, ResponsePlan};
use crate::nn::{log_softmax, softmax, ParamStore, Tape};
use crate::training::Checkpoint;

pub use session::{Session, Speaker, Turn};

pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentMode {
    Sample,
    Mean,
}

macro_rules! text_enum {
    ($ty:ty, $($variant:path => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::invalid(format!(concat!("unknown ", stringify!($ty), " {:?}"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name,)+ })
            }
        }
    };
}

text_enum!(Strategy, Strategy::Greedy => "greedy", Strategy::Sample => "sample");
text_enum!(LatentMode, LatentMode::Sample => "sample", LatentMode::Mean => "mean");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub strategy: Strategy,
    pub temperature: f64,
    pub max_tokens: usize,
    pub latent_mode: LatentMode,
    pub num_candidates: usize,
    pub seed: u64,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            temperature: 1.0,
            max_tokens: crate::corpus::DEFAULT_PAD_LENGTH,
            latent_mode: LatentMode::Mean,
            num_candidates: 1,
            seed: 0,
        }
    }
}

impl GenerationOptions {
    pub fn validate(&self, pad_length: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.max_tokens == 0 || self.max_tokens > pad_length {
            return Err(Error::invalid(format!(
                "max_tokens must lie in 1..={pad_length}, got {}",
                self.max_tokens
            )));
        }
        if self.num_candidates == 0 {
            return Err(Error::invalid("num_candidates must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Generated ids without the closing EOS.
    pub tokens: Vec<usize>,
    /// Model log-probability (temperature 1) of each emitted token.
    pub token_logprobs: Vec<f64>,
    pub latents: LatentBundle,
}

/// Latents for generating the next utterance after `history`.
pub fn infer_latents<R: Rng>(
    model: &CsrrModel,
    store: &ParamStore,
    history: &[&[usize]],
    mode: LatentMode,
    rng: &mut R,
) -> Result<ResponsePlan> {
    let dim = model.config().latent_dim;
    let noise = match mode {
        LatentMode::Mean => LatentNoise::zeros(dim),
        LatentMode::Sample => LatentNoise::draw(rng, dim),
    };
    model.plan_response(store, history, &noise)
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Autoregressive decoding from SOS; stops at EOS or after `max_tokens`.
pub fn decode<R: Rng>(
    model: &CsrrModel,
    store: &ParamStore,
    plan: &ResponsePlan,
    strategy: Strategy,
    temperature: f64,
    max_tokens: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut tape = Tape::new(store);
    let ctx = tape.constant(plan.context.clone());
    let cond = (!plan.condition.is_empty()).then(|| tape.constant(plan.condition.clone()));
    let mut h = model.decoder_start(&mut tape, ctx, cond)?;
    let mut prev = SOS;
    let (mut tokens, mut logprobs) = (Vec::new(), Vec::new());
    while tokens.len() < max_tokens {
        let (next, logits) = model.decoder_step(&mut tape, h, prev, cond)?;
        h = next;
        let lv = tape.value(logits);
        let tok = match strategy {
            Strategy::Greedy => argmax(lv),
            Strategy::Sample => {
                let scaled: Vec<f64> = lv.iter().map(|x| x / temperature).collect();
                sample_index(&softmax(&scaled), rng)
            }
        };
        if tok == EOS {
            break;
        }
        logprobs.push(log_softmax(lv)[tok]);
        tokens.push(tok);
        prev = tok;
    }
    Ok((tokens, logprobs))
}

/// `num_candidates` responses. With `latent_mode = sample` each candidate
/// draws fresh latents.
pub fn generate_response(
    model: &CsrrModel,
    store: &ParamStore,
    history: &[&[usize]],
    opts: &GenerationOptions,
) -> Result<Vec<Candidate>> {
    opts.validate(model.config().pad_length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(opts.num_candidates);
    let mut mean_plan: Option<ResponsePlan> = None;
    for _ in 0..opts.num_candidates {
        let plan = match opts.latent_mode {
            LatentMode::Sample => infer_latents(model, store, history, LatentMode::Sample, &mut rng)?,
            LatentMode::Mean => match &mean_plan {
                Some(p) => p.clone(),
                None => {
                    let p = infer_latents(model, store, history, LatentMode::Mean, &mut rng)?;
                    mean_plan = Some(p.clone());
                    p
                }
            },
        };
        let (tokens, token_logprobs) = decode(model, store, &plan, opts.strategy, opts.temperature, opts.max_tokens, &mut rng)?;
        out.push(Candidate {
            tokens,
            token_logprobs,
            latents: plan.latents,
        });
    }
    Ok(out)
}

/// Parameters, layout and vocabulary ready for generation.
#[derive(Debug, Clone)]
pub struct ChatModel {
    pub model: CsrrModel,
    pub store: ParamStore,
    pub vocab: Vocabulary,
    pub checkpoint_hash: String,
}

impl ChatModel {
    pub fn new(model: CsrrModel, store: ParamStore, vocab: Vocabulary, checkpoint_hash: impl Into<String>) -> Result<Self> {
        if vocab.len() != model.config().vocab_size {
            return Err(Error::DimensionMismatch {
                context: "vocabulary size",
                expected: model.config().vocab_size,
                actual: vocab.len(),
            });
        }
        Ok(Self {
            model,
            store,
            vocab,
            checkpoint_hash: checkpoint_hash.into(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, vocab: Vocabulary) -> Result<Self> {
        if vocab.hash() != ck.vocab_hash {
            return Err(Error::Checkpoint("vocabulary does not match the checkpoint's reference hash".into()));
        }
        let model = CsrrModel::for_store(ck.model.clone(), &ck.store)?;
        Self::new(model, ck.store.clone(), vocab, ck.hash()?)
    }

    /// Loads a checkpoint and the vocabulary at `vocab` (default:
    /// `vocab.txt` next to the checkpoint).
    pub fn load(checkpoint: &Path, vocab: Option<&Path>) -> Result<Self> {
        let ck = Checkpoint::load(checkpoint)?;
        let vocab_path: PathBuf = match vocab {
            Some(p) => p.to_path_buf(),
            None => checkpoint.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE),
        };
        let vocab = Vocabulary::load(&vocab_path)?;
        Self::from_checkpoint(&ck, vocab)
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        encode_utterance(text, &self.vocab, self.config().pad_length).token_ids
    }

    pub fn respond(&self, history: &[&[usize]], opts: &GenerationOptions) -> Result<Vec<Candidate>> {
        generate_response(&self.model, &self.store, history, opts)
    }

    pub fn text_of(&self, tokens: &[usize]) -> String {
        self.vocab.decode(tokens)
    }
}

/// One response per conversation, using every utterance but the last as
/// history. Conversation `i` is generated with seed `opts.seed + i`.
pub fn batch_generate(
    model: &CsrrModel,
    store: &ParamStore,
    conversations: &[Conversation],
    opts: &GenerationOptions,
) -> Result<Vec<Vec<usize>>> {
    let single = GenerationOptions {
        num_candidates: 1,
        ..opts.clone()
    };
    conversations
        .iter()
        .enumerate()
        .map(|(i, conv)| {
            if conv.len() < 2 {
                return Err(Error::invalid(format!("conversation {i} has no context for generation")));
            }
            let rows = conv.token_rows();
            let history = &rows[..rows.len() - 1];
            let o = GenerationOptions {
                seed: single.seed.wrapping_add(i as u64),
                ..single.clone()
            };
            let mut c = generate_response(model, store, history, &o)?;
            Ok(c.remove(0).tokens)
        })
        .collect()
}

#[cfg(test)]
mod tests;
