#![allow(dead_code)]

use std::path::Path;

use csrr::corpus::{encode_conversation, Conversation, RawConversation, Vocabulary};
use csrr::model::{CsrrModel, ModelConfig, ModelMode};
use csrr::training::{TrainConfig, Trainer};

pub const TOY_HIDDEN: usize = 8;
pub const TOY_EMBED: usize = 6;
pub const TOY_LATENT: usize = 4;
pub const TOY_PAD: usize = 8;

/// `n` four-turn conversations with disjoint content words. The last two
/// share their first three turns and differ only in the response, so that
/// context has two valid continuations.
pub fn synthetic_corpus(n: usize) -> Vec<RawConversation> {
    assert!(n >= 2);
    let w = |i: usize, k: usize| format!("w{}", i * 7 + k);
    (0..n)
        .map(|i| {
            let c = if i == n - 1 { n - 2 } else { i };
            RawConversation {
                dialog: vec![
                    format!("hello {}", w(c, 0)),
                    format!("{} {} ok", w(c, 1), w(c, 2)),
                    format!("{} {}", w(c, 3), w(c, 1)),
                    format!("{} {} {}", w(i, 4), w(i, 5), w(i, 6)),
                ],
            }
        })
        .collect()
}

/// Index of the conversation whose context is shared with the last one.
pub fn shared_context_index(n: usize) -> usize {
    n - 2
}

/// `n` conversations of 2 to 7 utterances built from a small word pool.
pub fn mixed_length_corpus(n: usize) -> Vec<RawConversation> {
    (0..n)
        .map(|i| RawConversation {
            dialog: (0..2 + i % 6).map(|t| format!("turn {t} of dialog {}", i % 13)).collect(),
        })
        .collect()
}

pub fn encode_all(raw: &[RawConversation], vocab: &Vocabulary, pad: usize) -> Vec<Conversation> {
    raw.iter().map(|c| encode_conversation(c, vocab, pad).unwrap()).collect()
}

pub fn toy_config(vocab_size: usize, mode: ModelMode) -> ModelConfig {
    ModelConfig {
        hidden_dim: TOY_HIDDEN,
        embed_dim: TOY_EMBED,
        latent_dim: TOY_LATENT,
        pad_length: TOY_PAD,
        max_conv_length: 10,
        vocab_size,
        mode,
    }
}

pub fn overfit_train_config(max_steps: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        clip_norm: 5.0,
        batch_size: 10,
        kl_anneal_steps: 2000,
        max_steps,
        seed: 7,
        checkpoint_every: max_steps.max(1),
        hidden_dim: TOY_HIDDEN,
        embed_dim: TOY_EMBED,
        latent_dim: TOY_LATENT,
        ..TrainConfig::default()
    }
}

pub struct Overfit {
    pub trainer: Trainer,
    pub vocab: Vocabulary,
    pub train: Vec<Conversation>,
}

pub fn overfit(raw: &[RawConversation], steps: u64) -> Overfit {
    let vocab = Vocabulary::build(raw, 1000, 1).unwrap();
    let train = encode_all(raw, &vocab, TOY_PAD);
    let cfg = overfit_train_config(steps);
    let (model, store) = CsrrModel::new(toy_config(vocab.len(), ModelMode::Csrr), cfg.seed).unwrap();
    let mut trainer = Trainer::new(model, store, cfg, vocab.hash()).unwrap();
    for _ in 0..steps {
        trainer.train_step(&train).unwrap();
    }
    Overfit { trainer, vocab, train }
}

pub fn write_corpus(path: &Path, raw: &[RawConversation]) {
    csrr::corpus::write_jsonl(path, raw).unwrap();
}
