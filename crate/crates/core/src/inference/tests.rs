use super::*;
use crate::corpus::Utterance;
use crate::model::{LatentSource, ModelMode};

fn setup(mode: ModelMode) -> (CsrrModel, ParamStore) {
    let cfg = ModelConfig {
        hidden_dim: 6,
        embed_dim: 4,
        latent_dim: 3,
        pad_length: 15,
        max_conv_length: 10,
        vocab_size: 11,
        mode,
    };
    CsrrModel::new(cfg, 21).unwrap()
}

fn history() -> Vec<Vec<usize>> {
    vec![vec![4, 5, EOS], vec![6, EOS], vec![7, 8, 9, EOS]]
}

fn refs(h: &[Vec<usize>]) -> Vec<&[usize]> {
    h.iter().map(|u| u.as_slice()).collect()
}

#[test]
fn option_validation() {
    let ok = GenerationOptions::default();
    ok.validate(15).unwrap();
    for bad in [
        GenerationOptions { temperature: 0.0, ..ok.clone() },
        GenerationOptions { temperature: -1.0, ..ok.clone() },
        GenerationOptions { max_tokens: 0, ..ok.clone() },
        GenerationOptions { max_tokens: 16, ..ok.clone() },
        GenerationOptions { num_candidates: 0, ..ok.clone() },
    ] {
        assert!(bad.validate(15).is_err(), "{bad:?}");
    }
    assert_eq!("GREEDY".parse::<Strategy>().unwrap(), Strategy::Greedy);
    assert_eq!("mean".parse::<LatentMode>().unwrap(), LatentMode::Mean);
    assert!("beam".parse::<Strategy>().is_err());
    assert_eq!(LatentMode::Sample.to_string(), "sample");
}

#[test]
fn mean_latents_are_repeatable_and_sampled_ones_differ() {
    let (m, s) = setup(ModelMode::Csrr);
    let h = history();
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(2);
    let a = infer_latents(&m, &s, &refs(&h), LatentMode::Mean, &mut r1).unwrap();
    let b = infer_latents(&m, &s, &refs(&h), LatentMode::Mean, &mut r2).unwrap();
    assert_eq!(a.latents, b.latents);
    let x = infer_latents(&m, &s, &refs(&h), LatentMode::Sample, &mut r1).unwrap();
    let y = infer_latents(&m, &s, &refs(&h), LatentMode::Sample, &mut r2).unwrap();
    assert_ne!(x.latents.z_r, y.latents.z_r);
    let src = x.latents.sources;
    assert_eq!(src.z_c, Some(LatentSource::PosteriorSample));
    assert_eq!(src.z_p, Some(LatentSource::PriorSample));
    assert_eq!(src.z_r, Some(LatentSource::PriorSample));
    assert!(infer_latents(&m, &s, &[], LatentMode::Mean, &mut r1).is_err());
}

#[test]
fn greedy_is_deterministic_and_bounded() {
    for mode in [ModelMode::Csrr, ModelMode::Hred] {
        let (m, s) = setup(mode);
        let h = history();
        for max_tokens in [1, 3, 15] {
            let opts = GenerationOptions {
                max_tokens,
                num_candidates: 2,
                ..Default::default()
            };
            let a = generate_response(&m, &s, &refs(&h), &opts).unwrap();
            let b = generate_response(&m, &s, &refs(&h), &GenerationOptions { seed: 99, ..opts.clone() }).unwrap();
            assert_eq!(a, b);
            assert_eq!(a[0], a[1]);
            for c in &a {
                assert!(c.tokens.len() <= max_tokens);
                assert_eq!(c.tokens.len(), c.token_logprobs.len());
                assert!(c.token_logprobs.iter().all(|p| *p <= 0.0));
                assert!(!c.tokens.contains(&EOS));
            }
        }
    }
}

#[test]
fn greedy_ignores_temperature() {
    let (m, s) = setup(ModelMode::Csrr);
    let h = history();
    let a = generate_response(&m, &s, &refs(&h), &GenerationOptions::default()).unwrap();
    let b = generate_response(
        &m,
        &s,
        &refs(&h),
        &GenerationOptions {
            temperature: 7.5,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn sampled_candidates_have_requested_count() {
    let (m, s) = setup(ModelMode::Csrr);
    let h = history();
    let opts = GenerationOptions {
        strategy: Strategy::Sample,
        latent_mode: LatentMode::Sample,
        num_candidates: 3,
        temperature: 1.5,
        seed: 5,
        ..Default::default()
    };
    let c = generate_response(&m, &s, &refs(&h), &opts).unwrap();
    assert_eq!(c.len(), 3);
    assert_ne!(c[0].latents, c[1].latents);
    assert_eq!(c, generate_response(&m, &s, &refs(&h), &opts).unwrap());
}

fn conversations() -> Vec<Conversation> {
    (0..5)
        .map(|i| Conversation {
            utterances: (0..4)
                .map(|j| Utterance {
                    raw_text: String::new(),
                    token_ids: vec![4 + (i + j) % 7, EOS],
                })
                .collect(),
        })
        .collect()
}

#[test]
fn batch_generation_is_aligned_reproducible_and_leak_free() {
    let (m, s) = setup(ModelMode::Csrr);
    let convs = conversations();
    let opts = GenerationOptions {
        strategy: Strategy::Sample,
        latent_mode: LatentMode::Sample,
        seed: 3,
        ..Default::default()
    };
    let a = batch_generate(&m, &s, &convs, &opts).unwrap();
    assert_eq!(a.len(), convs.len());
    assert_eq!(a, batch_generate(&m, &s, &convs, &opts).unwrap());

    let mut altered = convs.clone();
    for c in &mut altered {
        c.utterances.last_mut().unwrap().token_ids = vec![10, 10, 10, EOS];
    }
    assert_eq!(a, batch_generate(&m, &s, &altered, &opts).unwrap());
}

#[test]
fn chat_model_checks_vocabulary() {
    let (m, s) = setup(ModelMode::Csrr);
    let raw = vec![crate::corpus::RawConversation {
        dialog: vec!["a b c".into(), "d e f g".into()],
    }];
    let vocab = Vocabulary::build(&raw, 100, 1).unwrap();
    assert_eq!(vocab.len(), 11);
    let chat = ChatModel::new(m.clone(), s.clone(), vocab.clone(), "x").unwrap();
    assert_eq!(chat.encode("a zz"), vec![vocab.id("a"), crate::corpus::UNK, EOS]);
    let small = Vocabulary::build(&raw[..], 6, 1).unwrap();
    assert!(ChatModel::new(m, s, small, "x").is_err());
}
