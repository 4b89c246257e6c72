use super::*;
use crate::nn::{grad_check, GradCheckOptions};
use proptest::prelude::*;
use rand::Rng;

fn toy(mode: ModelMode) -> ModelConfig {
    ModelConfig {
        hidden_dim: 5,
        embed_dim: 4,
        latent_dim: 3,
        pad_length: 6,
        max_conv_length: 10,
        vocab_size: 9,
        mode,
    }
}

fn conv() -> Vec<Vec<usize>> {
    vec![vec![4, 5, 3], vec![6, 3], vec![7, 8, 4, 3], vec![5, 6, 3]]
}

fn refs(c: &[Vec<usize>]) -> Vec<&[usize]> {
    c.iter().map(|u| u.as_slice()).collect()
}

fn noise(dim: usize, seed: u64) -> LatentNoise {
    LatentNoise::draw(&mut ChaCha8Rng::seed_from_u64(seed), dim)
}

#[test]
fn parameter_count_matches_store() {
    for mode in [ModelMode::Csrr, ModelMode::Hred] {
        for (h, e, z, v) in [(5, 4, 3, 9), (2, 2, 2, 5), (8, 6, 4, 12)] {
            let cfg = ModelConfig {
                hidden_dim: h,
                embed_dim: e,
                latent_dim: z,
                vocab_size: v,
                ..toy(mode)
            };
            let (_, store) = CsrrModel::new(cfg.clone(), 1).unwrap();
            assert_eq!(store.num_values(), count_parameters(&cfg), "{mode} {h} {e} {z} {v}");
        }
    }
}

#[test]
fn parameter_count_hand_sum() {
    // E = H = Z = 2, V = 5, utterance vectors of width 4.
    let gru = |i: usize, h: usize| 3 * (h * i + h * h + h);
    let mlp = |i: usize, o: usize| (i + 1) * o + (o + 1) * o;
    let head = |i: usize| 2 * mlp(i, 2);
    let common = 5 * 2 + 2 * gru(2, 2) + 2 * 5 + 5;
    let csrr = common
        + gru(6, 2)
        + mlp(2, 2)
        + 2 * gru(4, 2)
        + head(4)
        + head(4)
        + head(6)
        + head(12)
        + head(10)
        + mlp(8, 2)
        + gru(8, 2);
    let cfg = ModelConfig {
        hidden_dim: 2,
        embed_dim: 2,
        latent_dim: 2,
        vocab_size: 5,
        ..toy(ModelMode::Csrr)
    };
    assert_eq!(count_parameters(&cfg), csrr);
    assert_eq!(csrr, 549);
}

#[test]
fn parameter_count_orderings() {
    let c = toy(ModelMode::Csrr);
    let h = toy(ModelMode::Hred);
    assert!(count_parameters(&h) < count_parameters(&c));
    let wider = ModelConfig { latent_dim: 6, ..c.clone() };
    assert!(count_parameters(&wider) > count_parameters(&c));
}

#[test]
fn construction_is_deterministic_per_seed() {
    let (_, a) = CsrrModel::new(toy(ModelMode::Csrr), 7).unwrap();
    let (_, b) = CsrrModel::new(toy(ModelMode::Csrr), 7).unwrap();
    let (_, c) = CsrrModel::new(toy(ModelMode::Csrr), 8).unwrap();
    assert_eq!(a.tensors(), b.tensors());
    assert_ne!(a.tensors(), c.tensors());
}

#[test]
fn kl_term_counts_by_mode() {
    let c = conv();
    for (mode, expect) in [(ModelMode::Csrr, 4), (ModelMode::Hred, 0)] {
        let (model, store) = CsrrModel::new(toy(mode), 3).unwrap();
        let b = model.forward_train(&store, &refs(&c), &noise(3, 1), 1.0).unwrap();
        assert_eq!(b.kl.len(), expect);
        if expect == 0 {
            assert_eq!(b.kl_total(), 0.0);
        } else {
            let names: Vec<_> = b.kl.iter().map(|k| k.latent).collect();
            assert_eq!(names, vec![Latent::ZC, Latent::ZP, Latent::ZQ, Latent::ZR]);
            assert!(b.kl.iter().all(|k| k.value >= 0.0));
        }
    }
}

#[test]
fn zero_anneal_weight_leaves_reconstruction_only() {
    let c = conv();
    let (model, store) = CsrrModel::new(toy(ModelMode::Csrr), 3).unwrap();
    let n = noise(3, 2);
    let mut tape = Tape::new(&store);
    let (loss, b, _) = model.elbo(&mut tape, &refs(&c), &n, 0.0).unwrap();
    assert_eq!(tape.scalar(loss), b.recon_nll);
    assert!(b.kl_total() > 0.0);
    let full = model.forward_train(&store, &refs(&c), &n, 1.0).unwrap();
    assert!((full.loss() - (full.recon_nll + full.kl_total())).abs() < 1e-12);
}

#[test]
fn uniform_output_gives_log_vocab_per_token() {
    let c = conv();
    for mode in [ModelMode::Csrr, ModelMode::Hred] {
        let (model, mut store) = CsrrModel::new(toy(mode), 3).unwrap();
        let out = model.output_layer().clone();
        store.get_mut(out.weight).values.fill(0.0);
        store.get_mut(out.bias).values.fill(0.0);
        let b = model.forward_train(&store, &refs(&c), &noise(3, 4), 1.0).unwrap();
        // query [7, 8, 4, 3] and response [5, 6, 3]
        let tokens = 7;
        assert_eq!(b.token_count, tokens);
        assert!((b.recon_nll - tokens as f64 * (9f64).ln()).abs() < 1e-9);
    }
}

#[test]
fn padding_does_not_change_the_bound() {
    let c = conv();
    let padded: Vec<Vec<usize>> = c
        .iter()
        .map(|u| {
            let mut p = u.clone();
            p.resize(9, PAD);
            p
        })
        .collect();
    for mode in [ModelMode::Csrr, ModelMode::Hred] {
        let (model, store) = CsrrModel::new(toy(mode), 5).unwrap();
        let n = noise(3, 9);
        let a = model.forward_train(&store, &refs(&c), &n, 0.5).unwrap();
        let b = model.forward_train(&store, &refs(&padded), &n, 0.5).unwrap();
        assert!((a.loss() - b.loss()).abs() < 1e-12);
        assert!((a.kl_total() - b.kl_total()).abs() < 1e-12);
    }
}

#[test]
fn short_conversations_and_bad_weights_are_rejected() {
    let c = conv();
    let (model, store) = CsrrModel::new(toy(ModelMode::Csrr), 3).unwrap();
    let n = noise(3, 1);
    assert!(model.forward_train(&store, &refs(&c[..3]), &n, 1.0).is_err());
    assert!(model.forward_train(&store, &refs(&c), &n, 1.5).is_err());
    assert!(model.forward_train(&store, &refs(&c), &noise(2, 1), 1.0).is_err());
    let bad = vec![vec![4, 3], vec![99, 3], vec![4, 3], vec![4, 3]];
    assert!(model.forward_train(&store, &refs(&bad), &n, 1.0).is_err());
    let empty = vec![vec![4, 3], vec![PAD, PAD], vec![4, 3], vec![4, 3]];
    assert!(model.forward_train(&store, &refs(&empty), &n, 1.0).is_err());
}

#[test]
fn for_store_checks_layout() {
    let (_, store) = CsrrModel::new(toy(ModelMode::Csrr), 3).unwrap();
    assert!(CsrrModel::for_store(toy(ModelMode::Csrr), &store).is_ok());
    assert!(CsrrModel::for_store(toy(ModelMode::Hred), &store).is_err());
}

#[test]
fn elbo_gradients_match_finite_differences() {
    let c = conv();
    for mode in [ModelMode::Csrr, ModelMode::Hred] {
        let cfg = ModelConfig {
            hidden_dim: 3,
            embed_dim: 2,
            latent_dim: 2,
            vocab_size: 9,
            ..toy(mode)
        };
        let (model, store) = CsrrModel::new(cfg, 11).unwrap();
        let n = noise(2, 12);
        let mut g = Gradients::zeros_like(&store);
        model.loss_and_grad(&store, &refs(&c), &n, 0.7, &mut g).unwrap();
        let opts = GradCheckOptions {
            tolerance: 1e-3,
            ..Default::default()
        };
        let report = grad_check(&store, &g, opts, |s| {
            Ok(model.forward_train(s, &refs(&c), &n, 0.7)?.loss())
        })
        .unwrap();
        assert!(report.passed(), "{mode}: {:?}", report.worst());
    }
}

#[test]
fn plan_response_sources_and_mean_determinism() {
    let c = conv();
    let hist = refs(&c[..3]);
    let (model, store) = CsrrModel::new(toy(ModelMode::Csrr), 3).unwrap();
    let zero = LatentNoise::zeros(3);
    let a = model.plan_response(&store, &hist, &zero).unwrap();
    let b = model.plan_response(&store, &hist, &zero).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.condition.len(), 9);
    assert_eq!(a.latents.sources.z_c, Some(LatentSource::PosteriorMean));
    assert_eq!(a.latents.sources.z_p, Some(LatentSource::PriorMean));
    assert_eq!(a.latents.sources.z_q, None);
    let s = model.plan_response(&store, &hist, &noise(3, 5)).unwrap();
    assert_eq!(s.latents.sources.z_r, Some(LatentSource::PriorSample));
    assert_ne!(s.condition, a.condition);

    let (hred, hstore) = CsrrModel::new(toy(ModelMode::Hred), 3).unwrap();
    let p = hred.plan_response(&hstore, &hist, &zero).unwrap();
    assert!(p.condition.is_empty());
    assert_eq!(p.latents, LatentBundle::default());
}

#[test]
fn breakdown_mean_is_elementwise() {
    let mk = |r: f64, k: f64| ElboBreakdown {
        recon_nll: r,
        kl: vec![KlTerm { latent: Latent::ZC, value: k }],
        anneal_weight: 1.0,
        token_count: 2,
    };
    let m = ElboBreakdown::mean(&[mk(1.0, 2.0), mk(3.0, 4.0)]).unwrap();
    assert_eq!(m.recon_nll, 2.0);
    assert_eq!(m.kl_c(), 3.0);
    assert_eq!(m.token_count, 4);
    assert!(ElboBreakdown::mean(&[]).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kl_terms_nonnegative_for_random_conversations(seed in 0u64..1000, extra in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_utts = 4 + extra;
        let c: Vec<Vec<usize>> = (0..n_utts)
            .map(|_| {
                let len = rng.random_range(1..5);
                let mut u: Vec<usize> = (0..len).map(|_| rng.random_range(4..9)).collect();
                u.push(crate::corpus::EOS);
                u
            })
            .collect();
        let (model, store) = CsrrModel::new(toy(ModelMode::Csrr), seed).unwrap();
        let b = model.forward_train(&store, &refs(&c), &noise(3, seed + 1), 1.0).unwrap();
        prop_assert!(b.kl.iter().all(|k| k.value >= 0.0));
        prop_assert!(b.recon_nll > 0.0 && b.loss().is_finite());
    }
}
