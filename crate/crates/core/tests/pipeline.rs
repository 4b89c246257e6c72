mod common;

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use csrr::corpus::{load_corpus, split_corpus, Vocabulary};
use csrr::inference::{ChatModel, GenerationOptions, LatentMode, VOCAB_FILE};
use csrr::model::{CsrrModel, ModelMode};
use csrr::service::{router, AppState, ServiceConfig};
use csrr::training::{Checkpoint, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT};

fn trained(mode: ModelMode, steps: u64, dir: &std::path::Path) -> (Trainer, Vocabulary) {
    let raw = common::synthetic_corpus(8);
    let vocab = Vocabulary::build(&raw, 100, 1).unwrap();
    let convs = common::encode_all(&raw, &vocab, common::TOY_PAD);
    let mut cfg = common::overfit_train_config(steps);
    cfg.batch_size = 4;
    cfg.checkpoint_every = steps / 2;
    let (model, store) = CsrrModel::new(common::toy_config(vocab.len(), mode), cfg.seed).unwrap();
    let mut t = Trainer::new(model, store, cfg, vocab.hash()).unwrap();
    t.run(&convs, &convs[..2], Some(dir), |_| {}).unwrap();
    vocab.save(&dir.join(VOCAB_FILE)).unwrap();
    (t, vocab)
}

#[test]
fn corpus_filter_truncate_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let raw = common::mixed_length_corpus(60);
    common::write_corpus(&path, &raw);
    let kept = load_corpus(&path, 5).unwrap();
    let expected = raw.iter().filter(|c| c.dialog.len() > 3).count();
    assert_eq!(kept.len(), expected);
    assert!(kept.iter().all(|c| (4..=5).contains(&c.dialog.len())));
    let long = raw.iter().find(|c| c.dialog.len() == 7).unwrap();
    let cut = kept.iter().find(|c| c.dialog.last() == long.dialog.last() && c.dialog.len() == 5).unwrap();
    assert_eq!(cut.dialog[..], long.dialog[2..]);

    let a = split_corpus(&kept, (0.8, 0.1, 0.1), 3).unwrap();
    let b = split_corpus(&kept, (0.8, 0.1, 0.1), 3).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.train.len() + a.valid.len() + a.test.len(), kept.len());
}

#[test]
fn hred_trains_and_generates_without_latents() {
    let dir = tempfile::tempdir().unwrap();
    let raw = common::synthetic_corpus(8);
    let vocab = Vocabulary::build(&raw, 100, 1).unwrap();
    let convs = common::encode_all(&raw, &vocab, common::TOY_PAD);
    let (t, vocab2) = trained(ModelMode::Hred, 200, dir.path());
    assert_eq!(vocab.hash(), vocab2.hash());
    let initial = {
        let (model, store) = CsrrModel::new(t.model.config().clone(), t.config.seed).unwrap();
        Trainer::new(model, store, t.config.clone(), vocab.hash()).unwrap().validation_loss(&convs).unwrap()
    };
    let fin = t.validation_loss(&convs).unwrap();
    assert!(fin < 0.5 * initial, "{initial} -> {fin}");

    let chat = ChatModel::load(&dir.path().join(LAST_CHECKPOINT), None).unwrap();
    let rows = convs[0].token_rows();
    let opts = GenerationOptions {
        max_tokens: common::TOY_PAD,
        latent_mode: LatentMode::Sample,
        ..Default::default()
    };
    let cand = chat.respond(&rows[..3], &opts).unwrap().remove(0);
    assert!(cand.latents.z_c.is_none() && cand.latents.z_p.is_none() && cand.latents.z_r.is_none());
}

#[test]
fn best_checkpoint_tracks_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _) = trained(ModelMode::Csrr, 40, dir.path());
    let best = Checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    let last = Checkpoint::load(&dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(last.state.global_step, 40);
    assert!(best.state.global_step == 20 || best.state.global_step == 40);
    let recorded = last.state.best_valid_loss.unwrap();
    let again = Trainer::from_checkpoint(best).unwrap();
    let raw = common::synthetic_corpus(8);
    let vocab = Vocabulary::build(&raw, 100, 1).unwrap();
    let convs = common::encode_all(&raw, &vocab, common::TOY_PAD);
    assert_eq!(again.validation_loss(&convs[..2]).unwrap(), recorded);
    assert_eq!(t.state.global_step, 40);
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn service_three_turns_and_resample_on_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    trained(ModelMode::Csrr, 30, dir.path());
    let chat = ChatModel::load(&dir.path().join(LAST_CHECKPOINT), None).unwrap();
    let hash = chat.checkpoint_hash.clone();
    let state = AppState::with_model(chat, ServiceConfig::default());

    let (st, h) = call(&state, "GET", "/healthz", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(h["checkpoint_hash"], hash.as_str());

    let (_, s) = call(&state, "POST", "/sessions", None).await;
    let id = s["id"].as_str().unwrap().to_string();
    let mut replies = Vec::new();
    for text in ["hello w0", "w1 w2 ok", "w3 w1"] {
        let (st, v) = call(&state, "POST", &format!("/sessions/{id}/messages"), Some(json!({ "text": text }))).await;
        assert_eq!(st, StatusCode::OK, "{v}");
        assert_eq!(v["latent_sources"]["z_c"], "posterior_mean");
        assert_eq!(v["latent_sources"]["z_p"], "prior_mean");
        assert_eq!(v["latent_sources"]["z_r"], "prior_mean");
        replies.push(v["candidates"][0]["text"].as_str().unwrap().to_string());
    }
    let (st, v) = call(
        &state,
        "POST",
        &format!("/sessions/{id}/resample"),
        Some(json!({ "latent_mode": "sample", "seed": 11 })),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["latent_sources"]["z_p"], "prior_sample");
    let resampled = v["candidates"][0]["text"].as_str().unwrap().to_string();

    let (_, view) = call(&state, "GET", &format!("/sessions/{id}"), None).await;
    let hist = view["history"].as_array().unwrap();
    assert_eq!(view["max_history"], 10);
    assert_eq!(hist.len(), 6);
    assert_eq!(hist[1]["text"], replies[0].as_str());
    assert_eq!(hist[3]["text"], replies[1].as_str());
    assert_eq!(hist[5]["text"], resampled.as_str());
    assert_eq!(hist[4]["text"], "w3 w1");
}
