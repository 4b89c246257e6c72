//! Optimisation loop: Adam with global-norm clipping, linear KL annealing,
//! validation tracking and checkpoints.

mod checkpoint;
mod config;
mod optim;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{epoch_order, Conversation};
use crate::error::{Error, Result};
use crate::model::{CsrrModel, ElboBreakdown, LatentNoise, TokenAccuracy};
use crate::nn::{Gradients, ParamStore};

pub use checkpoint::{Checkpoint, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{TrainConfig, LARGE_CORPUS_ANNEAL_STEPS, SMALL_CORPUS_ANNEAL_STEPS};
pub use optim::{anneal_weight, clip_gradients, Adam, AdamState};

pub const METRICS_HEADER: &str = "step,loss,recon_nll,kl_c,kl_p,kl_q,kl_r,lambda";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

/// One optimisation step as logged.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub breakdown: ElboBreakdown,
    pub lambda: f64,
    pub grad_norm: f64,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let b = &self.breakdown;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            b.loss(),
            b.recon_nll,
            b.kl_c(),
            b.kl_p(),
            b.kl_q(),
            b.kl_r(),
            self.lambda
        )
    }
}

/// Noise for conversation `slot` of the batch at `step`. Depends only on
/// `(seed, step, slot)`, so a resumed run draws exactly what an
/// uninterrupted one would have.
pub fn step_noise(seed: u64, step: u64, slot: usize, dim: usize) -> LatentNoise {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step << 20) | slot as u64);
    LatentNoise::draw(&mut rng, dim)
}

/// Training indices used at `step` (0-based): epochs are reshuffled with
/// `seed + epoch`, the last batch of an epoch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size) as u64;
    let epoch = step / per_epoch;
    let b = (step % per_epoch) as usize;
    let order = epoch_order(n, Some(seed.wrapping_add(epoch)));
    order[b * batch_size..((b + 1) * batch_size).min(n)].to_vec()
}

pub struct Trainer {
    pub model: CsrrModel,
    pub store: ParamStore,
    pub state: TrainState,
    pub config: TrainConfig,
    pub vocab_hash: String,
}

impl Trainer {
    pub fn new(model: CsrrModel, store: ParamStore, config: TrainConfig, vocab_hash: impl Into<String>) -> Result<Self> {
        config.validate()?;
        let state = TrainState::new(&store);
        Ok(Self {
            model,
            store,
            state,
            config,
            vocab_hash: vocab_hash.into(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let model = CsrrModel::for_store(ck.model.clone(), &ck.store)?;
        if !ck.state.adam.matches(&ck.store) {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        ck.train.validate()?;
        Ok(Self {
            model,
            store: ck.store,
            state: ck.state,
            config: ck.train,
            vocab_hash: ck.vocab_hash,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.config().clone(),
            train: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            store: self.store.clone(),
            state: self.state.clone(),
        }
    }

    fn adam(&self) -> Adam {
        Adam {
            learning_rate: self.config.learning_rate,
            beta1: self.config.beta1,
            beta2: self.config.beta2,
            epsilon: self.config.epsilon,
        }
    }

    /// Bound and gradient averaged over `convs`, with the step's noise.
    pub fn batch_loss(&self, convs: &[&Conversation], step: u64, lambda: f64, grads: Option<&mut Gradients>) -> Result<ElboBreakdown> {
        let dim = self.model.config().latent_dim;
        let mut parts = Vec::with_capacity(convs.len());
        let mut local = Gradients::zeros_like(&self.store);
        let want_grads = grads.is_some();
        for (slot, conv) in convs.iter().enumerate() {
            let noise = step_noise(self.config.seed, step, slot, dim);
            let rows = conv.token_rows();
            let b = if want_grads {
                self.model.loss_and_grad(&self.store, &rows, &noise, lambda, &mut local)?
            } else {
                self.model.forward_train(&self.store, &rows, &noise, lambda)?
            };
            if !b.loss().is_finite() {
                return Err(Error::NonFinite(format!("loss at step {}", step + 1)));
            }
            parts.push(b);
        }
        if let Some(g) = grads {
            local.scale(1.0 / convs.len() as f64);
            *g = local;
        }
        ElboBreakdown::mean(&parts).ok_or_else(|| Error::invalid("empty batch"))
    }

    /// Runs one update on the next batch of `train`.
    pub fn train_step(&mut self, train: &[Conversation]) -> Result<StepRecord> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let step = self.state.global_step;
        let lambda = anneal_weight(step, self.config.kl_anneal_steps);
        let idx = batch_indices(train.len(), self.config.batch_size, self.config.seed, step);
        let convs: Vec<&Conversation> = idx.iter().map(|&i| &train[i]).collect();
        let mut grads = Gradients::zeros_like(&self.store);
        let breakdown = self.batch_loss(&convs, step, lambda, Some(&mut grads))?;
        let grad_norm = clip_gradients(&mut grads, self.config.clip_norm, &self.store)?;
        let adam = self.adam();
        adam.step(&mut self.store, &grads, &mut self.state.adam)?;
        self.store.check_finite()?;
        self.state.global_step += 1;
        Ok(StepRecord {
            step: self.state.global_step,
            breakdown,
            lambda,
            grad_norm,
        })
    }

    /// Teacher-forced mean loss with `λ = 1` and posterior-mean latents.
    pub fn validation_loss(&self, valid: &[Conversation]) -> Result<f64> {
        if valid.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let noise = LatentNoise::zeros(self.model.config().latent_dim);
        let mut total = 0.0;
        for conv in valid {
            total += self.model.forward_train(&self.store, &conv.token_rows(), &noise, 1.0)?.loss();
        }
        Ok(total / valid.len() as f64)
    }

    pub fn token_accuracy(&self, convs: &[Conversation]) -> Result<TokenAccuracy> {
        let mut acc = TokenAccuracy::default();
        for conv in convs {
            acc.add(self.model.teacher_forced_accuracy(&self.store, &conv.token_rows())?);
        }
        Ok(acc)
    }

    /// Trains until `max_steps`. With an output directory, appends one CSV
    /// row per step to `metrics.csv`, writes `last.ckpt` every
    /// `checkpoint_every` steps and `best.ckpt` whenever validation improves.
    /// A non-finite loss aborts the run; checkpoints already written are kept.
    pub fn run(
        &mut self,
        train: &[Conversation],
        valid: &[Conversation],
        out_dir: Option<&Path>,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<Vec<StepRecord>> {
        let mut csv = match out_dir {
            Some(dir) => Some(open_metrics(dir)?),
            None => None,
        };
        let mut records = Vec::new();
        while self.state.global_step < self.config.max_steps {
            let rec = match self.train_step(train) {
                Ok(r) => r,
                Err(e) => {
                    warn!("aborting at step {}: {e}", self.state.global_step + 1);
                    return Err(e);
                }
            };
            if let Some((path, f)) = csv.as_mut() {
                writeln!(f, "{}", rec.csv_row()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            debug!("{}", rec.csv_row());
            on_step(&rec);
            let step = rec.step;
            records.push(rec);
            if step % self.config.checkpoint_every == 0 || step == self.config.max_steps {
                self.periodic(valid, out_dir)?;
            }
        }
        Ok(records)
    }

    fn periodic(&mut self, valid: &[Conversation], out_dir: Option<&Path>) -> Result<()> {
        let step = self.state.global_step;
        let mut improved = false;
        if !valid.is_empty() {
            let v = self.validation_loss(valid)?;
            info!("step {step}: validation loss {v:.4}");
            if self.state.best_valid_loss.is_none_or(|b| v < b) {
                self.state.best_valid_loss = Some(v);
                improved = true;
            }
        }
        if let Some(dir) = out_dir {
            let ck = self.checkpoint();
            ck.save(&dir.join(LAST_CHECKPOINT))?;
            if improved {
                ck.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        Ok(())
    }
}

fn open_metrics(dir: &Path) -> Result<(PathBuf, std::fs::File)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(METRICS_FILE);
    let fresh = !path.exists() || std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
    }
    Ok((path, f))
}
