//! The hierarchical latent-variable dialogue model.
//!
//! A conversation `u_0 .. u_n` is read as context `u_0 .. u_{n-2}`, query
//! `u_{n-1}` and response `u_n`. Three levels of diagonal-Gaussian latents
//! are used:
//!
//! * `z_c` (discourse) with a standard-normal prior and a BiGRU posterior over
//!   all utterance vectors;
//! * `z_p` (query/response pair) conditioned on the pre-query context state;
//! * `z_q`, `z_r` (one per utterance of the pair) conditioned on `z_p`.
//!
//! The context recurrence starts from `MLP(z_c)` and consumes `[v_{t-1}; z_c]`
//! at each turn. Both the query and the response are reconstructed by the
//! decoder, which receives `[z_c; z_p; z_i]` in its initial state and at every
//! input step. [`ModelMode::Hred`] drops all latents from the same wiring.

mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PAD, SOS};
use crate::error::{Error, Result};
use crate::nn::{
    bigru_encode, gru_step, standard_normal, GaussianHead, GaussianParams, GaussianVars, Gradients, GruParams,
    Linear, Mlp, ParamId, ParamStore, Tape, Var,
};

pub use config::{count_parameters, ModelConfig, ModelMode};

/// Minimum number of utterances a training conversation needs.
pub const MIN_TRAIN_UTTERANCES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latent {
    ZC,
    ZP,
    ZQ,
    ZR,
}

impl Latent {
    pub fn name(self) -> &'static str {
        match self {
            Latent::ZC => "z_c",
            Latent::ZP => "z_p",
            Latent::ZQ => "z_q",
            Latent::ZR => "z_r",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    PosteriorSample,
    PosteriorMean,
    PriorSample,
    PriorMean,
}

impl LatentSource {
    pub fn is_posterior(self) -> bool {
        matches!(self, LatentSource::PosteriorSample | LatentSource::PosteriorMean)
    }
}

/// Standard-normal noise used to draw each latent (`z = mu + sigma * noise`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNoise {
    pub z_c: Vec<f64>,
    pub z_p: Vec<f64>,
    pub z_q: Vec<f64>,
    pub z_r: Vec<f64>,
}

impl LatentNoise {
    pub fn draw<R: rand::Rng>(rng: &mut R, dim: usize) -> Self {
        Self {
            z_c: standard_normal(rng, dim),
            z_p: standard_normal(rng, dim),
            z_q: standard_normal(rng, dim),
            z_r: standard_normal(rng, dim),
        }
    }

    /// All-zero noise: every latent takes its distribution's mean.
    pub fn zeros(dim: usize) -> Self {
        Self {
            z_c: vec![0.0; dim],
            z_p: vec![0.0; dim],
            z_q: vec![0.0; dim],
            z_r: vec![0.0; dim],
        }
    }

    pub fn is_zero(&self) -> bool {
        [&self.z_c, &self.z_p, &self.z_q, &self.z_r]
            .iter()
            .all(|v| v.iter().all(|x| *x == 0.0))
    }
}

/// Latent values used for one prediction, with where each came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatentBundle {
    pub z_c: Option<Vec<f64>>,
    pub z_p: Option<Vec<f64>>,
    pub z_q: Option<Vec<f64>>,
    pub z_r: Option<Vec<f64>>,
    pub sources: LatentSources,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatentSources {
    pub z_c: Option<LatentSource>,
    pub z_p: Option<LatentSource>,
    pub z_q: Option<LatentSource>,
    pub z_r: Option<LatentSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlTerm {
    pub latent: Latent,
    pub value: f64,
}

/// Terms of the variational bound for one conversation (or a batch mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    /// Summed over the reconstructed query and response, in nats.
    pub recon_nll: f64,
    pub kl: Vec<KlTerm>,
    pub anneal_weight: f64,
    /// Reconstructed tokens; a batch mean carries the batch total.
    pub token_count: usize,
}

impl ElboBreakdown {
    fn kl_of(&self, latent: Latent) -> f64 {
        self.kl.iter().filter(|k| k.latent == latent).map(|k| k.value).sum()
    }

    pub fn kl_c(&self) -> f64 {
        self.kl_of(Latent::ZC)
    }

    pub fn kl_p(&self) -> f64 {
        self.kl_of(Latent::ZP)
    }

    pub fn kl_q(&self) -> f64 {
        self.kl_of(Latent::ZQ)
    }

    pub fn kl_r(&self) -> f64 {
        self.kl_of(Latent::ZR)
    }

    pub fn kl_total(&self) -> f64 {
        self.kl.iter().map(|k| k.value).sum()
    }

    pub fn loss(&self) -> f64 {
        self.recon_nll + self.anneal_weight * self.kl_total()
    }

    /// Elementwise mean over several breakdowns with the same KL layout.
    pub fn mean(items: &[ElboBreakdown]) -> Option<ElboBreakdown> {
        let first = items.first()?;
        let n = items.len() as f64;
        let mut kl = first.kl.clone();
        for term in &mut kl {
            term.value = items.iter().map(|b| b.kl_of(term.latent)).sum::<f64>() / n;
        }
        Some(ElboBreakdown {
            recon_nll: items.iter().map(|b| b.recon_nll).sum::<f64>() / n,
            kl,
            anneal_weight: first.anneal_weight,
            token_count: items.iter().map(|b| b.token_count).sum(),
        })
    }
}

/// Context recurrence state `h_{c_t}` on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ContextState {
    pub h: Var,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LatentNets {
    context_init: Mlp,
    posterior_c_fwd: GruParams,
    posterior_c_bwd: GruParams,
    posterior_c: GaussianHead,
    prior_p: GaussianHead,
    prior_i: GaussianHead,
    posterior_p: GaussianHead,
    posterior_i: GaussianHead,
}

/// Network layout: which parameter in a [`ParamStore`] plays which role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrrModel {
    config: ModelConfig,
    embedding: ParamId,
    utterance_fwd: GruParams,
    utterance_bwd: GruParams,
    context: GruParams,
    latent: Option<LatentNets>,
    decoder_init: Mlp,
    decoder: GruParams,
    output: Linear,
}

/// Token-level outcome of teacher-forced decoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl TokenAccuracy {
    pub fn add(&mut self, other: TokenAccuracy) {
        self.correct += other.correct;
        self.total += other.total;
    }

    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Everything needed to decode a response for a history.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePlan {
    pub latents: LatentBundle,
    pub context: Vec<f64>,
    /// `[z_c; z_p; z_r]`, empty in HRED mode.
    pub condition: Vec<f64>,
}

fn mask_of(tokens: &[usize]) -> Vec<bool> {
    tokens.iter().map(|&t| t != PAD).collect()
}

fn unpadded(tokens: &[usize]) -> impl Iterator<Item = usize> + '_ {
    tokens.iter().copied().filter(|&t| t != PAD)
}

impl CsrrModel {
    /// Builds the layout and a freshly initialised parameter store.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (h, e, z, v) = (config.hidden_dim, config.embed_dim, config.latent_dim, config.vocab_size);
        let u = config.utterance_dim();
        let latents = config.mode.has_latents();
        let s = &mut store;
        let r = &mut rng;

        let embedding = s.glorot("embedding", v, e, r);
        let utterance_fwd = GruParams::new(s, "utterance.fwd", e, h, r);
        let utterance_bwd = GruParams::new(s, "utterance.bwd", e, h, r);
        let context = GruParams::new(s, "context", if latents { u + z } else { u }, h, r);
        let latent = latents.then(|| LatentNets {
            context_init: Mlp::with_hidden(s, "context_init", z, h, r),
            posterior_c_fwd: GruParams::new(s, "posterior_c.fwd", u, h, r),
            posterior_c_bwd: GruParams::new(s, "posterior_c.bwd", u, h, r),
            posterior_c: GaussianHead::new(s, "posterior_c", u, z, r),
            prior_p: GaussianHead::new(s, "prior_p", h + z, z, r),
            prior_i: GaussianHead::new(s, "prior_i", h + 2 * z, z, r),
            posterior_p: GaussianHead::new(s, "posterior_p", 2 * u + h + z, z, r),
            posterior_i: GaussianHead::new(s, "posterior_i", u + h + 2 * z, z, r),
        });
        let lz = config.decoder_latent_dim();
        let decoder_init = Mlp::with_hidden(s, "decoder_init", h + lz, h, r);
        let decoder = GruParams::new(s, "decoder", e + lz, h, r);
        let output = Linear::new(s, "output", h, v, r);

        let model = Self {
            config,
            embedding,
            utterance_fwd,
            utterance_bwd,
            context,
            latent,
            decoder_init,
            decoder,
            output,
        };
        Ok((model, store))
    }

    /// Layout for `config`, checked against an existing store.
    pub fn for_store(config: ModelConfig, store: &ParamStore) -> Result<Self> {
        let (model, fresh) = Self::new(config, 0)?;
        if !fresh.same_layout(store) {
            return Err(Error::Checkpoint("parameter layout does not match model config".into()));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> ModelMode {
        self.config.mode
    }

    pub fn output_layer(&self) -> &Linear {
        &self.output
    }

    fn nets(&self) -> Result<&LatentNets> {
        self.latent
            .as_ref()
            .ok_or_else(|| Error::invalid("operation requires latent variables (CSRR mode)"))
    }

    fn embed(&self, tape: &mut Tape, token: usize) -> Result<Var> {
        if token >= self.config.vocab_size {
            return Err(Error::invalid(format!(
                "token id {token} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        let table = tape.param(self.embedding);
        Ok(tape.row(table, token))
    }

    /// BiGRU over the embedded tokens; PAD positions are masked out.
    pub fn encode_utterance(&self, tape: &mut Tape, tokens: &[usize]) -> Result<Var> {
        let mask = mask_of(tokens);
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid("cannot encode an empty utterance"));
        }
        let blank = tape.zeros(self.config.embed_dim);
        let mut seq = Vec::with_capacity(tokens.len());
        for (&tok, &m) in tokens.iter().zip(&mask) {
            seq.push(if m { self.embed(tape, tok)? } else { blank });
        }
        bigru_encode(tape, &seq, &mask, &self.utterance_fwd, &self.utterance_bwd)
    }

    /// `h_{c_0} = MLP(z_c)`; zero in HRED mode.
    pub fn context_init(&self, tape: &mut Tape, z_c: Option<Var>) -> Result<ContextState> {
        let h = match (&self.latent, z_c) {
            (Some(nets), Some(z)) => nets.context_init.apply(tape, z)?,
            (Some(_), None) => return Err(Error::invalid("context_init needs z_c in CSRR mode")),
            (None, _) => tape.zeros(self.config.hidden_dim),
        };
        Ok(ContextState { h, t: 0 })
    }

    /// GRU step over `[v_{t-1}; z_c]` (HRED: `v_{t-1}` alone).
    pub fn context_step(&self, tape: &mut Tape, prev: ContextState, v_prev: Var, z_c: Option<Var>) -> Result<ContextState> {
        let input = match (&self.latent, z_c) {
            (Some(_), Some(z)) => tape.concat(&[v_prev, z]),
            (Some(_), None) => return Err(Error::invalid("context_step needs z_c in CSRR mode")),
            (None, _) => v_prev,
        };
        let h = gru_step(tape, input, prev.h, &self.context)?;
        Ok(ContextState { h, t: prev.t + 1 })
    }

    /// States `h_{c_0} ..= h_{c_last}`, consuming `vs[0 .. last]`.
    pub fn context_states(&self, tape: &mut Tape, vs: &[Var], z_c: Option<Var>, last: usize) -> Result<Vec<ContextState>> {
        if last > vs.len() {
            return Err(Error::invalid("context roll past the available utterances"));
        }
        let mut states = vec![self.context_init(tape, z_c)?];
        for v in &vs[..last] {
            let prev = *states.last().expect("non-empty");
            states.push(self.context_step(tape, prev, *v, z_c)?);
        }
        Ok(states)
    }

    pub fn prior_z_c(&self, tape: &mut Tape) -> GaussianVars {
        GaussianVars::standard(tape, self.config.latent_dim)
    }

    pub fn posterior_z_c(&self, tape: &mut Tape, vs: &[Var]) -> Result<GaussianVars> {
        let nets = self.nets()?;
        if vs.is_empty() {
            return Err(Error::invalid("posterior_z_c needs at least one utterance vector"));
        }
        let mask = vec![true; vs.len()];
        let vc = bigru_encode(tape, vs, &mask, &nets.posterior_c_fwd, &nets.posterior_c_bwd)?;
        nets.posterior_c.apply(tape, vc)
    }

    pub fn prior_z_p(&self, tape: &mut Tape, h_query: ContextState, z_c: Var) -> Result<GaussianVars> {
        let x = tape.concat(&[h_query.h, z_c]);
        self.nets()?.prior_p.apply(tape, x)
    }

    /// Shared prior for `z_q` (at `h_{c_{n-1}}`) and `z_r` (at `h_{c_n}`).
    pub fn prior_z_i(&self, tape: &mut Tape, h_i: ContextState, z_c: Var, z_p: Var) -> Result<GaussianVars> {
        let x = tape.concat(&[h_i.h, z_c, z_p]);
        self.nets()?.prior_i.apply(tape, x)
    }

    pub fn posterior_z_p(&self, tape: &mut Tape, v_q: Var, v_r: Var, h_query: ContextState, z_c: Var) -> Result<GaussianVars> {
        let x = tape.concat(&[v_q, v_r, h_query.h, z_c]);
        self.nets()?.posterior_p.apply(tape, x)
    }

    pub fn posterior_z_i(&self, tape: &mut Tape, v_i: Var, h_i: ContextState, z_c: Var, z_p: Var) -> Result<GaussianVars> {
        let x = tape.concat(&[v_i, h_i.h, z_c, z_p]);
        self.nets()?.posterior_i.apply(tape, x)
    }

    /// Initial decoder state `MLP([h_{c_i}; cond])`.
    pub fn decoder_start(&self, tape: &mut Tape, h_ctx: Var, cond: Option<Var>) -> Result<Var> {
        let x = match cond {
            Some(c) => tape.concat(&[h_ctx, c]),
            None => h_ctx,
        };
        self.decoder_init.apply(tape, x)
    }

    /// One decoder step from `prev_token`; returns the new state and vocabulary logits.
    pub fn decoder_step(&self, tape: &mut Tape, h: Var, prev_token: usize, cond: Option<Var>) -> Result<(Var, Var)> {
        let emb = self.embed(tape, prev_token)?;
        let x = match cond {
            Some(c) => tape.concat(&[emb, c]),
            None => emb,
        };
        let h = gru_step(tape, x, h, &self.decoder)?;
        let logits = self.output.apply(tape, h);
        Ok((h, logits))
    }

    fn condition(&self, tape: &mut Tape, latents: Option<(Var, Var, Var)>) -> Result<Option<Var>> {
        match (self.mode(), latents) {
            (ModelMode::Csrr, Some((c, p, i))) => Ok(Some(tape.concat(&[c, p, i]))),
            (ModelMode::Csrr, None) => Err(Error::invalid("decoder needs latents in CSRR mode")),
            (ModelMode::Hred, _) => Ok(None),
        }
    }

    /// Teacher-forced `-Σ ln p(token)` over the non-PAD tokens of `target`.
    pub fn decode_nll(
        &self,
        tape: &mut Tape,
        target: &[usize],
        h_i: ContextState,
        latents: Option<(Var, Var, Var)>,
    ) -> Result<(Var, TokenAccuracy)> {
        let cond = self.condition(tape, latents)?;
        let mut h = self.decoder_start(tape, h_i.h, cond)?;
        let mut prev = SOS;
        let mut terms = Vec::new();
        let mut acc = TokenAccuracy::default();
        for tok in unpadded(target) {
            let (next, logits) = self.decoder_step(tape, h, prev, cond)?;
            h = next;
            if tok >= self.config.vocab_size {
                return Err(Error::invalid(format!("target token {tok} outside vocabulary")));
            }
            let lv = tape.value(logits);
            let argmax = argmax(lv);
            acc.total += 1;
            if argmax == tok {
                acc.correct += 1;
            }
            terms.push(tape.cross_entropy(logits, tok));
            prev = tok;
        }
        if terms.is_empty() {
            return Err(Error::invalid("decode_nll: empty target utterance"));
        }
        let total = tape.add_all(&terms);
        Ok((total, acc))
    }

    /// Builds the bound on `tape` with single-sample ancestral latents
    /// `z = mu + sigma * noise` from the recognition networks. Returns the loss
    /// variable, its breakdown and the teacher-forced token accuracy.
    pub fn elbo(
        &self,
        tape: &mut Tape,
        conversation: &[&[usize]],
        noise: &LatentNoise,
        anneal_weight: f64,
    ) -> Result<(Var, ElboBreakdown, TokenAccuracy)> {
        let n_utts = conversation.len();
        if n_utts < MIN_TRAIN_UTTERANCES {
            return Err(Error::invalid(format!(
                "training conversations need at least {MIN_TRAIN_UTTERANCES} utterances, got {n_utts}"
            )));
        }
        if !(0.0..=1.0).contains(&anneal_weight) {
            return Err(Error::invalid(format!("anneal weight {anneal_weight} outside [0, 1]")));
        }
        let n = n_utts - 1;
        let vs = conversation
            .iter()
            .map(|u| self.encode_utterance(tape, u))
            .collect::<Result<Vec<_>>>()?;
        let (query, response) = (conversation[n - 1], conversation[n]);

        let mut kl_vars = Vec::new();
        let (h_q, h_r, lat_q, lat_r) = match self.mode() {
            ModelMode::Hred => {
                let states = self.context_states(tape, &vs, None, n)?;
                (states[n - 1], states[n], None, None)
            }
            ModelMode::Csrr => {
                let d = self.config.latent_dim;
                for noise_vec in [&noise.z_c, &noise.z_p, &noise.z_q, &noise.z_r] {
                    if noise_vec.len() != d {
                        return Err(Error::DimensionMismatch {
                            context: "latent noise",
                            expected: d,
                            actual: noise_vec.len(),
                        });
                    }
                }
                let q_c = self.posterior_z_c(tape, &vs)?;
                let p_c = self.prior_z_c(tape);
                let z_c = q_c.sample(tape, &noise.z_c);
                kl_vars.push((Latent::ZC, q_c.kl(tape, &p_c)));

                let states = self.context_states(tape, &vs, Some(z_c), n)?;
                let (h_q, h_r) = (states[n - 1], states[n]);

                let q_p = self.posterior_z_p(tape, vs[n - 1], vs[n], h_q, z_c)?;
                let p_p = self.prior_z_p(tape, h_q, z_c)?;
                let z_p = q_p.sample(tape, &noise.z_p);
                kl_vars.push((Latent::ZP, q_p.kl(tape, &p_p)));

                let q_q = self.posterior_z_i(tape, vs[n - 1], h_q, z_c, z_p)?;
                let p_q = self.prior_z_i(tape, h_q, z_c, z_p)?;
                let z_q = q_q.sample(tape, &noise.z_q);
                kl_vars.push((Latent::ZQ, q_q.kl(tape, &p_q)));

                let q_r = self.posterior_z_i(tape, vs[n], h_r, z_c, z_p)?;
                let p_r = self.prior_z_i(tape, h_r, z_c, z_p)?;
                let z_r = q_r.sample(tape, &noise.z_r);
                kl_vars.push((Latent::ZR, q_r.kl(tape, &p_r)));

                (h_q, h_r, Some((z_c, z_p, z_q)), Some((z_c, z_p, z_r)))
            }
        };

        let (nll_q, acc_q) = self.decode_nll(tape, query, h_q, lat_q)?;
        let (nll_r, acc_r) = self.decode_nll(tape, response, h_r, lat_r)?;
        let recon = tape.add(nll_q, nll_r);
        let loss = if kl_vars.is_empty() {
            recon
        } else {
            let kls: Vec<Var> = kl_vars.iter().map(|(_, v)| *v).collect();
            let kl_sum = tape.add_all(&kls);
            let weighted = tape.scale(kl_sum, anneal_weight);
            tape.add(recon, weighted)
        };

        let mut accuracy = acc_q;
        accuracy.add(acc_r);
        let breakdown = ElboBreakdown {
            recon_nll: tape.scalar(recon),
            kl: kl_vars
                .iter()
                .map(|(latent, v)| KlTerm {
                    latent: *latent,
                    value: tape.scalar(*v),
                })
                .collect(),
            anneal_weight,
            token_count: accuracy.total,
        };
        Ok((loss, breakdown, accuracy))
    }

    /// Evaluates the bound without gradients.
    pub fn forward_train(
        &self,
        store: &ParamStore,
        conversation: &[&[usize]],
        noise: &LatentNoise,
        anneal_weight: f64,
    ) -> Result<ElboBreakdown> {
        let mut tape = Tape::new(store);
        let (_, breakdown, _) = self.elbo(&mut tape, conversation, noise, anneal_weight)?;
        Ok(breakdown)
    }

    /// Evaluates the bound and adds its parameter gradients into `grads`.
    pub fn loss_and_grad(
        &self,
        store: &ParamStore,
        conversation: &[&[usize]],
        noise: &LatentNoise,
        anneal_weight: f64,
        grads: &mut Gradients,
    ) -> Result<ElboBreakdown> {
        let mut tape = Tape::new(store);
        let (loss, breakdown, _) = self.elbo(&mut tape, conversation, noise, anneal_weight)?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        tape.backward(loss, grads);
        Ok(breakdown)
    }

    /// Teacher-forced accuracy with posterior-mean latents.
    pub fn teacher_forced_accuracy(&self, store: &ParamStore, conversation: &[&[usize]]) -> Result<TokenAccuracy> {
        let mut tape = Tape::new(store);
        let noise = LatentNoise::zeros(self.config.latent_dim);
        let (_, _, acc) = self.elbo(&mut tape, conversation, &noise, 1.0)?;
        Ok(acc)
    }

    /// Test-time latents for generating the utterance after `history`:
    /// `z_c` from the posterior over the observed utterances, `z_p` and `z_r`
    /// from their priors (their posteriors need the unseen response).
    pub fn plan_response(&self, store: &ParamStore, history: &[&[usize]], noise: &LatentNoise) -> Result<ResponsePlan> {
        if history.is_empty() {
            return Err(Error::invalid("history must contain at least the query"));
        }
        let mut tape = Tape::new(store);
        let vs = history
            .iter()
            .map(|u| self.encode_utterance(&mut tape, u))
            .collect::<Result<Vec<_>>>()?;
        let n = history.len();
        let mean = noise.is_zero();
        match self.mode() {
            ModelMode::Hred => {
                let states = self.context_states(&mut tape, &vs, None, n)?;
                Ok(ResponsePlan {
                    latents: LatentBundle::default(),
                    context: tape.value(states[n].h).to_vec(),
                    condition: Vec::new(),
                })
            }
            ModelMode::Csrr => {
                let q_c = self.posterior_z_c(&mut tape, &vs)?;
                let z_c = q_c.sample(&mut tape, &noise.z_c);
                let states = self.context_states(&mut tape, &vs, Some(z_c), n)?;
                let p_p = self.prior_z_p(&mut tape, states[n - 1], z_c)?;
                let z_p = p_p.sample(&mut tape, &noise.z_p);
                let p_r = self.prior_z_i(&mut tape, states[n], z_c, z_p)?;
                let z_r = p_r.sample(&mut tape, &noise.z_r);
                let (post, prior) = if mean {
                    (LatentSource::PosteriorMean, LatentSource::PriorMean)
                } else {
                    (LatentSource::PosteriorSample, LatentSource::PriorSample)
                };
                let val = |v: Var| tape.value(v).to_vec();
                let condition: Vec<f64> = [z_c, z_p, z_r].iter().flat_map(|&v| val(v)).collect();
                Ok(ResponsePlan {
                    latents: LatentBundle {
                        z_c: Some(val(z_c)),
                        z_p: Some(val(z_p)),
                        z_q: None,
                        z_r: Some(val(z_r)),
                        sources: LatentSources {
                            z_c: Some(post),
                            z_p: Some(prior),
                            z_q: None,
                            z_r: Some(prior),
                        },
                    },
                    context: val(states[n].h),
                    condition,
                })
            }
        }
    }

    /// Convenience wrapper reading a Gaussian off the tape.
    pub fn gaussian_values(tape: &Tape, g: &GaussianVars) -> GaussianParams {
        g.to_params(tape)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
