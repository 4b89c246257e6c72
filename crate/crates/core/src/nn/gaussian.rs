use rand::Rng;
use rand_distr::StandardNormal;

use super::layers::Mlp;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Added after softplus so no standard deviation reaches zero.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Diagonal Gaussian `N(mu, diag(sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::DimensionMismatch {
                context: "gaussian mu/sigma",
                expected: mu.len(),
                actual: sigma.len(),
            });
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("gaussian sigma must be positive and finite, got {s}")));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("gaussian mu".into()));
        }
        Ok(Self { mu, sigma })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `mu + sigma ⊙ noise`
pub fn gaussian_sample(g: &GaussianParams, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            context: "gaussian_sample noise",
            expected: g.dim(),
            actual: noise.len(),
        });
    }
    Ok(g.mu.iter().zip(&g.sigma).zip(noise).map(|((m, s), e)| m + s * e).collect())
}

/// Closed-form `KL(q || p)` between diagonal Gaussians.
pub fn gaussian_kl(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            context: "gaussian_kl",
            expected: q.dim(),
            actual: p.dim(),
        });
    }
    for s in q.sigma.iter().chain(&p.sigma) {
        if !(*s > 0.0) {
            return Err(Error::invalid(format!("gaussian_kl: non-positive sigma {s}")));
        }
    }
    Ok((0..q.dim())
        .map(|i| {
            let (qm, qs, pm, ps) = (q.mu[i], q.sigma[i], p.mu[i], p.sigma[i]);
            (ps / qs).ln() + (qs * qs + (qm - pm).powi(2)) / (2.0 * ps * ps) - 0.5
        })
        .sum())
}

pub fn standard_normal<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// A Gaussian living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mu: Var,
    pub sigma: Var,
}

impl GaussianVars {
    pub fn standard(tape: &mut Tape, dim: usize) -> Self {
        Self {
            mu: tape.constant(vec![0.0; dim]),
            sigma: tape.constant(vec![1.0; dim]),
        }
    }

    pub fn to_params(&self, tape: &Tape) -> GaussianParams {
        GaussianParams {
            mu: tape.value(self.mu).to_vec(),
            sigma: tape.value(self.sigma).to_vec(),
        }
    }

    pub fn sample(&self, tape: &mut Tape, noise: &[f64]) -> Var {
        let eps = tape.constant(noise.to_vec());
        let scaled = tape.mul(self.sigma, eps);
        tape.add(self.mu, scaled)
    }

    /// Differentiable closed-form `KL(self || p)`.
    pub fn kl(&self, tape: &mut Tape, p: &GaussianVars) -> Var {
        let log_ps = tape.log(p.sigma);
        let log_qs = tape.log(self.sigma);
        let log_ratio = tape.sub(log_ps, log_qs);
        let q_var = tape.square(self.sigma);
        let diff = tape.sub(self.mu, p.mu);
        let diff2 = tape.square(diff);
        let num = tape.add(q_var, diff2);
        let p_var = tape.square(p.sigma);
        let inv = tape.recip(p_var);
        let frac = tape.mul(num, inv);
        let half = tape.scale(frac, 0.5);
        let terms = tape.add(log_ratio, half);
        let centred = tape.add_scalar(terms, -0.5);
        tape.sum(centred)
    }
}

/// Two MLP heads producing a Gaussian; the scale head goes through softplus
/// and the floor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaussianHead {
    pub mu: Mlp,
    pub sigma: Mlp,
}

impl GaussianHead {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, latent_dim: usize, rng: &mut R) -> Self {
        Self {
            mu: Mlp::with_hidden(store, &format!("{name}.mu"), input_dim, latent_dim, rng),
            sigma: Mlp::with_hidden(store, &format!("{name}.sigma"), input_dim, latent_dim, rng),
        }
    }

    pub fn num_values(input_dim: usize, latent_dim: usize) -> usize {
        2 * Mlp::num_values(input_dim, latent_dim)
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<GaussianVars> {
        let mu = self.mu.apply(tape, x)?;
        let pre = self.sigma.apply(tape, x)?;
        let sp = tape.softplus(pre);
        let sigma = tape.add_scalar(sp, SIGMA_FLOOR);
        Ok(GaussianVars { mu, sigma })
    }
}
