use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{DEFAULT_MAX_CONV_LENGTH, DEFAULT_PAD_LENGTH};
use crate::error::{Error, Result};
use crate::nn::{GaussianHead, GruParams, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    Csrr,
    /// Same network with every latent variable removed.
    Hred,
}

impl ModelMode {
    pub fn has_latents(self) -> bool {
        matches!(self, ModelMode::Csrr)
    }
}

impl FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csrr" => Ok(ModelMode::Csrr),
            "hred" => Ok(ModelMode::Hred),
            other => Err(Error::invalid(format!("unknown model mode {other:?} (expected csrr or hred)"))),
        }
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelMode::Csrr => "csrr",
            ModelMode::Hred => "hred",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub pad_length: usize,
    pub max_conv_length: usize,
    pub vocab_size: usize,
    pub mode: ModelMode,
}

impl ModelConfig {
    pub const DEFAULT_HIDDEN_DIM: usize = 1000;
    pub const DEFAULT_EMBED_DIM: usize = 500;
    pub const DEFAULT_LATENT_DIM: usize = 100;

    pub fn new(vocab_size: usize, mode: ModelMode) -> Self {
        Self {
            hidden_dim: Self::DEFAULT_HIDDEN_DIM,
            embed_dim: Self::DEFAULT_EMBED_DIM,
            latent_dim: Self::DEFAULT_LATENT_DIM,
            pad_length: DEFAULT_PAD_LENGTH,
            max_conv_length: DEFAULT_MAX_CONV_LENGTH,
            vocab_size,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("latent_dim", self.latent_dim),
            ("max_conv_length", self.max_conv_length),
        ];
        for (name, v) in dims {
            if v < 1 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if self.pad_length < 2 {
            return Err(Error::invalid("pad_length must be >= 2"));
        }
        if self.vocab_size < 5 {
            return Err(Error::invalid("vocab_size must be >= 5"));
        }
        Ok(())
    }

    /// Dimension of an utterance vector: both directions of the encoder.
    pub fn utterance_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Total latent width fed to the decoder (`z_c; z_p; z_i`), zero for HRED.
    pub fn decoder_latent_dim(&self) -> usize {
        if self.mode.has_latents() {
            3 * self.latent_dim
        } else {
            0
        }
    }
}

/// Number of trainable scalars for `config`, from the layer shapes alone.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let (h, e, z, v) = (config.hidden_dim, config.embed_dim, config.latent_dim, config.vocab_size);
    let u = config.utterance_dim();
    let gru = GruParams::num_values;
    let mut total = v * e + 2 * gru(e, h) + h * v + v;
    match config.mode {
        ModelMode::Csrr => {
            total += gru(u + z, h) + Mlp::num_values(z, h);
            total += 2 * gru(u, h) + GaussianHead::num_values(u, z);
            total += GaussianHead::num_values(h + z, z);
            total += GaussianHead::num_values(h + 2 * z, z);
            total += GaussianHead::num_values(2 * u + h + z, z);
            total += GaussianHead::num_values(u + h + 2 * z, z);
            total += Mlp::num_values(h + 3 * z, h) + gru(e + 3 * z, h);
        }
        ModelMode::Hred => {
            total += gru(u, h) + Mlp::num_values(h, h) + gru(e, h);
        }
    }
    total
}
