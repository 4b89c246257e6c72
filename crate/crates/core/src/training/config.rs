use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub kl_anneal_steps: u64,
    pub max_steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
}

pub const SMALL_CORPUS_ANNEAL_STEPS: u64 = 15_000;
pub const LARGE_CORPUS_ANNEAL_STEPS: u64 = 250_000;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
            batch_size: 32,
            kl_anneal_steps: SMALL_CORPUS_ANNEAL_STEPS,
            max_steps: 100_000,
            seed: 0,
            checkpoint_every: 1000,
            hidden_dim: ModelConfig::DEFAULT_HIDDEN_DIM,
            embed_dim: ModelConfig::DEFAULT_EMBED_DIM,
            latent_dim: ModelConfig::DEFAULT_LATENT_DIM,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("config line {line}: bad value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size as u64),
            ("kl_anneal_steps", self.kl_anneal_steps),
            ("max_steps", self.max_steps),
            ("checkpoint_every", self.checkpoint_every),
            ("hidden_dim", self.hidden_dim as u64),
            ("embed_dim", self.embed_dim as u64),
            ("latent_dim", self.latent_dim as u64),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Parses flat `key=value` lines; `#` starts a comment. Keys not given keep
    /// their defaults, unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {line_no}: expected key=value")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "learning_rate" => cfg.learning_rate = parse_num(key, value, line_no)?,
                "beta1" => cfg.beta1 = parse_num(key, value, line_no)?,
                "beta2" => cfg.beta2 = parse_num(key, value, line_no)?,
                "epsilon" => cfg.epsilon = parse_num(key, value, line_no)?,
                "clip_norm" => cfg.clip_norm = parse_num(key, value, line_no)?,
                "batch_size" => cfg.batch_size = parse_num(key, value, line_no)?,
                "kl_anneal_steps" => cfg.kl_anneal_steps = parse_num(key, value, line_no)?,
                "max_steps" => cfg.max_steps = parse_num(key, value, line_no)?,
                "seed" => cfg.seed = parse_num(key, value, line_no)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_num(key, value, line_no)?,
                "hidden_dim" => cfg.hidden_dim = parse_num(key, value, line_no)?,
                "embed_dim" => cfg.embed_dim = parse_num(key, value, line_no)?,
                "latent_dim" => cfg.latent_dim = parse_num(key, value, line_no)?,
                other => return Err(Error::invalid(format!("config line {line_no}: unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "beta1={}", self.beta1);
        let _ = writeln!(s, "beta2={}", self.beta2);
        let _ = writeln!(s, "epsilon={}", self.epsilon);
        let _ = writeln!(s, "clip_norm={}", self.clip_norm);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "kl_anneal_steps={}", self.kl_anneal_steps);
        let _ = writeln!(s, "max_steps={}", self.max_steps);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "checkpoint_every={}", self.checkpoint_every);
        let _ = writeln!(s, "hidden_dim={}", self.hidden_dim);
        let _ = writeln!(s, "embed_dim={}", self.embed_dim);
        let _ = writeln!(s, "latent_dim={}", self.latent_dim);
        s
    }

    pub fn model_config(&self, vocab_size: usize, pad_length: usize, max_conv_length: usize, mode: ModelMode) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            latent_dim: self.latent_dim,
            pad_length,
            max_conv_length,
            vocab_size,
            mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        assert_eq!(TrainConfig::default().batch_size, 32);
    }

    #[test]
    fn text_round_trip() {
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 7,
            kl_anneal_steps: 10,
            seed: 42,
            ..Default::default()
        };
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parse_comments_and_partial() {
        let cfg = TrainConfig::parse("# toy\nmax_steps = 50  # short\n\nseed=3\n").unwrap();
        assert_eq!(cfg.max_steps, 50);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.learning_rate, 1e-4);
    }

    #[test]
    fn parse_errors() {
        assert!(TrainConfig::parse("learning_rat=1").is_err());
        assert!(TrainConfig::parse("batch_size").is_err());
        assert!(TrainConfig::parse("batch_size=x").is_err());
        assert!(TrainConfig::parse("kl_anneal_steps=0").is_err());
        assert!(TrainConfig::parse("learning_rate=-1").is_err());
        assert!(TrainConfig::parse("beta2=1.0").is_err());
    }
}
