use std::collections::VecDeque;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(skip)]
    pub token_ids: Vec<usize>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// A running conversation. Holds at most `max_len` turns; older turns are
/// dropped first.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub vocab_hash: String,
    max_len: usize,
    turns: VecDeque<Turn>,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

impl Session {
    pub fn new(id: impl Into<String>, vocab_hash: impl Into<String>, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::invalid("session history cap must be >= 1"));
        }
        let now = now_ms();
        Ok(Self {
            id: id.into(),
            vocab_hash: vocab_hash.into(),
            max_len,
            turns: VecDeque::new(),
            created_at_ms: now,
            updated_at_ms: now,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter()
    }

    pub fn last(&self) -> Option<&Turn> {
        self.turns.back()
    }

    /// Appends a turn, evicting the oldest ones beyond the cap. Returns how
    /// many were evicted.
    pub fn push(&mut self, turn: Turn) -> usize {
        self.turns.push_back(turn);
        let mut evicted = 0;
        while self.turns.len() > self.max_len {
            self.turns.pop_front();
            evicted += 1;
        }
        self.updated_at_ms = now_ms();
        evicted
    }

    /// Token rows of every turn, oldest first.
    pub fn history(&self) -> Vec<&[usize]> {
        self.turns.iter().map(|t| t.token_ids.as_slice()).collect()
    }

    /// Token rows preceding the final model turn.
    pub fn history_before_last_model(&self) -> Result<Vec<&[usize]>> {
        match self.turns.back() {
            Some(t) if t.speaker == Speaker::Model => {
                let rows = self.history();
                Ok(rows[..rows.len() - 1].to_vec())
            }
            _ => Err(Error::invalid("no model turn to replace")),
        }
    }

    pub fn replace_last_model_turn(&mut self, turn: Turn) -> Result<()> {
        match self.turns.back_mut() {
            Some(t) if t.speaker == Speaker::Model => {
                *t = turn;
                self.updated_at_ms = now_ms();
                Ok(())
            }
            _ => Err(Error::invalid("no model turn to replace")),
        }
    }

    pub fn clear(&mut self) {
        self.turns.clear();
        self.updated_at_ms = now_ms();
    }
}
