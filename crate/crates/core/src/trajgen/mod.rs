//! Synthetic trajectory corpora, transcript ingestion and dataset I/O.

mod generator;
mod io;
mod transcript;

pub use generator::{generate_corpus, make_shifted_config, GeneratorConfig, NoiseModel, PatternTable};
pub use io::{load_jsonl, save_jsonl, split, Split};
pub use transcript::{parse_transcript, tokenize_transcript, TranscriptRecord, Turn, TurnRole};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Vocabulary layout: the top ids are reserved for role separators and the
/// decision token; everything below is free content.
pub mod vocab {
    /// Number of reserved ids at the top of the vocabulary.
    pub const RESERVED: usize = 8;

    pub const USER: usize = 0;
    pub const THOUGHT: usize = 1;
    pub const ACTION: usize = 2;
    pub const FEEDBACK: usize = 3;
    pub const DECISION: usize = 4;

    /// Token id of reserved slot `slot` (0..RESERVED).
    pub fn role_token(vocab_size: usize, slot: usize) -> usize {
        vocab_size - RESERVED + slot
    }

    pub fn decision_token(vocab_size: usize) -> usize {
        role_token(vocab_size, DECISION)
    }

    pub fn is_role_separator(vocab_size: usize, token: usize) -> bool {
        (role_token(vocab_size, USER)..=role_token(vocab_size, FEEDBACK)).contains(&token)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub risk_positions: Vec<usize>,
    pub generator_config_id: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One labelled trajectory. `label` is 1 for unsafe, 0 for safe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryExample {
    pub id: String,
    pub tokens: Vec<usize>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl TrajectoryExample {
    pub fn new(id: impl Into<String>, tokens: Vec<usize>, label: u8) -> Self {
        Self {
            id: id.into(),
            tokens,
            label,
            meta: None,
            extra: Map::new(),
        }
    }

    pub fn is_unsafe(&self) -> bool {
        self.label == 1
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.label > 1 {
            return Err(crate::Error::Input(format!(
                "example {} has label {}, expected 0 or 1",
                self.id, self.label
            )));
        }
        if let Some(meta) = &self.meta {
            if let Some(&p) = meta.risk_positions.iter().find(|&&p| p >= self.tokens.len()) {
                return Err(crate::Error::Input(format!(
                    "example {} risk position {p} outside {} tokens",
                    self.id,
                    self.tokens.len()
                )));
            }
        }
        Ok(())
    }
}
