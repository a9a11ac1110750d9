//! Role-tagged agent transcripts in the shape of public agent-safety logs.
//!
//! Canonical form:
//! `{"id": "...", "label": 0|1, "turns": [{"role": "user", "content": "..."}, ...]}`
//! with roles `user`, `thought`, `action`, `feedback`. The nested log shape
//! (`"contents": [[{"role": "agent", "thought": .., "action": ..},
//! {"role": "environment", "content": ..}]]`) is normalized into it.

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::{vocab, TrajectoryExample};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TurnRole {
    User,
    Thought,
    Action,
    Feedback,
}

impl TurnRole {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(TurnRole::User),
            "thought" => Ok(TurnRole::Thought),
            "action" => Ok(TurnRole::Action),
            "feedback" => Ok(TurnRole::Feedback),
            other => Err(Error::Input(format!("unknown turn role {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TurnRole::User => "user",
            TurnRole::Thought => "thought",
            TurnRole::Action => "action",
            TurnRole::Feedback => "feedback",
        }
    }

    pub fn slot(self) -> usize {
        match self {
            TurnRole::User => vocab::USER,
            TurnRole::Thought => vocab::THOUGHT,
            TurnRole::Action => vocab::ACTION,
            TurnRole::Feedback => vocab::FEEDBACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub role: TurnRole,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptRecord {
    pub id: String,
    pub label: u8,
    pub turns: Vec<Turn>,
}

fn field_str<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str> {
    obj.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Input(format!("turn is missing string field {key:?}")))
}

fn parse_label(v: Option<&Value>) -> Result<u8> {
    match v {
        None | Some(Value::Null) => Err(Error::Input("record has no label".into())),
        Some(Value::Number(n)) => match n.as_u64() {
            Some(0) => Ok(0),
            Some(1) => Ok(1),
            _ => Err(Error::Input(format!("label {n} must be 0 or 1"))),
        },
        Some(Value::String(s)) => match s.as_str() {
            "0" | "safe" => Ok(0),
            "1" | "unsafe" => Ok(1),
            _ => Err(Error::Input(format!("label {s:?} must be 0 or 1"))),
        },
        Some(other) => Err(Error::Input(format!("label {other} must be 0 or 1"))),
    }
}

fn nested_turns(contents: &[Value]) -> Result<Vec<Turn>> {
    let mut turns = Vec::new();
    let flat = contents.iter().flat_map(|c| match c {
        Value::Array(items) => items.iter().collect::<Vec<_>>(),
        other => vec![other],
    });
    for item in flat {
        let obj = item
            .as_object()
            .ok_or_else(|| Error::Input("turn must be an object".into()))?;
        let role = field_str(obj, "role")?;
        match role {
            "user" => turns.push(Turn {
                role: TurnRole::User,
                content: field_str(obj, "content")?.to_string(),
            }),
            "agent" => {
                for (key, role) in [("thought", TurnRole::Thought), ("action", TurnRole::Action)] {
                    if let Some(text) = obj.get(key).and_then(Value::as_str) {
                        turns.push(Turn {
                            role,
                            content: text.to_string(),
                        });
                    }
                }
            }
            "environment" => turns.push(Turn {
                role: TurnRole::Feedback,
                content: obj.get("content").and_then(Value::as_str).unwrap_or("").to_string(),
            }),
            other => {
                let role = TurnRole::parse(other)?;
                turns.push(Turn {
                    role,
                    content: field_str(obj, "content")?.to_string(),
                });
            }
        }
    }
    Ok(turns)
}

impl TranscriptRecord {
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Input("transcript record must be a JSON object".into()))?;
        let id = match obj.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(Error::Input("record has no id".into())),
        };
        let label = parse_label(obj.get("label"))?;
        let turns = if let Some(turns) = obj.get("turns") {
            let arr = turns
                .as_array()
                .ok_or_else(|| Error::Input("\"turns\" must be an array".into()))?;
            arr.iter()
                .map(|t| {
                    let o = t
                        .as_object()
                        .ok_or_else(|| Error::Input("turn must be an object".into()))?;
                    Ok(Turn {
                        role: TurnRole::parse(field_str(o, "role")?)?,
                        content: field_str(o, "content")?.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else if let Some(Value::Array(contents)) = obj.get("contents") {
            nested_turns(contents)?
        } else {
            return Err(Error::Input("record has neither \"turns\" nor \"contents\"".into()));
        };
        Ok(Self { id, label, turns })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_json(&value)
    }

    pub fn to_json(&self) -> Value {
        let turns: Vec<Value> = self
            .turns
            .iter()
            .map(|t| json!({"role": t.role.name(), "content": t.content}))
            .collect();
        json!({"id": self.id, "label": self.label, "turns": turns})
    }

    pub fn to_canonical_string(&self) -> String {
        self.to_json().to_string()
    }

    /// One role separator per turn, followed by the turn's word tokens.
    pub fn tokenize(&self, vocab_size: usize) -> Result<TrajectoryExample> {
        if vocab_size <= vocab::RESERVED {
            return Err(Error::Config(format!(
                "vocabulary of {vocab_size} leaves no content ids"
            )));
        }
        let content = (vocab_size - vocab::RESERVED) as u64;
        let mut tokens = Vec::new();
        for turn in &self.turns {
            tokens.push(vocab::role_token(vocab_size, turn.role.slot()));
            for word in turn.content.split_whitespace() {
                let digest = Sha256::digest(word.to_lowercase().as_bytes());
                let mut head = [0u8; 8];
                head.copy_from_slice(&digest[..8]);
                tokens.push((u64::from_le_bytes(head) % content) as usize);
            }
        }
        Ok(TrajectoryExample::new(self.id.clone(), tokens, self.label))
    }
}

/// Parses one record and serializes it into a labelled token sequence.
pub fn parse_transcript(text: &str, vocab_size: usize) -> Result<TrajectoryExample> {
    TranscriptRecord::parse(text)?.tokenize(vocab_size)
}

/// Tokenizes an already-parsed record.
pub fn tokenize_transcript(record: &TranscriptRecord, vocab_size: usize) -> Result<TrajectoryExample> {
    record.tokenize(vocab_size)
}
