use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::{Critique, Difficulty, TaskKind};
use crate::text::Lang;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Void,
    Refine,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Void => "void",
            Stage::Refine => "refine",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One SFT example with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub stage: Stage,
    pub lang: Lang,
    pub tag_chain: Vec<String>,
    pub task: TaskKind,
    pub difficulty: Difficulty,
    pub question: String,
    pub response: String,
    pub origin_response: Option<String>,
    pub critique: Option<Critique>,
    pub model_id: String,
    pub created_at: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("record {id}: {reason}")]
pub struct SchemaViolation {
    pub id: String,
    pub reason: String,
}

/// 32 hex digits of SHA-256 over the cell coordinates and the run seed.
/// Retrying a request therefore reproduces the same id.
pub fn record_id(lang: Lang, tag_chain: &[String], task: TaskKind, difficulty: Difficulty, seed: u64) -> String {
    let mut h = Sha256::new();
    for part in [lang.as_str(), task.key(), difficulty.as_str()] {
        h.update(part.as_bytes());
        h.update([0x1f]);
    }
    for label in tag_chain {
        h.update(label.as_bytes());
        h.update([0x1e]);
    }
    h.update(seed.to_le_bytes());
    hex::encode(&h.finalize()[..16])
}

impl SampleRecord {
    pub fn validate(&self) -> Result<(), SchemaViolation> {
        let fail = |reason: &str| {
            Err(SchemaViolation {
                id: self.id.clone(),
                reason: reason.to_owned(),
            })
        };
        if self.id.trim().is_empty() {
            return fail("id is empty");
        }
        if self.tag_chain.is_empty() {
            return fail("tag_chain is empty");
        }
        if self.question.trim().is_empty() {
            return fail("question is empty");
        }
        if self.response.trim().is_empty() {
            return fail("response is empty");
        }
        match self.stage {
            Stage::Void => {
                if self.origin_response.is_some() || self.critique.is_some() {
                    return fail("void record carries origin_response or critique");
                }
            }
            Stage::Refine => {
                match &self.origin_response {
                    Some(o) if !o.trim().is_empty() => {}
                    _ => return fail("refine record lacks origin_response"),
                }
                match &self.critique {
                    Some(c) if c.is_complete() => {}
                    Some(_) => return fail("refine record has an incomplete critique"),
                    None => return fail("refine record lacks critique"),
                }
            }
        }
        Ok(())
    }
}
