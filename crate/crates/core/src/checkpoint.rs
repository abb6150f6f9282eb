//! Versioned JSON checkpoints for both model kinds.
//!
//! Floats are written in shortest round-trip form, so a reloaded model
//! predicts bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::LogisticModel;
use crate::error::{Error, Result};
use crate::mlp::AnyMlp;

pub const FORMAT: &str = "amifuse-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum SavedModel {
    Mlp(AnyMlp),
    Logistic(LogisticModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Feature column names in training order.
    pub columns: Vec<String>,
    #[serde(flatten)]
    pub saved: SavedModel,
}

impl Checkpoint {
    pub fn new(saved: SavedModel, columns: Vec<String>) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            columns,
            saved,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
