//! Whitespace tokenization over a fixed surface-form table.
//!
//! Toy models carry their vocabulary inside the weight file; text is
//! NFC-normalized and split on whitespace, and every resulting word must
//! be a known surface form. Imported models skip this module entirely and
//! are probed with externally produced token ids.

use std::collections::HashMap;

use unicode_normalization::UnicodeNormalization;

use crate::engine::ModelConfig;
use crate::error::{Error, Result};

pub const MASK_SURFACE: &str = "[MASK]";
pub const PAD_SURFACE: &str = "[PAD]";
pub const BOS_SURFACE: &str = "[BOS]";

/// NFC-normalize a string. All loaders apply this before comparing
/// surface forms, so equality is well-defined across scripts.
pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

/// Bidirectional map between token ids and surface forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    surfaces: Vec<String>,
    index: HashMap<String, u32>,
    mask_token_id: u32,
    bos_token_id: u32,
}

impl Vocab {
    /// Build from an id-ordered surface list; the config pins which ids
    /// are the special tokens.
    pub fn from_surfaces(surfaces: Vec<String>, config: &ModelConfig) -> Result<Self> {
        if surfaces.len() != config.vocab_size {
            return Err(Error::Integrity(format!(
                "vocab holds {} surfaces but config declares vocab_size {}",
                surfaces.len(),
                config.vocab_size
            )));
        }
        let mut index = HashMap::with_capacity(surfaces.len());
        for (id, surface) in surfaces.iter().enumerate() {
            if index.insert(surface.clone(), id as u32).is_some() {
                return Err(Error::Integrity(format!("duplicate surface form {surface:?}")));
            }
        }
        Ok(Vocab {
            surfaces,
            index,
            mask_token_id: config.mask_token_id,
            bos_token_id: config.bos_token_id,
        })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn mask_token_id(&self) -> u32 {
        self.mask_token_id
    }

    pub fn bos_token_id(&self) -> u32 {
        self.bos_token_id
    }

    pub fn id_of(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn surface_of(&self, id: u32) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    /// Tokenize whitespace-separated text. Unknown words are input errors,
    /// never silently mapped.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let normalized = nfc(text);
        normalized
            .split_whitespace()
            .map(|word| {
                self.id_of(word)
                    .ok_or_else(|| Error::Input(format!("unknown token {word:?}")))
            })
            .collect()
    }

    /// Render token ids back to space-joined text.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = ids
            .iter()
            .map(|&id| {
                self.surface_of(id)
                    .ok_or_else(|| Error::Input(format!("token id {id} out of range")))
            })
            .collect();
        Ok(words?.join(" "))
    }
}
