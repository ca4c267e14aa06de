use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeCategory {
    Diagnosis,
    Procedure,
    Medication,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalCode {
    pub id: String,
    pub category: CodeCategory,
    #[serde(default)]
    pub label: String,
}

/// The global code set; a code's index is its position in the list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct CodeVocabulary {
    codes: Vec<ClinicalCode>,
    index: HashMap<String, usize>,
}

impl CodeVocabulary {
    pub fn new(codes: Vec<ClinicalCode>) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::Vocabulary("vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if index.insert(c.id.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate code `{}`", c.id)));
            }
        }
        Ok(Self { codes, index })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, index: usize) -> Option<&ClinicalCode> {
        self.codes.get(index)
    }

    pub fn codes(&self) -> &[ClinicalCode] {
        &self.codes
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn resolve(&self, id: &str) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::Vocabulary(format!("unknown code `{id}`")))
    }

    /// SHA-256 over the ordered code identifiers and categories.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.codes {
            h.update(c.id.as_bytes());
            h.update([0u8]);
            h.update(format!("{:?}", c.category).as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    codes: Vec<ClinicalCode>,
}

impl TryFrom<VocabRepr> for CodeVocabulary {
    type Error = Error;

    fn try_from(r: VocabRepr) -> Result<Self> {
        CodeVocabulary::new(r.codes)
    }
}

impl From<CodeVocabulary> for VocabRepr {
    fn from(v: CodeVocabulary) -> Self {
        VocabRepr { codes: v.codes }
    }
}
