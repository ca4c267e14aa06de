use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::vocab::CodeVocabulary;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const AGE_GROUPS: usize = 3;
pub const REGIONS: usize = 5;
/// Length of the one-hot demographics vector (age group bits, then region bits).
pub const DEMO_DIM: usize = AGE_GROUPS + REGIONS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demographics {
    pub age_group: u8,
    pub region: u8,
}

impl Demographics {
    pub fn new(age_group: u8, region: u8) -> Result<Self> {
        let d = Self { age_group, region };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if usize::from(self.age_group) >= AGE_GROUPS || usize::from(self.region) >= REGIONS {
            return Err(Error::Validation(format!(
                "demographics out of range: age group {}, region {}",
                self.age_group, self.region
            )));
        }
        Ok(())
    }

    pub fn one_hot(&self) -> Tensor {
        let mut t = Tensor::zeros(&[DEMO_DIM]);
        t.data_mut()[usize::from(self.age_group)] = 1.0;
        t.data_mut()[AGE_GROUPS + usize::from(self.region)] = 1.0;
        t
    }
}

/// One encounter: a set of code indices and a day offset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Visit {
    pub timestamp_days: i64,
    codes: Vec<usize>,
}

impl Visit {
    /// Duplicate codes are collapsed; the stored indices are sorted.
    pub fn new(timestamp_days: i64, codes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let set: BTreeSet<usize> = codes.into_iter().collect();
        if set.is_empty() {
            return Err(Error::Validation("visit without codes".into()));
        }
        Ok(Self {
            timestamp_days,
            codes: set.into_iter().collect(),
        })
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn contains(&self, code: usize) -> bool {
        self.codes.binary_search(&code).is_ok()
    }

    /// The visit with `code` removed, or `None` when nothing would remain.
    pub fn without(&self, code: usize) -> Option<Visit> {
        let codes: Vec<usize> = self.codes.iter().copied().filter(|&c| c != code).collect();
        (!codes.is_empty()).then(|| Visit {
            timestamp_days: self.timestamp_days,
            codes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub demographics: Demographics,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    pub fn new(id: impl Into<String>, demographics: Demographics, visits: Vec<Visit>) -> Self {
        Self {
            id: id.into(),
            demographics,
            visits,
        }
    }

    pub fn num_visits(&self) -> usize {
        self.visits.len()
    }

    /// Checks the record invariants against a vocabulary of `vocab_size` codes.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.visits.is_empty() {
            return Err(Error::Validation(format!("patient `{}` has no visits", self.id)));
        }
        self.demographics.validate()?;
        let mut prev = i64::MIN;
        for (j, v) in self.visits.iter().enumerate() {
            if v.codes.is_empty() {
                return Err(Error::Validation(format!(
                    "patient `{}` visit {j} has no codes",
                    self.id
                )));
            }
            if let Some(&bad) = v.codes.iter().find(|&&c| c >= vocab_size) {
                return Err(Error::Vocabulary(format!(
                    "patient `{}` visit {j}: code index {bad} outside vocabulary of {vocab_size}",
                    self.id
                )));
            }
            if v.codes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(format!(
                    "patient `{}` visit {j} has unsorted or duplicate codes",
                    self.id
                )));
            }
            if v.timestamp_days < prev {
                return Err(Error::Validation(format!(
                    "patient `{}` visit {j}: timestamps decrease",
                    self.id
                )));
            }
            prev = v.timestamp_days;
        }
        Ok(())
    }

    /// Distinct codes across all visits, ascending.
    pub fn distinct_codes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.visits.iter().flat_map(|v| v.codes.iter().copied()).collect();
        set.into_iter().collect()
    }

    pub fn contains_code(&self, code: usize) -> bool {
        self.visits.iter().any(|v| v.contains(code))
    }

    /// Number of visits that contain `code`.
    pub fn code_count(&self, code: usize) -> usize {
        self.visits.iter().filter(|v| v.contains(code)).count()
    }
}

/// Binary `T × |C|` matrix whose row `j` marks the codes of visit `j`.
pub fn build_visit_matrix(record: &PatientRecord, vocab: &CodeVocabulary) -> Result<Tensor> {
    visit_matrix(record, vocab.len())
}

pub(crate) fn visit_matrix(record: &PatientRecord, vocab_size: usize) -> Result<Tensor> {
    if record.visits.is_empty() {
        return Err(Error::Validation(format!("patient `{}` has no visits", record.id)));
    }
    let t_len = record.visits.len();
    let mut m = Tensor::zeros(&[t_len, vocab_size]);
    let data = m.data_mut();
    for (j, v) in record.visits.iter().enumerate() {
        for &c in &v.codes {
            if c >= vocab_size {
                return Err(Error::Vocabulary(format!(
                    "code index {c} outside vocabulary of {vocab_size}"
                )));
            }
            data[j * vocab_size + c] = 1.0;
        }
    }
    Ok(m)
}

/// Records of one complication task with their binary outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub task: String,
    pub records: Vec<PatientRecord>,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(task: impl Into<String>, records: Vec<PatientRecord>, labels: Vec<u8>) -> Result<Self> {
        let d = Self {
            task: task.into(),
            records,
            labels,
        };
        if d.labels.len() != d.records.len() {
            return Err(Error::Validation(format!(
                "task `{}`: {} labels for {} records",
                d.task,
                d.labels.len(),
                d.records.len()
            )));
        }
        if d.labels.iter().any(|&y| y > 1) {
            return Err(Error::Validation(format!("task `{}`: label outside {{0,1}}", d.task)));
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            task: self.task.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Descriptive metadata for one complication task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplicationInfo {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub icd_groups: Vec<String>,
}

/// The cardiac complications of the breast-cancer cohort and their ICD-10 groups.
pub fn cardiac_complications() -> Vec<ComplicationInfo> {
    let rows: [(&str, &str, &[&str]); 6] = [
        ("af", "Atrial fibrillation", &["I48"]),
        ("cad", "Coronary artery disease", &["I20-I25"]),
        ("hf", "Heart failure", &["I11", "I13", "I42", "I50"]),
        ("hypertension", "Hypertension", &["I10", "I16"]),
        ("pad", "Peripheral arterial disease", &["I70"]),
        ("stroke", "Stroke", &["I60-I69"]),
    ];
    rows.iter()
        .map(|(name, desc, icd)| ComplicationInfo {
            name: name.to_string(),
            description: desc.to_string(),
            icd_groups: icd.iter().map(|s| s.to_string()).collect(),
        })
        .collect()
}

/// `N` labeled complication datasets, an unlabeled pool, and the vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub vocabulary: CodeVocabulary,
    pub tasks: Vec<LabeledDataset>,
    pub unlabeled: Vec<PatientRecord>,
    pub complications: Vec<ComplicationInfo>,
}

impl TaskBundle {
    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.task.clone()).collect()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.task == name)
    }

    /// Validates every record and the bundle-level invariants.
    pub fn validate(&self, contrastive: bool) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Validation("bundle has no labeled tasks".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.tasks {
            if !names.insert(t.task.as_str()) {
                return Err(Error::Validation(format!("duplicate task `{}`", t.task)));
            }
            if t.labels.len() != t.records.len() || t.labels.iter().any(|&y| y > 1) {
                return Err(Error::Validation(format!("task `{}`: labels do not match records", t.task)));
            }
            for r in &t.records {
                r.validate(self.vocabulary.len())?;
            }
        }
        if contrastive && self.unlabeled.is_empty() {
            return Err(Error::Validation(
                "contrastive training needs a non-empty unlabeled pool".into(),
            ));
        }
        for r in &self.unlabeled {
            r.validate(self.vocabulary.len())?;
        }
        Ok(())
    }
}
