//! Attention-based explanations: per-task code rankings, per-patient case
//! studies, and remove-and-repredict ablations.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{CodeVocabulary, LabeledDataset, PatientRecord};
use crate::error::{Error, Result};
use crate::model::MuViTaNet;

/// Describes how table weights are aggregated; copied into every table.
pub const AVERAGING_NOTE: &str = "attention times distinct codes in the record, \
averaged over the selected patients whose record contains the code";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureImportance {
    pub rank: usize,
    pub code_index: usize,
    pub code: String,
    pub label: String,
    pub weight: f64,
    /// Selected patients whose record contains the code.
    pub patients: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureImportanceTable {
    pub task: String,
    pub positive_only: bool,
    pub patients_used: usize,
    pub averaging: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub entries: Vec<FeatureImportance>,
}

impl FeatureImportanceTable {
    pub fn position_of(&self, code_index: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.code_index == code_index)
    }

    /// Rows `task,rank,code,label,weight` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,rank,code,label,weight\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&self.task),
                e.rank,
                csv_field(&e.code),
                csv_field(&e.label),
                e.weight
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn code_names(vocab: &CodeVocabulary, index: usize) -> (String, String) {
    match vocab.code(index) {
        Some(c) => (c.id.clone(), c.label.clone()),
        None => (index.to_string(), String::new()),
    }
}

/// Global code ranking for `task` from the feature-view attention `β̂`.
///
/// Each selected patient contributes `β̂_c · m` for every code `c` in the
/// record, `m` being its distinct code count; a code's weight is the mean of
/// its contributions. Ties keep vocabulary order.
pub fn rank_features(
    model: &MuViTaNet,
    dataset: &LabeledDataset,
    task: &str,
    positive_only: bool,
    top_k: Option<usize>,
    vocab: &CodeVocabulary,
) -> Result<FeatureImportanceTable> {
    let k = model.task_index(task)?;
    if dataset.is_empty() {
        return Err(Error::Domain(format!("task `{task}`: no records to rank features on")));
    }
    let mut contributions: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut used = 0;
    for (r, &y) in dataset.records.iter().zip(&dataset.labels) {
        if positive_only && y != 1 {
            continue;
        }
        let trace = model.trace(r, k)?;
        let beta = trace
            .beta
            .ok_or_else(|| Error::Config(format!("variant `{}` has no feature-view attention", model.variant)))?;
        let codes = r.distinct_codes();
        let m = codes.len() as f64;
        for c in codes {
            contributions.entry(c).or_default().push(beta.data()[c] * m);
        }
        used += 1;
    }
    let mut scored: Vec<(usize, f64, usize)> = contributions
        .into_iter()
        .map(|(c, mut v)| {
            // Summing in sorted order keeps the result independent of record order.
            v.sort_by(f64::total_cmp);
            (c, v.iter().sum::<f64>() / v.len() as f64, v.len())
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(k) = top_k {
        scored.truncate(k);
    }
    let entries = scored
        .into_iter()
        .enumerate()
        .map(|(i, (c, weight, patients))| {
            let (code, label) = code_names(vocab, c);
            FeatureImportance {
                rank: i + 1,
                code_index: c,
                code,
                label,
                weight,
                patients,
            }
        })
        .collect();
    Ok(FeatureImportanceTable {
        task: task.to_string(),
        positive_only,
        patients_used: used,
        averaging: AVERAGING_NOTE.to_string(),
        warning: (used == 0).then(|| format!("task `{task}` has no positive patients; table is empty")),
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VisitWeight {
    pub index: usize,
    pub timestamp_days: i64,
    pub weight: f64,
    pub codes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureWeight {
    pub code_index: usize,
    pub code: String,
    pub label: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationResult {
    pub removal: String,
    pub prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CaseStudyReport {
    pub patient_id: String,
    pub task: String,
    pub prediction: f64,
    /// Empty when the model has no visit view.
    pub top_visits: Vec<VisitWeight>,
    /// Codes present in the record, by `β̂`. Empty without a feature view.
    pub top_features: Vec<FeatureWeight>,
    #[serde(default)]
    pub ablations: Vec<AblationResult>,
}

impl CaseStudyReport {
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "patient {}  task {}  prediction {:.4}\n",
            self.patient_id, self.task, self.prediction
        );
        if !self.top_visits.is_empty() {
            out.push_str("\nvisit          weight\n");
            for v in &self.top_visits {
                let _ = writeln!(out, "#{:<3} day {:<5} {:.4}  {}", v.index, v.timestamp_days, v.weight, v.codes.join(" "));
            }
        }
        if !self.top_features.is_empty() {
            out.push_str("\nfeature        weight\n");
            for f in &self.top_features {
                let _ = writeln!(out, "{:<14} {:.4}  {}", f.code, f.weight, f.label);
            }
        }
        if !self.ablations.is_empty() {
            out.push_str("\nremoval        prediction\n");
            for a in &self.ablations {
                let _ = writeln!(out, "{:<14} {:.4}", a.removal, a.prediction);
            }
        }
        out
    }
}

/// One forward pass of `record`, reporting the `top_k` visits by `γ̂` and the
/// `top_k` present codes by `β̂`. Ties keep index order.
pub fn explain_patient(
    model: &MuViTaNet,
    record: &PatientRecord,
    task: &str,
    top_k: usize,
    vocab: &CodeVocabulary,
) -> Result<CaseStudyReport> {
    let k = model.task_index(task)?;
    let trace = model.trace(record, k)?;
    let mut top_visits = Vec::new();
    if let Some(gamma) = &trace.gamma {
        let mut order: Vec<usize> = (0..record.visits.len()).collect();
        order.sort_by(|&a, &b| gamma.data()[b].total_cmp(&gamma.data()[a]).then(a.cmp(&b)));
        top_visits = order
            .into_iter()
            .take(top_k)
            .map(|j| VisitWeight {
                index: j,
                timestamp_days: record.visits[j].timestamp_days,
                weight: gamma.data()[j],
                codes: record.visits[j].codes().iter().map(|&c| code_names(vocab, c).0).collect(),
            })
            .collect();
    }
    let mut top_features = Vec::new();
    if let Some(beta) = &trace.beta {
        let mut codes = record.distinct_codes();
        codes.sort_by(|&a, &b| beta.data()[b].total_cmp(&beta.data()[a]).then(a.cmp(&b)));
        top_features = codes
            .into_iter()
            .take(top_k)
            .map(|c| {
                let (code, label) = code_names(vocab, c);
                FeatureWeight {
                    code_index: c,
                    code,
                    label,
                    weight: beta.data()[c],
                }
            })
            .collect();
    }
    Ok(CaseStudyReport {
        patient_id: record.id.clone(),
        task: task.to_string(),
        prediction: trace.prediction,
        top_visits,
        top_features,
        ablations: Vec::new(),
    })
}

/// A set of items to delete from a record before re-predicting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Removal {
    /// Visit positions, 0-based.
    Visits(Vec<usize>),
    /// Code identifiers; each is removed from every visit.
    Codes(Vec<String>),
}

impl FromStr for Removal {
    type Err = Error;

    /// Parses `visits=3,9` or `codes=DX001,RX004`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, items) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("removal `{s}` is not of the form visits=... or codes=...")))?;
        let items: Vec<&str> = items.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
        match kind.trim() {
            "visits" => items
                .iter()
                .map(|x| {
                    x.parse::<usize>()
                        .map_err(|_| Error::Config(format!("visit index `{x}` is not a non-negative integer")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Removal::Visits),
            "codes" => Ok(Removal::Codes(items.into_iter().map(String::from).collect())),
            other => Err(Error::Config(format!("unknown removal kind `{other}`; expected visits or codes"))),
        }
    }
}

impl fmt::Display for Removal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Removal::Visits(v) => {
                let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "visits={}", items.join(","))
            }
            Removal::Codes(c) => write!(f, "codes={}", c.join(",")),
        }
    }
}

/// `record` with `removal` applied. Visits emptied by code removal are
/// dropped; other timestamps are unchanged.
pub fn apply_removal(record: &PatientRecord, removal: &Removal, vocab: &CodeVocabulary) -> Result<PatientRecord> {
    let mut out = record.clone();
    match removal {
        Removal::Visits(idx) => {
            if let Some(&bad) = idx.iter().find(|&&j| j >= record.visits.len()) {
                return Err(Error::Lookup(format!(
                    "patient `{}` has {} visits, no visit {bad}",
                    record.id,
                    record.visits.len()
                )));
            }
            out.visits = record
                .visits
                .iter()
                .enumerate()
                .filter(|(j, _)| !idx.contains(j))
                .map(|(_, v)| v.clone())
                .collect();
        }
        Removal::Codes(ids) => {
            for id in ids {
                let c = vocab.resolve(id)?;
                out.visits = out.visits.iter().filter_map(|v| v.without(c)).collect();
            }
        }
    }
    if out.visits.is_empty() {
        return Err(Error::DegenerateRecord(format!(
            "removing {removal} leaves patient `{}` without visits",
            record.id
        )));
    }
    Ok(out)
}

/// Re-predicts `task` once per removal set.
pub fn ablate_and_repredict(
    model: &MuViTaNet,
    record: &PatientRecord,
    task: &str,
    removals: &[Removal],
    vocab: &CodeVocabulary,
) -> Result<Vec<AblationResult>> {
    let k = model.task_index(task)?;
    removals
        .iter()
        .map(|r| {
            let modified = apply_removal(record, r, vocab)?;
            Ok(AblationResult {
                removal: r.to_string(),
                prediction: model.predict(&modified, k)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_vocabulary, Demographics, Visit};
    use crate::encoders::EncoderConfig;
    use crate::model::{ModelConfig, Variant};

    fn model(variant: Variant) -> MuViTaNet {
        MuViTaNet::new(variant, ModelConfig::new(EncoderConfig::new(2, 8)), vec!["af".into()], 5).unwrap()
    }

    fn record() -> PatientRecord {
        PatientRecord::new(
            "p1",
            Demographics::new(1, 2).unwrap(),
            vec![
                Visit::new(0, [0, 3]).unwrap(),
                Visit::new(10, [3]).unwrap(),
                Visit::new(30, [1, 5, 7]).unwrap(),
            ],
        )
    }

    #[test]
    fn explain_reports_subsets_of_distributions() {
        let vocab = synthetic_vocabulary(8).unwrap();
        let m = model(Variant::Full);
        let before = m.clone();
        let r = explain_patient(&m, &record(), "af", 10, &vocab).unwrap();
        assert_eq!(r.top_visits.len(), 3);
        assert_eq!(r.top_features.len(), 5);
        assert!(r.top_visits.iter().map(|v| v.weight).sum::<f64>() <= 1.0 + 1e-12);
        assert!(r.top_features.iter().map(|v| v.weight).sum::<f64>() <= 1.0 + 1e-12);
        assert!(r.top_visits.windows(2).all(|w| w[0].weight >= w[1].weight));
        assert_eq!(m, before);
        let back: CaseStudyReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(matches!(explain_patient(&m, &record(), "hf", 3, &vocab), Err(Error::Config(_))));
    }

    #[test]
    fn single_visit_has_full_weight() {
        let vocab = synthetic_vocabulary(8).unwrap();
        let rec = PatientRecord::new("p", Demographics::new(0, 0).unwrap(), vec![Visit::new(4, [2]).unwrap()]);
        let r = explain_patient(&model(Variant::Full), &rec, "af", 5, &vocab).unwrap();
        assert_eq!(r.top_visits[0].weight, 1.0);
    }

    #[test]
    fn removals() {
        let vocab = synthetic_vocabulary(8).unwrap();
        let m = model(Variant::Full);
        let rec = record();
        let base = m.predict(&rec, 0).unwrap();
        let absent = vocab.code(6).unwrap().id.clone();
        let three = vocab.code(3).unwrap().id.clone();
        let out = ablate_and_repredict(
            &m,
            &rec,
            "af",
            &[Removal::Visits(vec![]), Removal::Codes(vec![absent]), Removal::Codes(vec![three.clone()])],
            &vocab,
        )
        .unwrap();
        assert_eq!(out[0].prediction, base);
        assert_eq!(out[1].prediction, base);
        let stripped = apply_removal(&rec, &Removal::Codes(vec![three]), &vocab).unwrap();
        assert_eq!(stripped.visits.len(), 2);
        assert_eq!(stripped.visits[1].timestamp_days, 30);
        assert!(matches!(
            apply_removal(&rec, &Removal::Visits(vec![0, 1, 2]), &vocab),
            Err(Error::DegenerateRecord(_))
        ));
        assert!(matches!(apply_removal(&rec, &Removal::Visits(vec![3]), &vocab), Err(Error::Lookup(_))));
    }

    #[test]
    fn removal_syntax() {
        assert_eq!("visits=3,9".parse::<Removal>().unwrap(), Removal::Visits(vec![3, 9]));
        assert_eq!("codes=DX001".parse::<Removal>().unwrap().to_string(), "codes=DX001");
        assert!("rows=1".parse::<Removal>().is_err());
        assert!("visits=a".parse::<Removal>().is_err());
    }

    #[test]
    fn ranking_rules() {
        let vocab = synthetic_vocabulary(8).unwrap();
        let m = model(Variant::Full);
        let rec = record();
        let other = PatientRecord::new("p2", Demographics::new(0, 1).unwrap(), vec![Visit::new(0, [0, 2]).unwrap()]);
        let ds = LabeledDataset::new("af", vec![rec.clone(), other.clone()], vec![1, 0]).unwrap();
        let t = rank_features(&m, &ds, "af", true, None, &vocab).unwrap();
        assert_eq!(t.patients_used, 1);
        // Code 2 appears only in the negative record.
        assert!(t.position_of(2).is_none());
        assert_eq!(t.entries.len(), rec.distinct_codes().len());
        assert!(t.entries.windows(2).all(|w| w[0].weight >= w[1].weight));
        let beta = m.trace(&rec, 0).unwrap().beta.unwrap();
        let e = &t.entries[t.position_of(3).unwrap()];
        assert!((e.weight - beta.data()[3] * 5.0).abs() < 1e-15);

        let swapped = LabeledDataset::new("af", vec![other, rec], vec![0, 1]).unwrap();
        assert_eq!(rank_features(&m, &swapped, "af", true, None, &vocab).unwrap(), t);

        let none = LabeledDataset::new("af", vec![record()], vec![0]).unwrap();
        let empty = rank_features(&m, &none, "af", true, Some(10), &vocab).unwrap();
        assert!(empty.entries.is_empty() && empty.warning.is_some());

        assert!(t.to_csv().starts_with("task,rank,code,label,weight\naf,1,"));
        assert!(matches!(
            rank_features(&model(Variant::NoFeatureView), &ds, "af", true, None, &vocab),
            Err(Error::Config(_))
        ));
    }
}
