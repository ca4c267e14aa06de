//! Directory format: `vocab.json`, `meta.json`, one `task_<name>.jsonl` per
//! labeled task and `unlabeled.jsonl`, with one patient per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::{ComplicationInfo, Demographics, LabeledDataset, PatientRecord, TaskBundle, Visit};
use super::vocab::CodeVocabulary;
use crate::error::{Error, Result};

pub const VOCAB_FILE: &str = "vocab.json";
pub const META_FILE: &str = "meta.json";
pub const UNLABELED_FILE: &str = "unlabeled.jsonl";

pub fn task_file_name(task: &str) -> String {
    format!("task_{task}.jsonl")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoLine {
    age_group: u8,
    region: u8,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisitLine {
    t: i64,
    codes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    demo: DemoLine,
    visits: Vec<VisitLine>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<u8>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    tasks: Vec<ComplicationInfo>,
}

impl RecordLine {
    fn from_record(r: &PatientRecord, label: Option<u8>) -> Self {
        RecordLine {
            id: r.id.clone(),
            demo: DemoLine {
                age_group: r.demographics.age_group,
                region: r.demographics.region,
            },
            visits: r
                .visits
                .iter()
                .map(|v| VisitLine {
                    t: v.timestamp_days,
                    codes: v.codes().to_vec(),
                })
                .collect(),
            label,
        }
    }

    fn into_record(self) -> Result<(PatientRecord, Option<u8>)> {
        let demographics = Demographics::new(self.demo.age_group, self.demo.region)?;
        let visits = self
            .visits
            .into_iter()
            .enumerate()
            .map(|(j, v)| {
                Visit::new(v.t, v.codes).map_err(|_| {
                    Error::Validation(format!("patient `{}` visit {j} has no codes", self.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((PatientRecord::new(self.id, demographics, visits), self.label))
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parses a line-delimited record file. Record-level problems (no visits,
/// out-of-range codes) are reported with the file and line they came from.
fn read_records(
    path: &Path,
    vocab_size: usize,
    min_visits: usize,
    labeled: bool,
) -> Result<(Vec<PatientRecord>, Vec<u8>)> {
    let text = read_to_string(path)?;
    let mut records = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine =
            serde_json::from_str(line).map_err(|e| parse_error(path, lineno, e.to_string()))?;
        let (record, label) = parsed.into_record().map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}:{lineno}: {m}", path.display())),
            other => other,
        })?;
        match (labeled, label) {
            (true, Some(y)) if y <= 1 => labels.push(y),
            (true, Some(y)) => return Err(parse_error(path, lineno, format!("label {y} is not 0 or 1"))),
            (true, None) => return Err(parse_error(path, lineno, "missing \"label\"")),
            (false, Some(_)) => return Err(parse_error(path, lineno, "unlabeled record carries a label")),
            (false, None) => {}
        }
        record.validate(vocab_size).map_err(|e| match e {
            Error::Vocabulary(m) => Error::Vocabulary(format!("{}:{lineno}: {m}", path.display())),
            Error::Validation(m) => Error::Validation(format!("{}:{lineno}: {m}", path.display())),
            other => other,
        })?;
        if record.num_visits() < min_visits {
            return Err(Error::Validation(format!(
                "{}:{lineno}: patient `{}` has {} visits, fewer than the minimum {min_visits}",
                path.display(),
                record.id,
                record.num_visits()
            )));
        }
        records.push(record);
    }
    Ok((records, labels))
}

fn write_records(path: &Path, records: &[PatientRecord], labels: Option<&[u8]>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, r) in records.iter().enumerate() {
        let line = RecordLine::from_record(r, labels.map(|l| l[i]));
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn save_bundle(bundle: &TaskBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab_path = dir.join(VOCAB_FILE);
    fs::write(&vocab_path, serde_json::to_string_pretty(&bundle.vocabulary)? + "\n")
        .map_err(|e| Error::io(&vocab_path, e))?;

    let meta = Meta {
        tasks: bundle
            .tasks
            .iter()
            .map(|t| {
                bundle
                    .complications
                    .iter()
                    .find(|c| c.name == t.task)
                    .cloned()
                    .unwrap_or_else(|| ComplicationInfo {
                        name: t.task.clone(),
                        description: String::new(),
                        icd_groups: Vec::new(),
                    })
            })
            .collect(),
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&meta_path, e))?;

    for t in &bundle.tasks {
        write_records(&dir.join(task_file_name(&t.task)), &t.records, Some(&t.labels))?;
    }
    write_records(&dir.join(UNLABELED_FILE), &bundle.unlabeled, None)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<TaskBundle> {
    load_bundle_with_min_visits(dir, 1)
}

/// Like [`load_bundle`] but rejects records with fewer than `min_visits` visits.
pub fn load_bundle_with_min_visits(dir: impl AsRef<Path>, min_visits: usize) -> Result<TaskBundle> {
    let dir = dir.as_ref();
    let min_visits = min_visits.max(1);
    let vocab_path = dir.join(VOCAB_FILE);
    let vocabulary: CodeVocabulary = serde_json::from_str(&read_to_string(&vocab_path)?)
        .map_err(|e| parse_error(&vocab_path, e.line(), e.to_string()))?;
    let meta_path = dir.join(META_FILE);
    let meta: Meta = serde_json::from_str(&read_to_string(&meta_path)?)
        .map_err(|e| parse_error(&meta_path, e.line(), e.to_string()))?;
    if meta.tasks.is_empty() {
        return Err(Error::Validation(format!("{} lists no tasks", meta_path.display())));
    }

    let mut tasks = Vec::with_capacity(meta.tasks.len());
    for info in &meta.tasks {
        let path = dir.join(task_file_name(&info.name));
        let (records, labels) = read_records(&path, vocabulary.len(), min_visits, true)?;
        tasks.push(LabeledDataset::new(info.name.clone(), records, labels)?);
    }
    let unlabeled_path = dir.join(UNLABELED_FILE);
    let unlabeled = if unlabeled_path.exists() {
        read_records(&unlabeled_path, vocabulary.len(), min_visits, false)?.0
    } else {
        Vec::new()
    };
    let bundle = TaskBundle {
        vocabulary,
        tasks,
        unlabeled,
        complications: meta.tasks,
    };
    bundle.validate(false)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::{ClinicalCode, CodeCategory};

    fn small_bundle() -> TaskBundle {
        let vocabulary = CodeVocabulary::new(
            ["A", "B", "C"]
                .iter()
                .map(|id| ClinicalCode {
                    id: id.to_string(),
                    category: CodeCategory::Procedure,
                    label: String::new(),
                })
                .collect(),
        )
        .unwrap();
        let demo = Demographics::new(0, 1).unwrap();
        let r1 = PatientRecord::new("p1", demo, vec![Visit::new(0, [0, 2]).unwrap(), Visit::new(4, [1]).unwrap()]);
        let r2 = PatientRecord::new("p2", demo, vec![Visit::new(0, [1]).unwrap()]);
        TaskBundle {
            vocabulary,
            tasks: vec![LabeledDataset::new("hf", vec![r1, r2.clone()], vec![1, 0]).unwrap()],
            unlabeled: vec![r2],
            complications: vec![ComplicationInfo {
                name: "hf".into(),
                description: "Heart failure".into(),
                icd_groups: vec!["I50".into()],
            }],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = small_bundle();
        save_bundle(&b, dir.path()).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn zero_visit_record_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&small_bundle(), dir.path()).unwrap();
        let path = dir.path().join("task_hf.jsonl");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{\"id\":\"p3\",\"demo\":{\"age_group\":0,\"region\":0},\"visits\":[],\"label\":0}\n");
        fs::write(&path, text).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains(":3:")), "{err}");
    }

    #[test]
    fn truncated_file_names_line() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&small_bundle(), dir.path()).unwrap();
        let path = dir.path().join("task_hf.jsonl");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 12]).unwrap();
        match load_bundle(dir.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_code_is_vocabulary_error() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&small_bundle(), dir.path()).unwrap();
        let path = dir.path().join("unlabeled.jsonl");
        fs::write(&path, "{\"id\":\"u\",\"demo\":{\"age_group\":0,\"region\":0},\"visits\":[{\"t\":0,\"codes\":[7]}]}\n").unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn minimum_visits_is_configurable() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&small_bundle(), dir.path()).unwrap();
        assert!(load_bundle_with_min_visits(dir.path(), 2).is_err());
        assert!(load_bundle_with_min_visits(dir.path(), 1).is_ok());
    }
}
