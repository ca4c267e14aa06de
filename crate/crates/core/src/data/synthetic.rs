//! Synthetic claims cohorts with planted risk codes.
//!
//! Every patient draws a visit sequence from a shared background code
//! distribution. Each planted code is then injected into a few random visits
//! with probability `exposureRate`. Task `k`'s label depends only on how many
//! visits carry one of its planted codes.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{
    cardiac_complications, ComplicationInfo, Demographics, LabeledDataset, PatientRecord, TaskBundle, Visit,
    AGE_GROUPS, REGIONS,
};
use super::vocab::{ClinicalCode, CodeCategory, CodeVocabulary};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelRule {
    /// `P(y=1) = σ(b_k + riskWeight · count)`, with `b_k` calibrated so the
    /// cohort prevalence matches `positiveRate`.
    #[default]
    Logistic,
    /// `y = 1` exactly when at least one planted code is present.
    Threshold,
}

fn default_positive_rate() -> f64 {
    0.25
}
fn default_ratio() -> f64 {
    3.0
}
fn default_visit_range() -> [usize; 2] {
    [3, 10]
}
fn default_codes_range() -> [usize; 2] {
    [2, 6]
}
fn default_exposure() -> f64 {
    0.3
}
fn default_risk_weight() -> f64 {
    2.0
}
fn default_max_gap() -> i64 {
    120
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SyntheticSpec {
    pub vocabulary_size: usize,
    pub num_patients_per_task: usize,
    /// Cohort prevalence of each complication under the logistic rule.
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
    #[serde(default = "default_ratio")]
    pub negative_to_positive_ratio: f64,
    /// Inclusive range of visits per patient.
    #[serde(default = "default_visit_range")]
    pub visit_count_range: [usize; 2],
    /// Inclusive range of background codes per visit.
    #[serde(default = "default_codes_range")]
    pub codes_per_visit_range: [usize; 2],
    /// One list of code indices per task.
    pub planted_risk_codes: Vec<Vec<usize>>,
    /// Task names; defaults to the leading cardiac complication names.
    #[serde(default)]
    pub task_names: Option<Vec<String>>,
    /// Size of the unlabeled pool; defaults to `numPatientsPerTask`.
    #[serde(default)]
    pub num_unlabeled: Option<usize>,
    #[serde(default = "default_exposure")]
    pub exposure_rate: f64,
    #[serde(default = "default_risk_weight")]
    pub risk_weight: f64,
    #[serde(default)]
    pub label_rule: LabelRule,
    /// Largest gap in days between consecutive visits.
    #[serde(default = "default_max_gap")]
    pub max_visit_gap_days: i64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(vocabulary_size: usize, num_patients_per_task: usize, planted_risk_codes: Vec<Vec<usize>>, seed: u64) -> Self {
        Self {
            vocabulary_size,
            num_patients_per_task,
            positive_rate: default_positive_rate(),
            negative_to_positive_ratio: default_ratio(),
            visit_count_range: default_visit_range(),
            codes_per_visit_range: default_codes_range(),
            planted_risk_codes,
            task_names: None,
            num_unlabeled: None,
            exposure_rate: default_exposure(),
            risk_weight: default_risk_weight(),
            label_rule: LabelRule::Logistic,
            max_visit_gap_days: default_max_gap(),
            seed,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.planted_risk_codes.len()
    }

    pub fn unlabeled_size(&self) -> usize {
        self.num_unlabeled.unwrap_or(self.num_patients_per_task)
    }

    /// Positive and negative record counts of every labeled dataset.
    pub fn class_counts(&self) -> (usize, usize) {
        let n = self.num_patients_per_task;
        let pos = (n as f64 / (1.0 + self.negative_to_positive_ratio)).round() as usize;
        (pos, n - pos.min(n))
    }

    pub fn resolved_task_names(&self) -> Result<Vec<String>> {
        match &self.task_names {
            Some(names) => {
                if names.len() != self.num_tasks() {
                    return Err(Error::Spec(format!(
                        "{} task names for {} planted code lists",
                        names.len(),
                        self.num_tasks()
                    )));
                }
                Ok(names.clone())
            }
            None => {
                let known = cardiac_complications();
                Ok((0..self.num_tasks())
                    .map(|k| known.get(k).map_or_else(|| format!("task{k}"), |c| c.name.clone()))
                    .collect())
            }
        }
    }

    pub fn planted_union(&self) -> BTreeSet<usize> {
        self.planted_risk_codes.iter().flatten().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let spec = |m: String| Err(Error::Spec(m));
        if self.vocabulary_size == 0 {
            return spec("vocabularySize must be positive".into());
        }
        if self.planted_risk_codes.is_empty() {
            return spec("plantedRiskCodes must list at least one task".into());
        }
        for (k, codes) in self.planted_risk_codes.iter().enumerate() {
            if codes.is_empty() {
                return spec(format!("task {k} has no planted risk codes"));
            }
            if let Some(c) = codes.iter().find(|&&c| c >= self.vocabulary_size) {
                return spec(format!("planted code {c} outside vocabulary of {}", self.vocabulary_size));
            }
        }
        let names = self.resolved_task_names()?;
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return spec("task names must be unique".into());
        }
        if let Some(bad) = names.iter().find(|n| n.is_empty() || !n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')) {
            return spec(format!("task name `{bad}` must be non-empty ASCII letters, digits, `_` or `-`"));
        }
        let [vmin, vmax] = self.visit_count_range;
        if vmin == 0 || vmin > vmax {
            return spec(format!("visitCountRange [{vmin}, {vmax}] is invalid"));
        }
        let [cmin, cmax] = self.codes_per_visit_range;
        if cmin == 0 || cmin > cmax {
            return spec(format!("codesPerVisitRange [{cmin}, {cmax}] is invalid"));
        }
        let background = self.vocabulary_size - self.planted_union().len();
        if cmax > background {
            return spec(format!(
                "codesPerVisit up to {cmax} exceeds the {background} background codes of a vocabulary of {}",
                self.vocabulary_size
            ));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return spec(format!("positiveRate {} must lie in (0, 1)", self.positive_rate));
        }
        if !(self.negative_to_positive_ratio > 0.0 && self.negative_to_positive_ratio.is_finite()) {
            return spec("negativeToPositiveRatio must be positive".into());
        }
        if !(self.exposure_rate > 0.0 && self.exposure_rate <= 1.0) {
            return spec(format!("exposureRate {} must lie in (0, 1]", self.exposure_rate));
        }
        if !self.risk_weight.is_finite() || self.risk_weight <= 0.0 {
            return spec("riskWeight must be positive".into());
        }
        if self.max_visit_gap_days < 1 {
            return spec("maxVisitGapDays must be at least 1".into());
        }
        let (pos, neg) = self.class_counts();
        if pos == 0 || neg == 0 {
            return spec(format!(
                "numPatientsPerTask {} leaves an empty class at ratio {}",
                self.num_patients_per_task, self.negative_to_positive_ratio
            ));
        }
        Ok(())
    }
}

/// A synthetic cohort before per-task dataset selection.
#[derive(Clone, Debug)]
pub struct SyntheticCohort {
    pub records: Vec<PatientRecord>,
    /// `labels[k][i]` is patient `i`'s outcome for task `k`.
    pub labels: Vec<Vec<u8>>,
    /// Calibrated logistic intercepts per task (zero under the threshold rule).
    pub intercepts: Vec<f64>,
}

pub fn synthetic_vocabulary(size: usize) -> Result<CodeVocabulary> {
    let n_dx = (size as f64 * 0.5).ceil() as usize;
    let n_pr = (size as f64 * 0.3).round() as usize;
    let codes = (0..size)
        .map(|i| {
            let (category, prefix, label) = if i < n_dx {
                (CodeCategory::Diagnosis, "DX", "diagnosis")
            } else if i < n_dx + n_pr {
                (CodeCategory::Procedure, "PR", "procedure")
            } else {
                (CodeCategory::Medication, "RX", "medication")
            };
            ClinicalCode {
                id: format!("{prefix}{i:04}"),
                category,
                label: format!("synthetic {label} {i}"),
            }
        })
        .collect();
    CodeVocabulary::new(codes)
}

struct PatientSampler {
    background: Vec<usize>,
    weights: WeightedIndex<f64>,
    planted: Vec<usize>,
}

impl PatientSampler {
    fn new(spec: &SyntheticSpec) -> Result<Self> {
        let planted = spec.planted_union();
        let background: Vec<usize> = (0..spec.vocabulary_size).filter(|c| !planted.contains(c)).collect();
        // Zipf-like popularity so that a few background codes are common.
        let weights = WeightedIndex::new((0..background.len()).map(|r| 1.0 / ((r + 1) as f64).powf(0.7)))
            .map_err(|e| Error::Spec(e.to_string()))?;
        Ok(Self {
            background,
            weights,
            planted: planted.into_iter().collect(),
        })
    }

    fn sample<R: Rng>(&self, spec: &SyntheticSpec, rng: &mut R, id: String) -> PatientRecord {
        let t_len = rng.gen_range(spec.visit_count_range[0]..=spec.visit_count_range[1]);
        let mut visit_codes: Vec<BTreeSet<usize>> = Vec::with_capacity(t_len);
        let mut times = Vec::with_capacity(t_len);
        let mut t = 0i64;
        for j in 0..t_len {
            if j > 0 {
                t += rng.gen_range(1..=spec.max_visit_gap_days);
            }
            times.push(t);
            let m = rng.gen_range(spec.codes_per_visit_range[0]..=spec.codes_per_visit_range[1]);
            let mut set = BTreeSet::new();
            while set.len() < m {
                set.insert(self.background[self.weights.sample(rng)]);
            }
            visit_codes.push(set);
        }
        for &code in &self.planted {
            if rng.gen_bool(spec.exposure_rate) {
                let times_exposed = rng.gen_range(1..=t_len.min(3));
                for j in rand::seq::index::sample(rng, t_len, times_exposed) {
                    visit_codes[j].insert(code);
                }
            }
        }
        let demographics = Demographics {
            age_group: rng.gen_range(0..AGE_GROUPS as u8),
            region: rng.gen_range(0..REGIONS as u8),
        };
        let visits = times
            .into_iter()
            .zip(visit_codes)
            .map(|(t, codes)| Visit::new(t, codes).expect("visits always carry background codes"))
            .collect();
        PatientRecord::new(id, demographics, visits)
    }
}

/// Number of (visit, planted code of task `k`) incidences in `record`.
pub fn planted_count(record: &PatientRecord, planted: &[usize]) -> usize {
    planted.iter().map(|&c| record.code_count(c)).sum()
}

/// Intercept `b` with `mean σ(b + w·count) = rate` over the given counts.
fn calibrate_intercept(counts: &[usize], weight: f64, rate: f64) -> f64 {
    let mean = |b: f64| counts.iter().map(|&c| sigmoid(b + weight * c as f64)).sum::<f64>() / counts.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates `size` patients and their labels for every task.
pub fn generate_cohort(spec: &SyntheticSpec, size: usize) -> Result<SyntheticCohort> {
    spec.validate()?;
    if size == 0 {
        return Err(Error::Spec("cohort size must be positive".into()));
    }
    let sampler = PatientSampler::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let records: Vec<PatientRecord> = (0..size)
        .map(|i| sampler.sample(spec, &mut rng, format!("P{i:06}")))
        .collect();

    let mut label_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x005e_ed1a_be15_u64);
    let mut labels = Vec::with_capacity(spec.num_tasks());
    let mut intercepts = Vec::with_capacity(spec.num_tasks());
    for planted in &spec.planted_risk_codes {
        let counts: Vec<usize> = records.iter().map(|r| planted_count(r, planted)).collect();
        match spec.label_rule {
            LabelRule::Logistic => {
                let b = calibrate_intercept(&counts, spec.risk_weight, spec.positive_rate);
                labels.push(
                    counts
                        .iter()
                        .map(|&c| u8::from(label_rng.gen::<f64>() < sigmoid(b + spec.risk_weight * c as f64)))
                        .collect(),
                );
                intercepts.push(b);
            }
            LabelRule::Threshold => {
                labels.push(counts.iter().map(|&c| u8::from(c > 0)).collect());
                intercepts.push(0.0);
            }
        }
    }
    Ok(SyntheticCohort {
        records,
        labels,
        intercepts,
    })
}

struct Selection {
    tasks: Vec<(Vec<usize>, Vec<u8>)>,
    unlabeled: Vec<usize>,
}

fn select(spec: &SyntheticSpec, cohort: &SyntheticCohort) -> Option<Selection> {
    let (n_pos, n_neg) = spec.class_counts();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let size = cohort.records.len();
    let mut used = vec![false; size];
    let mut tasks = Vec::with_capacity(spec.num_tasks());
    for labels in &cohort.labels {
        let mut pos: Vec<usize> = (0..size).filter(|&i| labels[i] == 1).collect();
        let mut neg: Vec<usize> = (0..size).filter(|&i| labels[i] == 0).collect();
        if pos.len() < n_pos || neg.len() < n_neg {
            return None;
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut chosen: Vec<(usize, u8)> = pos[..n_pos]
            .iter()
            .map(|&i| (i, 1))
            .chain(neg[..n_neg].iter().map(|&i| (i, 0)))
            .collect();
        chosen.shuffle(&mut rng);
        for &(i, _) in &chosen {
            used[i] = true;
        }
        tasks.push(chosen.into_iter().unzip());
    }
    let mut pool: Vec<usize> = (0..size)
        .filter(|&i| !used[i] && cohort.labels.iter().all(|l| l[i] == 0))
        .collect();
    let want = spec.unlabeled_size();
    if pool.len() < want {
        return None;
    }
    pool.shuffle(&mut rng);
    pool.truncate(want);
    pool.sort_unstable();
    Some(Selection { tasks, unlabeled: pool })
}

/// Builds a full bundle: per-task datasets at the configured negative ratio
/// plus an unlabeled pool of patients negative for every task and absent from
/// all datasets.
pub fn generate_synthetic_bundle(spec: &SyntheticSpec) -> Result<TaskBundle> {
    spec.validate()?;
    let names = spec.resolved_task_names()?;
    let (n_pos, n_neg) = spec.class_counts();
    let n_tasks = spec.num_tasks() as i32;
    let prevalence = match spec.label_rule {
        LabelRule::Logistic => spec.positive_rate,
        LabelRule::Threshold => spec.exposure_rate * 0.5,
    };
    let all_negative = (1.0 - prevalence).powi(n_tasks).max(0.05);
    let estimate = (n_pos as f64 / prevalence).max((spec.unlabeled_size() + n_neg * n_tasks as usize) as f64 / all_negative);
    let mut size = (estimate * 1.3).ceil() as usize + 16;

    for _ in 0..8 {
        let cohort = generate_cohort(spec, size)?;
        if let Some(sel) = select(spec, &cohort) {
            let known = cardiac_complications();
            let mut tasks = Vec::with_capacity(names.len());
            let mut complications = Vec::with_capacity(names.len());
            for (name, (idx, labels)) in names.iter().zip(sel.tasks) {
                let records = idx.iter().map(|&i| cohort.records[i].clone()).collect();
                tasks.push(LabeledDataset::new(name.clone(), records, labels)?);
                complications.push(known.iter().find(|c| &c.name == name).cloned().unwrap_or_else(|| {
                    ComplicationInfo {
                        name: name.clone(),
                        description: format!("synthetic task {name}"),
                        icd_groups: Vec::new(),
                    }
                }));
            }
            let unlabeled = sel.unlabeled.iter().map(|&i| cohort.records[i].clone()).collect();
            return Ok(TaskBundle {
                vocabulary: synthetic_vocabulary(spec.vocabulary_size)?,
                tasks,
                unlabeled,
                complications,
            });
        }
        size *= 2;
    }
    Err(Error::Spec(format!(
        "could not draw {n_pos} positives and {n_neg} negatives per task from a cohort of {size}; \
         raise exposureRate or positiveRate"
    )))
}
