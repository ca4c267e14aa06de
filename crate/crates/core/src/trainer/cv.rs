use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::epoch::{train_epoch, EpochData, TaskExamples};
use super::metrics::{auroc, mean_std, MetricRecord, Split};
use crate::data::{kfold_split, LabeledDataset, PatientRecord, TaskBundle};
use crate::error::{Error, Result};
use crate::model::{derive_seed, build_variant, Network, MuViTaNet, Variant};

const SPLIT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const EPOCH_STREAM: u64 = 3;

/// Per-task train, validation and test datasets of one fold.
#[derive(Clone, Debug)]
pub struct FoldData {
    pub fold: usize,
    pub train: Vec<LabeledDataset>,
    pub validation: Vec<LabeledDataset>,
    pub test: Vec<LabeledDataset>,
    pub unlabeled: Vec<PatientRecord>,
}

/// Splits every task of `bundle` for the folds `config` selects. The split
/// depends only on the seed, so all variants see the same folds.
pub fn prepare_folds(bundle: &TaskBundle, config: &TrainerConfig) -> Result<Vec<FoldData>> {
    config.validate()?;
    bundle.validate(build_variant(config.variant).contrastive)?;
    let splits = bundle
        .tasks
        .iter()
        .enumerate()
        .map(|(k, t)| {
            kfold_split(t, config.folds, config.validation_fraction, derive_seed(config.seed, &[SPLIT_STREAM, k as u64]))
                .map_err(|e| match e {
                    Error::Stratification(m) => Error::Stratification(format!("task `{}`: {m}", t.task)),
                    other => other,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(config
        .fold_indices()
        .into_iter()
        .map(|fold| {
            let mut data = FoldData {
                fold,
                train: Vec::new(),
                validation: Vec::new(),
                test: Vec::new(),
                unlabeled: bundle.unlabeled.clone(),
            };
            for (t, s) in bundle.tasks.iter().zip(&splits) {
                let (tr, va, te) = s[fold].materialize(t);
                data.train.push(tr);
                data.validation.push(va);
                data.test.push(te);
            }
            data
        })
        .collect())
}

/// Parameters of one network at the epoch with its best validation score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BestSnapshot {
    pub epoch: usize,
    pub validation_auroc: f64,
    pub network: Network,
}

/// Resumable training state of one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FoldState {
    pub fold: usize,
    /// Epochs completed.
    pub epoch: usize,
    pub model: MuViTaNet,
    pub best: Vec<BestSnapshot>,
    pub metrics: Vec<MetricRecord>,
}

fn tasks_of(model: &MuViTaNet, network: usize) -> Vec<usize> {
    (0..model.tasks.len())
        .filter(|&k| model.locate(k).map(|(n, _)| n == network).unwrap_or(false))
        .collect()
}

/// Scores every record of `dataset` with task `task` of `network`'s head.
fn network_scores(net: &Network, head: usize, dataset: &LabeledDataset) -> Result<Vec<f64>> {
    dataset.records.iter().map(|r| net.predict(r, head)).collect()
}

fn evaluate_network(model: &MuViTaNet, network: usize, net: &Network, datasets: &[LabeledDataset]) -> Result<Vec<(usize, f64)>> {
    tasks_of(model, network)
        .into_iter()
        .map(|k| {
            let (_, head) = model.locate(k)?;
            let scores = network_scores(net, head, &datasets[k])?;
            let a = auroc(&scores, &datasets[k].labels).map_err(|e| match e {
                Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("task `{}`: {m}", model.tasks[k])),
                other => other,
            })?;
            Ok((k, a))
        })
        .collect()
}

impl FoldState {
    /// A freshly initialized model with its epoch-0 validation scores.
    pub fn new(data: &FoldData, config: &TrainerConfig, vocabulary_size: usize) -> Result<Self> {
        let tasks: Vec<String> = data.train.iter().map(|d| d.task.clone()).collect();
        let model = MuViTaNet::new(
            config.variant,
            config.model_config(vocabulary_size),
            tasks,
            derive_seed(config.seed, &[INIT_STREAM, data.fold as u64]),
        )?;
        let mut state = Self {
            fold: data.fold,
            epoch: 0,
            model,
            best: Vec::new(),
            metrics: Vec::new(),
        };
        for n in 0..state.model.networks.len() {
            let score = state.validate_network(n, data)?;
            state.best.push(BestSnapshot {
                epoch: 0,
                validation_auroc: score,
                network: state.model.networks[n].clone(),
            });
        }
        Ok(state)
    }

    /// Mean validation AU-ROC over the labeled tasks served by network `n`;
    /// also logs one validation line per task.
    fn validate_network(&mut self, n: usize, data: &FoldData) -> Result<f64> {
        let scores = evaluate_network(&self.model, n, &self.model.networks[n], &data.validation)?;
        for &(k, a) in &scores {
            self.metrics.push(MetricRecord {
                fold: self.fold,
                epoch: self.epoch,
                task: self.model.tasks[k].clone(),
                split: Split::Validation,
                loss: None,
                auroc: Some(a),
            });
        }
        Ok(scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64)
    }

    pub fn is_finished(&self, config: &TrainerConfig) -> bool {
        self.epoch >= config.epochs
    }

    /// Trains every network for one epoch, then evaluates and keeps the best
    /// snapshot per network.
    pub fn advance_epoch(&mut self, data: &FoldData, config: &TrainerConfig) -> Result<()> {
        let epoch = self.epoch + 1;
        for n in 0..self.model.networks.len() {
            let owned = tasks_of(&self.model, n);
            let mut epoch_data = EpochData {
                tasks: Vec::with_capacity(owned.len()),
                unlabeled: data.unlabeled.iter().collect(),
            };
            for &k in &owned {
                let (_, head) = self.model.locate(k)?;
                epoch_data.tasks.push(TaskExamples {
                    head,
                    records: data.train[k].records.iter().collect(),
                    labels: data.train[k].labels.iter().map(|&y| y as f64).collect(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                &[EPOCH_STREAM, self.fold as u64, epoch as u64, n as u64],
            ));
            let summary = train_epoch(&mut self.model.networks[n], &epoch_data, config, &mut rng)?;
            for t in summary.tasks {
                self.metrics.push(MetricRecord {
                    fold: self.fold,
                    epoch,
                    task: t.task,
                    split: Split::Train,
                    loss: (t.batches > 0).then_some(t.mean_loss),
                    auroc: None,
                });
            }
        }
        self.epoch = epoch;
        for n in 0..self.model.networks.len() {
            let score = self.validate_network(n, data)?;
            if score > self.best[n].validation_auroc {
                self.best[n] = BestSnapshot {
                    epoch,
                    validation_auroc: score,
                    network: self.model.networks[n].clone(),
                };
            }
        }
        Ok(())
    }

    /// The model assembled from the best snapshot of every network.
    pub fn best_model(&self) -> MuViTaNet {
        MuViTaNet {
            networks: self.best.iter().map(|b| b.network.clone()).collect(),
            ..self.model.clone()
        }
    }

    /// Test AU-ROC per task with the selected snapshots.
    pub fn finish(&mut self, data: &FoldData) -> Result<Vec<EvalRow>> {
        let best = self.best_model();
        self.metrics.retain(|m| m.split != Split::Test);
        let mut rows = Vec::with_capacity(best.tasks.len());
        for k in 0..best.tasks.len() {
            let (n, _) = best.locate(k)?;
            let a = evaluate_task(&best, k, &data.test[k])?;
            self.metrics.push(MetricRecord {
                fold: self.fold,
                epoch: self.best[n].epoch,
                task: best.tasks[k].clone(),
                split: Split::Test,
                loss: None,
                auroc: Some(a),
            });
            rows.push(EvalRow {
                task: best.tasks[k].clone(),
                fold: self.fold,
                best_epoch: self.best[n].epoch,
                auroc: a,
            });
        }
        Ok(rows)
    }
}

/// Predicted onset probabilities of task `task` for every record.
pub fn predict_all(model: &MuViTaNet, task: usize, records: &[PatientRecord]) -> Result<Vec<f64>> {
    records.iter().map(|r| model.predict(r, task)).collect()
}

pub fn evaluate_task(model: &MuViTaNet, task: usize, dataset: &LabeledDataset) -> Result<f64> {
    let scores = predict_all(model, task, &dataset.records)?;
    auroc(&scores, &dataset.labels).map_err(|e| match e {
        Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("task `{}`: {m}", dataset.task)),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalRow {
    pub task: String,
    pub fold: usize,
    pub best_epoch: usize,
    pub auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub mean: f64,
    pub std: f64,
    pub folds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub variant: Variant,
    pub tasks: Vec<String>,
    /// One row per (task, fold).
    pub rows: Vec<EvalRow>,
    pub summary: Vec<TaskSummary>,
    /// Mean of the per-task means.
    pub average: f64,
}

impl EvalResult {
    pub fn from_rows(variant: Variant, tasks: Vec<String>, mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by(|a, b| {
            let ka = tasks.iter().position(|t| *t == a.task);
            let kb = tasks.iter().position(|t| *t == b.task);
            (ka, a.fold).cmp(&(kb, b.fold))
        });
        let summary: Vec<TaskSummary> = tasks
            .iter()
            .map(|t| {
                let v: Vec<f64> = rows.iter().filter(|r| &r.task == t).map(|r| r.auroc).collect();
                let (mean, std) = mean_std(&v);
                TaskSummary {
                    task: t.clone(),
                    mean,
                    std,
                    folds: v.len(),
                }
            })
            .collect();
        let average = mean_std(&summary.iter().map(|s| s.mean).collect::<Vec<_>>()).0;
        Self {
            variant,
            tasks,
            rows,
            summary,
            average,
        }
    }

    pub fn task_mean(&self, task: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.task == task).map(|s| s.mean)
    }
}

/// Outcome of one fully trained fold.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub state: FoldState,
    pub rows: Vec<EvalRow>,
}

/// Trains one fold to completion, starting from `resume` when given.
/// `on_epoch` sees the state after initialization and after every epoch.
pub fn run_fold(
    data: &FoldData,
    config: &TrainerConfig,
    vocabulary_size: usize,
    resume: Option<FoldState>,
    mut on_epoch: impl FnMut(&FoldState) -> Result<()>,
) -> Result<FoldOutcome> {
    let mut state = match resume {
        Some(s) => {
            if s.fold != data.fold || s.model.variant != config.variant {
                return Err(Error::Compatibility(format!(
                    "saved state is fold {} of `{}`, expected fold {} of `{}`",
                    s.fold, s.model.variant, data.fold, config.variant
                )));
            }
            s
        }
        None => {
            let s = FoldState::new(data, config, vocabulary_size)?;
            on_epoch(&s)?;
            s
        }
    };
    while !state.is_finished(config) {
        state.advance_epoch(data, config)?;
        on_epoch(&state)?;
    }
    let rows = state.finish(data)?;
    Ok(FoldOutcome { state, rows })
}

/// Trains the selected folds on up to `jobs` threads; results are ordered by
/// fold and do not depend on `jobs`.
pub fn run_folds(
    bundle: &TaskBundle,
    config: &TrainerConfig,
    jobs: usize,
    resume: impl Fn(usize) -> Result<Option<FoldState>> + Sync,
    on_epoch: impl Fn(&FoldState) -> Result<()> + Sync,
) -> Result<Vec<FoldOutcome>> {
    let folds = prepare_folds(bundle, config)?;
    let vocab = bundle.vocabulary.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FoldOutcome>>>> = Mutex::new(folds.iter().map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(data) = folds.get(i) else { break };
        let out = resume(data.fold).and_then(|r| run_fold(data, config, vocab, r, &on_epoch));
        let failed = out.is_err();
        results.lock().expect("fold results lock")[i] = Some(out);
        if failed {
            // Stop handing out folds; running ones finish.
            next.store(folds.len(), Ordering::SeqCst);
        }
    };
    let jobs = jobs.clamp(1, folds.len().max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    let mut outcomes = Vec::with_capacity(folds.len());
    for r in results.into_inner().expect("fold results lock").into_iter().flatten() {
        outcomes.push(r?);
    }
    Ok(outcomes)
}

/// Cross-validated training and test evaluation, selecting each fold's
/// snapshot by mean validation AU-ROC.
pub fn run_cross_validation(bundle: &TaskBundle, config: &TrainerConfig) -> Result<EvalResult> {
    let outcomes = run_folds(bundle, config, 1, |_| Ok(None), |_| Ok(()))?;
    Ok(EvalResult::from_rows(
        config.variant,
        bundle.task_names(),
        outcomes.into_iter().flat_map(|o| o.rows).collect(),
    ))
}
