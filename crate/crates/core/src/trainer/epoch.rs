use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::sampling::TaskSampler;
use crate::data::PatientRecord;
use crate::error::{Error, Result};
use crate::heads::{bce_loss_node, contrastive_loss_node, project_unlabeled, task_attention};
use crate::model::Network;
use crate::numerics::{Graph, NodeId};

/// Training examples of one labeled head of a network.
#[derive(Clone, Debug)]
pub struct TaskExamples<'a> {
    pub head: usize,
    pub records: Vec<&'a PatientRecord>,
    pub labels: Vec<f64>,
}

/// Everything a network consumes in one epoch.
#[derive(Clone, Debug, Default)]
pub struct EpochData<'a> {
    pub tasks: Vec<TaskExamples<'a>>,
    /// Ignored by networks without a contrastive head.
    pub unlabeled: Vec<&'a PatientRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskLoss {
    pub task: String,
    pub batches: usize,
    pub examples: usize,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub steps: usize,
    /// One entry per labeled task, then the unlabeled task when trained.
    pub tasks: Vec<TaskLoss>,
}

fn labeled_loss(g: &mut Graph<'_>, net: &Network, ex: &TaskExamples<'_>, batch: &[usize]) -> Result<NodeId> {
    let mut preds = Vec::with_capacity(batch.len());
    for &i in batch {
        preds.push(net.forward(g, ex.records[i], ex.head)?.prediction);
    }
    let labels: Vec<f64> = batch.iter().map(|&i| ex.labels[i]).collect();
    bce_loss_node(g, &preds, &labels)
}

fn contrastive_batch_loss(g: &mut Graph<'_>, net: &Network, records: &[&PatientRecord], batch: &[usize]) -> Result<NodeId> {
    let head = net
        .contrastive
        .as_ref()
        .ok_or_else(|| Error::TaskKind("network has no unlabeled head".into()))?;
    let mut pairs = Vec::with_capacity(batch.len());
    for &i in batch {
        let shared = net.encoder.encode(g, records[i])?;
        let t = task_attention(g, &shared, head)?;
        let missing = || Error::Config("contrastive head needs both views".into());
        pairs.push(project_unlabeled(
            g,
            t.feature_summary.ok_or_else(missing)?,
            t.visit_summary.ok_or_else(missing)?,
            t.patient_vector.ok_or_else(missing)?,
            head,
        )?);
    }
    contrastive_loss_node(g, &pairs, net.temperature)
}

/// One pass of alternating training: sample a non-exhausted task with the
/// fixed rates, take its next batch without replacement, and apply one Adam
/// update, until every queue is empty.
pub fn train_epoch<R: Rng + ?Sized>(net: &mut Network, data: &EpochData<'_>, config: &TrainerConfig, rng: &mut R) -> Result<EpochSummary> {
    for t in &data.tasks {
        if t.head >= net.heads.len() {
            return Err(Error::Config(format!("no labeled head {}", t.head)));
        }
        if t.records.len() != t.labels.len() {
            return Err(Error::dim("train_epoch", &[t.records.len()], &[t.labels.len()]));
        }
    }
    let use_unlabeled = net.contrastive.is_some() && !data.unlabeled.is_empty();
    let mut queues: Vec<Vec<usize>> = data.tasks.iter().map(|t| (0..t.records.len()).collect()).collect();
    let mut sizes: Vec<usize> = data.tasks.iter().map(|t| t.records.len()).collect();
    let mut batches: Vec<usize> = vec![config.labeled_batch; data.tasks.len()];
    if use_unlabeled {
        queues.push((0..data.unlabeled.len()).collect());
        sizes.push(data.unlabeled.len());
        batches.push(config.unlabeled_batch);
    }
    for q in &mut queues {
        q.shuffle(rng);
    }
    let mut names: Vec<String> = data.tasks.iter().map(|t| net.heads[t.head].name.clone()).collect();
    if use_unlabeled {
        names.push("unlabeled".into());
    }
    let mut loss_sum = vec![0.0; queues.len()];
    let mut batch_count = vec![0usize; queues.len()];
    let mut example_count = vec![0usize; queues.len()];
    if sizes.iter().all(|&s| s == 0) {
        return Ok(EpochSummary { steps: 0, tasks: Vec::new() });
    }
    let mut sampler = TaskSampler::new(&sizes, &batches)?;
    let mut cursor = vec![0usize; queues.len()];
    let mut step = 0;
    while let Some(k) = sampler.next(rng) {
        let end = (cursor[k] + batches[k]).min(queues[k].len());
        let batch = &queues[k][cursor[k]..end];
        let divergence = |e: Error| match e {
            Error::Evaluation(_) => Error::Divergence {
                task: names[k].clone(),
                step,
            },
            other => other,
        };
        let grads = {
            let mut g = Graph::new(&net.store);
            let loss = if k < data.tasks.len() {
                labeled_loss(&mut g, net, &data.tasks[k], batch)
            } else {
                contrastive_batch_loss(&mut g, net, &data.unlabeled, batch)
            }
            .map_err(divergence)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    task: names[k].clone(),
                    step,
                });
            }
            loss_sum[k] += value;
            g.backward(loss)?
        };
        net.store.accumulate(&grads)?;
        net.store.adam_step(config.learning_rate)?;
        batch_count[k] += 1;
        example_count[k] += end - cursor[k];
        sampler.consume(k, end - cursor[k]);
        cursor[k] = end;
        step += 1;
    }
    let tasks = names
        .into_iter()
        .enumerate()
        .map(|(k, task)| TaskLoss {
            task,
            batches: batch_count[k],
            examples: example_count[k],
            mean_loss: if batch_count[k] > 0 {
                loss_sum[k] / batch_count[k] as f64
            } else {
                f64::NAN
            },
        })
        .collect();
    Ok(EpochSummary { steps: step, tasks })
}
