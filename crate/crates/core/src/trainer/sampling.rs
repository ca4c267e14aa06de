use rand::Rng;

use crate::error::{Error, Result};

/// `λ_k = (|D_k| / n_k) / Σ_k' (|D_k'| / n_k')` over every dataset, labeled
/// and unlabeled alike.
pub fn compute_sampling_rates(dataset_sizes: &[usize], batch_sizes: &[usize]) -> Result<Vec<f64>> {
    if dataset_sizes.len() != batch_sizes.len() {
        return Err(Error::dim("compute_sampling_rates", &[dataset_sizes.len()], &[batch_sizes.len()]));
    }
    if dataset_sizes.is_empty() {
        return Err(Error::Domain("no datasets to sample from".into()));
    }
    if batch_sizes.contains(&0) {
        return Err(Error::Domain("batch size of zero".into()));
    }
    let steps: Vec<f64> = dataset_sizes
        .iter()
        .zip(batch_sizes)
        .map(|(&d, &n)| d as f64 / n as f64)
        .collect();
    let total: f64 = steps.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("all datasets are empty".into()));
    }
    Ok(steps.into_iter().map(|s| s / total).collect())
}

/// Draws a task index from `rates` restricted to `active` tasks, renormalized.
/// Returns `None` when no active task has positive rate.
pub fn sample_task<R: Rng + ?Sized>(rates: &[f64], active: &[bool], rng: &mut R) -> Option<usize> {
    let total: f64 = rates.iter().zip(active).filter(|(_, &a)| a).map(|(r, _)| r).sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (k, (&r, &a)) in rates.iter().zip(active).enumerate() {
        if !a || r <= 0.0 {
            continue;
        }
        last = Some(k);
        if u < r {
            return Some(k);
        }
        u -= r;
    }
    last
}

/// Per-epoch queue state: fixed rates, renormalized over tasks that still
/// have examples.
#[derive(Clone, Debug)]
pub struct TaskSampler {
    rates: Vec<f64>,
    remaining: Vec<usize>,
}

impl TaskSampler {
    pub fn new(dataset_sizes: &[usize], batch_sizes: &[usize]) -> Result<Self> {
        Ok(Self {
            rates: compute_sampling_rates(dataset_sizes, batch_sizes)?,
            remaining: dataset_sizes.to_vec(),
        })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    /// Renormalized probabilities over non-exhausted tasks.
    pub fn current_probabilities(&self) -> Vec<f64> {
        let active: f64 = self
            .rates
            .iter()
            .zip(&self.remaining)
            .filter(|(_, &n)| n > 0)
            .map(|(r, _)| r)
            .sum();
        self.rates
            .iter()
            .zip(&self.remaining)
            .map(|(&r, &n)| if n > 0 && active > 0.0 { r / active } else { 0.0 })
            .collect()
    }

    pub fn next<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let active: Vec<bool> = self.remaining.iter().map(|&n| n > 0).collect();
        sample_task(&self.rates, &active, rng)
    }

    pub fn consume(&mut self, task: usize, count: usize) {
        self.remaining[task] = self.remaining[task].saturating_sub(count);
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining.iter().all(|&n| n == 0)
    }
}
