use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Tensors with more coordinates than this are checked on a random subset
    /// of this size (never fewer than 32).
    pub max_coords_per_tensor: usize,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding are compared absolutely.
    pub magnitude_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords_per_tensor: 64,
            magnitude_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }
}

/// Compares reverse-mode gradients of `loss` against central differences for
/// every parameter in `params`.
///
/// `loss` rebuilds the scalar loss on a fresh graph; it is evaluated once for
/// the analytic pass and twice per checked coordinate.
pub fn finite_difference_check<F>(params: &ParamStore, loss: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let node = loss(&mut g)?;
        let v = g.value(node).item();
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    let analytic = {
        let mut g = Graph::new(params);
        let node = loss(&mut g)?;
        if !g.value(node).item().is_finite() {
            return Err(Error::Evaluation("non-finite loss".into()));
        }
        g.backward(node)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = Vec::new();
    for id in params.ids() {
        let n = params.value(id).len();
        let coords: Vec<usize> = if n > opts.max_coords_per_tensor {
            let k = opts.max_coords_per_tensor.max(32).min(n);
            let mut c = sample(&mut rng, n, k).into_vec();
            c.sort_unstable();
            c
        } else {
            (0..n).collect()
        };
        let grad = analytic.get(id);
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let original = params.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = original + opts.step;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[i] = original - opts.step;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.map_or(0.0, |g| g[i]);
            let denom = a.abs().max(numeric.abs()).max(opts.magnitude_floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
        report.push(ParamCheck {
            name: params.name(id).to_string(),
            coords_checked: coords.len(),
            max_relative_error: worst,
        });
    }
    let passed = report.iter().all(|p| p.max_relative_error < opts.tolerance);
    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
        passed,
    })
}
