//! Model wiring for the full network and its ablation variants.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatientRecord;
use crate::encoders::{EncoderConfig, MultiViewEncoder, SharedNodes, SharedRepresentation};
use crate::error::{Error, Result};
use crate::heads::{decode_labeled, task_attention, TaskHead, TaskNodes};
use crate::numerics::{Graph, NodeId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Variant {
    #[default]
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "-feature-view")]
    NoFeatureView,
    #[serde(rename = "-visit-view")]
    NoVisitView,
    #[serde(rename = "-task-specific")]
    NoTaskSpecific,
    #[serde(rename = "-unlabeled")]
    NoUnlabeled,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoFeatureView,
        Variant::NoVisitView,
        Variant::NoTaskSpecific,
        Variant::NoUnlabeled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFeatureView => "-feature-view",
            Variant::NoVisitView => "-visit-view",
            Variant::NoTaskSpecific => "-task-specific",
            Variant::NoUnlabeled => "-unlabeled",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts the names with or without the leading dash.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().trim_start_matches('-');
        Variant::ALL
            .into_iter()
            .find(|v| v.name().trim_start_matches('-') == key)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}`; expected one of full, -feature-view, -visit-view, -task-specific, -unlabeled"
                ))
            })
    }
}

/// Which components a variant keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wiring {
    pub feature_view: bool,
    pub visit_view: bool,
    pub contrastive: bool,
    /// One independently trained network per labeled task.
    pub per_task_networks: bool,
    pub linear_decoder: bool,
}

/// The contrastive task aligns the two views, so it is only wired when both
/// encoders are present.
pub fn build_variant(variant: Variant) -> Wiring {
    let full = Wiring {
        feature_view: true,
        visit_view: true,
        contrastive: true,
        per_task_networks: false,
        linear_decoder: false,
    };
    match variant {
        Variant::Full => full,
        Variant::NoFeatureView => Wiring {
            feature_view: false,
            contrastive: false,
            ..full
        },
        Variant::NoVisitView => Wiring {
            visit_view: false,
            contrastive: false,
            ..full
        },
        Variant::NoTaskSpecific => Wiring {
            contrastive: false,
            per_task_networks: true,
            linear_decoder: true,
            ..full
        },
        Variant::NoUnlabeled => Wiring {
            contrastive: false,
            ..full
        },
    }
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Projection width of the unlabeled heads; defaults to `2d`.
    #[serde(default)]
    pub proj_dim: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        Self {
            encoder,
            proj_dim: None,
            temperature: default_temperature(),
        }
    }

    pub fn resolved_proj_dim(&self) -> usize {
        self.proj_dim.unwrap_or(2 * self.encoder.hidden_dim)
    }
}

/// One parameter store with an encoder, labeled heads and an optional
/// contrastive head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub store: ParamStore,
    pub encoder: MultiViewEncoder,
    pub heads: Vec<TaskHead>,
    pub contrastive: Option<TaskHead>,
    pub temperature: f64,
}

/// Graph handles of a single-task forward pass.
#[derive(Clone, Debug)]
pub struct TaskForward {
    pub shared: SharedNodes,
    pub task: TaskNodes,
    pub prediction: NodeId,
}

/// Materialized values of one forward pass, kept for interpretation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub shared: SharedRepresentation,
    pub beta: Option<Tensor>,
    pub gamma: Option<Tensor>,
    pub representation: Tensor,
    pub prediction: f64,
}

impl Network {
    pub fn new(config: &ModelConfig, tasks: &[String], wiring: Wiring, seed: u64) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("a network needs at least one labeled task".into()));
        }
        if !(config.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", config.temperature)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = MultiViewEncoder::new(&mut store, config.encoder.clone(), wiring.feature_view, wiring.visit_view, &mut rng)?;
        let d = config.encoder.hidden_dim;
        let heads = tasks
            .iter()
            .map(|t| TaskHead::labeled(&mut store, t, d, wiring.feature_view, wiring.visit_view, wiring.linear_decoder, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let contrastive = if wiring.contrastive {
            if !(wiring.feature_view && wiring.visit_view) {
                return Err(Error::Config("the contrastive task needs both views".into()));
            }
            Some(TaskHead::contrastive(&mut store, d, config.resolved_proj_dim(), &mut rng)?)
        } else {
            None
        };
        Ok(Self {
            store,
            encoder,
            heads,
            contrastive,
            temperature: config.temperature,
        })
    }

    pub fn head_index(&self, task: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == task)
    }

    /// Builds the forward pass of labeled head `head` on `g`.
    pub fn forward(&self, g: &mut Graph<'_>, record: &PatientRecord, head: usize) -> Result<TaskForward> {
        let h = self
            .heads
            .get(head)
            .ok_or_else(|| Error::Config(format!("no labeled head {head}")))?;
        let shared = self.encoder.encode(g, record)?;
        let task = task_attention(g, &shared, h)?;
        let prediction = decode_labeled(g, task.representation, h)?;
        Ok(TaskForward {
            shared,
            task,
            prediction,
        })
    }

    pub fn predict(&self, record: &PatientRecord, head: usize) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let f = self.forward(&mut g, record, head)?;
        Ok(g.value(f.prediction).item())
    }

    pub fn trace(&self, record: &PatientRecord, head: usize) -> Result<TaskTrace> {
        let mut g = Graph::new(&self.store);
        let f = self.forward(&mut g, record, head)?;
        Ok(TaskTrace {
            shared: f.shared.materialize(&g),
            beta: f.task.beta.map(|n| g.value(n).clone()),
            gamma: f.task.gamma.map(|n| g.value(n).clone()),
            representation: g.value(f.task.representation).clone(),
            prediction: g.value(f.prediction).item(),
        })
    }
}

/// A trained model: a single joint network, or one network per task for the
/// single-task variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MuViTaNet {
    pub variant: Variant,
    pub config: ModelConfig,
    pub tasks: Vec<String>,
    pub networks: Vec<Network>,
}

/// Mixes seed components into one generator seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}

impl MuViTaNet {
    pub fn new(variant: Variant, config: ModelConfig, tasks: Vec<String>, seed: u64) -> Result<Self> {
        let wiring = build_variant(variant);
        let networks = if wiring.per_task_networks {
            tasks
                .iter()
                .enumerate()
                .map(|(k, t)| Network::new(&config, std::slice::from_ref(t), wiring, derive_seed(seed, &[k as u64])))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![Network::new(&config, &tasks, wiring, seed)?]
        };
        Ok(Self {
            variant,
            config,
            tasks,
            networks,
        })
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::Config(format!("unknown task `{task}`; model tasks are {:?}", self.tasks)))
    }

    /// The network and head index serving labeled task `task`.
    pub fn locate(&self, task: usize) -> Result<(usize, usize)> {
        if task >= self.tasks.len() {
            return Err(Error::Config(format!("task index {task} out of range")));
        }
        if self.networks.len() == 1 {
            Ok((0, task))
        } else {
            Ok((task, 0))
        }
    }

    pub fn predict(&self, record: &PatientRecord, task: usize) -> Result<f64> {
        let (n, h) = self.locate(task)?;
        self.networks[n].predict(record, h)
    }

    pub fn trace(&self, record: &PatientRecord, task: usize) -> Result<TaskTrace> {
        let (n, h) = self.locate(task)?;
        self.networks[n].trace(record, h)
    }

    pub fn num_parameters(&self) -> usize {
        self.networks.iter().map(|n| n.store.num_scalars()).sum()
    }
}
