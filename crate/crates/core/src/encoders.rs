//! The shared multi-view patient encoder.
//!
//! The feature view convolves each code's presence sequence with its own
//! filter bank and max-pools over time, giving `H^f` (`|C| × 4d`). The visit
//! view embeds and attends over each visit's codes, fuses demographics, adds a
//! sinusoidal encoding of the time to the last visit, and runs a
//! bidirectional GRU, giving `H^v` (`T × 2d`) and the patient vector `h*`
//! (`2d`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{visit_matrix, PatientRecord, Visit, DEMO_DIM};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Graph, GruCell, Linear, Mlp2, NodeId, ParamId, ParamStore, Tensor};

fn default_kernel_width() -> usize {
    3
}
fn default_demo_dim() -> usize {
    DEMO_DIM
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub vocabulary_size: usize,
    #[serde(default = "default_kernel_width")]
    pub kernel_width: usize,
    #[serde(default = "default_demo_dim")]
    pub demo_dim: usize,
}

impl EncoderConfig {
    pub fn new(hidden_dim: usize, vocabulary_size: usize) -> Self {
        Self {
            hidden_dim,
            vocabulary_size,
            kernel_width: default_kernel_width(),
            demo_dim: default_demo_dim(),
        }
    }

    pub fn feature_view_filters(&self) -> usize {
        4 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.hidden_dim;
        if d < 2 || d % 2 != 0 {
            return Err(Error::Config(format!("hiddenDim must be even and at least 2, got {d}")));
        }
        if self.kernel_width == 0 || self.kernel_width % 2 == 0 {
            return Err(Error::Config(format!("kernelWidth must be odd, got {}", self.kernel_width)));
        }
        if self.vocabulary_size == 0 {
            return Err(Error::Config("vocabularySize must be positive".into()));
        }
        if self.demo_dim != DEMO_DIM {
            return Err(Error::Config(format!("demoDim must be {DEMO_DIM}, got {}", self.demo_dim)));
        }
        Ok(())
    }
}

/// `|C|` independent filter banks stored as one `[|C|, 4d, K]` block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureViewEncoder {
    pub kernels: ParamId,
    pub bias: ParamId,
}

impl FeatureViewEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let (c, f, k) = (config.vocabulary_size, config.feature_view_filters(), config.kernel_width);
        Ok(Self {
            kernels: store.register_xavier("enc.feature.kernels", &[c, f, k], k, f * k, rng)?,
            bias: store.register_zeros("enc.feature.bias", &[c, f])?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.kernels, self.bias]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitViewEncoder {
    /// `W₁` as `[d, |C|]`; a one-hot code selects a column.
    pub embed_weight: ParamId,
    pub embed_bias: ParamId,
    pub code_scorer: Mlp2,
    pub demo_fusion: Linear,
    pub gru_forward: GruCell,
    pub gru_backward: GruCell,
    pub patient: Mlp2,
}

impl VisitViewEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let (d, c) = (config.hidden_dim, config.vocabulary_size);
        Ok(Self {
            embed_weight: store.register_xavier("enc.embed.weight", &[d, c], c, d, rng)?,
            embed_bias: store.register_zeros("enc.embed.bias", &[d])?,
            code_scorer: Mlp2::new(store, "enc.code_attn", d, d, 1, Activation::Tanh, None, rng)?,
            demo_fusion: Linear::new(store, "enc.demo", d + config.demo_dim, d, false, rng)?,
            gru_forward: GruCell::new(store, "enc.gru_fwd", d, d, rng)?,
            gru_backward: GruCell::new(store, "enc.gru_bwd", d, d, rng)?,
            patient: Mlp2::new(store, "enc.patient", 2 * d, 2 * d, 2 * d, Activation::Relu, None, rng)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.embed_weight, self.embed_bias];
        p.extend(self.code_scorer.params());
        p.extend(self.demo_fusion.params());
        p.extend(self.gru_forward.params());
        p.extend(self.gru_backward.params());
        p.extend(self.patient.params());
        p
    }
}

/// Row `i` is the max-pooled response of code `i`'s filters to column `i`
/// of the `[T, |C|]` visit matrix.
pub fn encode_feature_view(g: &mut Graph<'_>, visit_matrix: NodeId, enc: &FeatureViewEncoder) -> Result<NodeId> {
    let kernels = g.param(enc.kernels);
    let bias = g.param(enc.bias);
    let responses = g.conv_per_channel(visit_matrix, kernels, bias)?;
    g.max_pool_last(responses)
}

/// `ReLU(W₁ x + b₁)` for each code of the visit, as `[|c_j|, d]`.
pub fn embed_codes(g: &mut Graph<'_>, visit: &Visit, enc: &VisitViewEncoder) -> Result<NodeId> {
    let w = g.param(enc.embed_weight);
    let b = g.param(enc.embed_bias);
    let columns = g.gather_columns(w, visit.codes())?;
    let pre = g.add_rows(columns, b)?;
    g.relu(pre)
}

/// Returns `(α̂, Σ α̂_i e_i)` for code embeddings `[m, d]`.
pub fn visit_code_attention(g: &mut Graph<'_>, embeddings: NodeId, enc: &VisitViewEncoder) -> Result<(NodeId, NodeId)> {
    let scores = enc.code_scorer.score_rows(g, embeddings)?;
    let alpha = g.softmax(scores)?;
    let visit = g.weighted_row_sum(alpha, embeddings)?;
    Ok((alpha, visit))
}

/// `W₂ · [v; d_demo]` without bias or activation.
pub fn fuse_demographics(g: &mut Graph<'_>, visit: NodeId, demographics: NodeId, enc: &VisitViewEncoder) -> Result<NodeId> {
    let joined = g.concat(&[visit, demographics])?;
    enc.demo_fusion.forward(g, joined)
}

/// Sinusoidal encoding of `Δ = t_T − t_j`: entry `2t` is
/// `sin(Δ / 10000^(2t/d))` and entry `2t+1` the matching cosine.
pub fn temporal_encoding(tj: f64, tt: f64, d: usize) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Domain(format!("temporal encoding needs an even positive width, got {d}")));
    }
    if !(tj <= tt) {
        return Err(Error::Ordering { tj, tt });
    }
    let delta = tt - tj;
    let mut out = Vec::with_capacity(d);
    for t in 0..d / 2 {
        let angle = delta / 10000f64.powf((2 * t) as f64 / d as f64);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Tensor::new(vec![d], out)
}

#[derive(Clone, Debug)]
pub struct VisitViewNodes {
    /// `[T, 2d]`, forward state then backward state per visit.
    pub visit_view: NodeId,
    pub patient_vector: NodeId,
    pub code_attention: Vec<NodeId>,
}

pub fn encode_visit_view(g: &mut Graph<'_>, record: &PatientRecord, enc: &VisitViewEncoder, config: &EncoderConfig) -> Result<VisitViewNodes> {
    let d = config.hidden_dim;
    let last = record
        .visits
        .last()
        .ok_or_else(|| Error::Validation(format!("patient `{}` has no visits", record.id)))?
        .timestamp_days as f64;
    let demo = g.constant(record.demographics.one_hot());
    let mut inputs = Vec::with_capacity(record.visits.len());
    let mut alphas = Vec::with_capacity(record.visits.len());
    for visit in &record.visits {
        let emb = embed_codes(g, visit, enc)?;
        let (alpha, v) = visit_code_attention(g, emb, enc)?;
        let fused = fuse_demographics(g, v, demo, enc)?;
        let delta = g.constant(temporal_encoding(visit.timestamp_days as f64, last, d)?);
        inputs.push(g.add(fused, delta)?);
        alphas.push(alpha);
    }

    let t_len = inputs.len();
    let zero = g.constant(Tensor::zeros(&[d]));
    let mut forward = Vec::with_capacity(t_len);
    let mut h = zero;
    for &x in &inputs {
        h = enc.gru_forward.forward(g, x, h)?;
        forward.push(h);
    }
    let mut backward = vec![zero; t_len];
    let mut h = zero;
    for j in (0..t_len).rev() {
        h = enc.gru_backward.forward(g, inputs[j], h)?;
        backward[j] = h;
    }
    let rows = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| g.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    let visit_view = g.stack_rows(&rows)?;
    let patient_vector = enc.patient.forward(g, rows[t_len - 1])?;
    Ok(VisitViewNodes {
        visit_view,
        patient_vector,
        code_attention: alphas,
    })
}

/// Which views an encoder carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiViewEncoder {
    pub config: EncoderConfig,
    pub feature: Option<FeatureViewEncoder>,
    pub visit: Option<VisitViewEncoder>,
}

impl MultiViewEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: EncoderConfig, feature_view: bool, visit_view: bool, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if !feature_view && !visit_view {
            return Err(Error::Config("an encoder needs at least one view".into()));
        }
        let feature = feature_view.then(|| FeatureViewEncoder::new(store, &config, rng)).transpose()?;
        let visit = visit_view.then(|| VisitViewEncoder::new(store, &config, rng)).transpose()?;
        Ok(Self { config, feature, visit })
    }

    pub fn encode(&self, g: &mut Graph<'_>, record: &PatientRecord) -> Result<SharedNodes> {
        let feature_view = match &self.feature {
            Some(enc) => {
                let m = g.constant(visit_matrix(record, self.config.vocabulary_size)?);
                Some(encode_feature_view(g, m, enc)?)
            }
            None => None,
        };
        let (visit_view, patient_vector, code_attention) = match &self.visit {
            Some(enc) => {
                let v = encode_visit_view(g, record, enc, &self.config)?;
                (Some(v.visit_view), Some(v.patient_vector), v.code_attention)
            }
            None => (None, None, Vec::new()),
        };
        Ok(SharedNodes {
            feature_view,
            visit_view,
            patient_vector,
            code_attention,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.feature.as_ref().map(|f| f.params()).unwrap_or_default();
        p.extend(self.visit.as_ref().map(|v| v.params()).unwrap_or_default());
        p
    }
}

/// Graph handles of one encoding; views an encoder lacks are `None`.
#[derive(Clone, Debug)]
pub struct SharedNodes {
    pub feature_view: Option<NodeId>,
    pub visit_view: Option<NodeId>,
    pub patient_vector: Option<NodeId>,
    pub code_attention: Vec<NodeId>,
}

impl SharedNodes {
    pub fn materialize(&self, g: &Graph<'_>) -> SharedRepresentation {
        SharedRepresentation {
            feature_view: self.feature_view.map(|n| g.value(n).clone()),
            visit_view: self.visit_view.map(|n| g.value(n).clone()),
            patient_vector: self.patient_vector.map(|n| g.value(n).clone()),
            code_attention: self.code_attention.iter().map(|&n| g.value(n).clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedRepresentation {
    pub feature_view: Option<Tensor>,
    pub visit_view: Option<Tensor>,
    pub patient_vector: Option<Tensor>,
    pub code_attention: Vec<Tensor>,
}
