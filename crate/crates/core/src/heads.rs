//! Task-specific attention over the shared representation, labeled decoders,
//! the unlabeled projection heads, and the two training losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::SharedNodes;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Graph, Linear, Mlp2, NodeId, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Decoder {
    /// `8d → d` (ReLU) `→ 1` (sigmoid).
    TwoLayer(Mlp2),
    /// A single affine map followed by a sigmoid.
    Linear(Linear),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum HeadKind {
    Labeled(Decoder),
    Contrastive { project_feature: Mlp2, project_visit: Mlp2 },
}

/// Attention scorers plus a decoder or projection pair for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskHead {
    pub name: String,
    /// Scores rows of `H^f` (`4d → d → 1`).
    pub feature_scorer: Option<Mlp2>,
    /// Scores rows of `H^v` (`2d → d → 1`).
    pub visit_scorer: Option<Mlp2>,
    pub kind: HeadKind,
}

/// Length of `o_k` for the views present.
pub fn representation_dim(hidden_dim: usize, feature_view: bool, visit_view: bool) -> usize {
    let f = if feature_view { 4 * hidden_dim } else { 0 };
    let v = if visit_view { 4 * hidden_dim } else { 0 };
    f + v
}

fn scorers<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    feature_view: bool,
    visit_view: bool,
    rng: &mut R,
) -> Result<(Option<Mlp2>, Option<Mlp2>)> {
    let feature = feature_view
        .then(|| Mlp2::new(store, &format!("{prefix}.feat_attn"), 4 * d, d, 1, Activation::Tanh, None, rng))
        .transpose()?;
    let visit = visit_view
        .then(|| Mlp2::new(store, &format!("{prefix}.visit_attn"), 2 * d, d, 1, Activation::Tanh, None, rng))
        .transpose()?;
    Ok((feature, visit))
}

impl TaskHead {
    #[allow(clippy::too_many_arguments)]
    pub fn labeled<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden_dim: usize,
        feature_view: bool,
        visit_view: bool,
        linear_decoder: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let prefix = format!("task.{name}");
        let (feature_scorer, visit_scorer) = scorers(store, &prefix, hidden_dim, feature_view, visit_view, rng)?;
        let width = representation_dim(hidden_dim, feature_view, visit_view);
        let decoder = if linear_decoder {
            Decoder::Linear(Linear::new(store, &format!("{prefix}.decoder"), width, 1, true, rng)?)
        } else {
            Decoder::TwoLayer(Mlp2::new(
                store,
                &format!("{prefix}.decoder"),
                width,
                hidden_dim,
                1,
                Activation::Relu,
                Some(Activation::Sigmoid),
                rng,
            )?)
        };
        Ok(Self {
            name: name.to_string(),
            feature_scorer,
            visit_scorer,
            kind: HeadKind::Labeled(decoder),
        })
    }

    /// The unlabeled task's head; both views are required.
    pub fn contrastive<R: Rng + ?Sized>(store: &mut ParamStore, hidden_dim: usize, proj_dim: usize, rng: &mut R) -> Result<Self> {
        if proj_dim == 0 {
            return Err(Error::Config("projDim must be positive".into()));
        }
        let d = hidden_dim;
        let (feature_scorer, visit_scorer) = scorers(store, "contrast", d, true, true, rng)?;
        Ok(Self {
            name: "unlabeled".into(),
            feature_scorer,
            visit_scorer,
            kind: HeadKind::Contrastive {
                project_feature: Mlp2::new(store, "contrast.proj_f", 4 * d, 2 * d, proj_dim, Activation::Tanh, None, rng)?,
                project_visit: Mlp2::new(store, "contrast.proj_v", 4 * d, 2 * d, proj_dim, Activation::Tanh, None, rng)?,
            },
        })
    }

    pub fn is_labeled(&self) -> bool {
        matches!(self.kind, HeadKind::Labeled(_))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.feature_scorer.iter().chain(&self.visit_scorer).flat_map(|m| m.params()).collect();
        match &self.kind {
            HeadKind::Labeled(Decoder::TwoLayer(m)) => p.extend(m.params()),
            HeadKind::Labeled(Decoder::Linear(l)) => p.extend(l.params()),
            HeadKind::Contrastive {
                project_feature,
                project_visit,
            } => {
                p.extend(project_feature.params());
                p.extend(project_visit.params());
            }
        }
        p
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TaskNodes {
    pub beta: Option<NodeId>,
    pub gamma: Option<NodeId>,
    pub feature_summary: Option<NodeId>,
    pub visit_summary: Option<NodeId>,
    pub patient_vector: Option<NodeId>,
    /// `o_k = [g^f; g^v; h*]` restricted to the views present.
    pub representation: NodeId,
}

/// `β̂ = softmax(FFNN₄(H^f))`, `γ̂ = softmax(FFNN₅(H^v))`, `g^f = β̂ᵀH^f`,
/// `g^v = γ̂ᵀH^v`, and `o_k`.
pub fn task_attention(g: &mut Graph<'_>, shared: &SharedNodes, head: &TaskHead) -> Result<TaskNodes> {
    let mut parts = Vec::with_capacity(3);
    let (mut beta, mut gf) = (None, None);
    match (shared.feature_view, &head.feature_scorer) {
        (Some(hf), Some(scorer)) => {
            let scores = scorer.score_rows(g, hf)?;
            let b = g.softmax(scores)?;
            let s = g.weighted_row_sum(b, hf)?;
            beta = Some(b);
            gf = Some(s);
            parts.push(s);
        }
        (None, None) => {}
        _ => return Err(Error::Config(format!("task `{}` and encoder disagree on the feature view", head.name))),
    }
    let (mut gamma, mut gv) = (None, None);
    match (shared.visit_view, shared.patient_vector, &head.visit_scorer) {
        (Some(hv), Some(hs), Some(scorer)) => {
            let scores = scorer.score_rows(g, hv)?;
            let c = g.softmax(scores)?;
            let s = g.weighted_row_sum(c, hv)?;
            gamma = Some(c);
            gv = Some(s);
            parts.push(s);
            parts.push(hs);
        }
        (None, None, None) => {}
        _ => return Err(Error::Config(format!("task `{}` and encoder disagree on the visit view", head.name))),
    }
    let representation = g.concat(&parts)?;
    Ok(TaskNodes {
        beta,
        gamma,
        feature_summary: gf,
        visit_summary: gv,
        patient_vector: shared.patient_vector,
        representation,
    })
}

/// Onset probability `ŷ_k` as a one-element node.
pub fn decode_labeled(g: &mut Graph<'_>, representation: NodeId, head: &TaskHead) -> Result<NodeId> {
    match &head.kind {
        HeadKind::Labeled(Decoder::TwoLayer(m)) => m.forward(g, representation),
        HeadKind::Labeled(Decoder::Linear(l)) => {
            let logit = l.forward(g, representation)?;
            g.sigmoid(logit)
        }
        HeadKind::Contrastive { .. } => Err(Error::TaskKind(format!(
            "`{}` is the unlabeled task and has no decoder",
            head.name
        ))),
    }
}

/// `z^f = Norm(Proj_f(g^f))` and `z^v = Norm(Proj_v([g^v; h*]))`.
pub fn project_unlabeled(
    g: &mut Graph<'_>,
    feature_summary: NodeId,
    visit_summary: NodeId,
    patient_vector: NodeId,
    head: &TaskHead,
) -> Result<(NodeId, NodeId)> {
    let HeadKind::Contrastive {
        project_feature,
        project_visit,
    } = &head.kind
    else {
        return Err(Error::TaskKind(format!("`{}` is a labeled task and has no projection", head.name)));
    };
    let pf = project_feature.forward(g, feature_summary)?;
    let zf = g.normalize(pf)?;
    let joined = g.concat(&[visit_summary, patient_vector])?;
    let pv = project_visit.forward(g, joined)?;
    let zv = g.normalize(pv)?;
    Ok((zf, zv))
}

/// Mean BCE over a batch of one-element prediction nodes.
pub fn bce_loss_node(g: &mut Graph<'_>, predictions: &[NodeId], labels: &[f64]) -> Result<NodeId> {
    if predictions.is_empty() {
        return Err(Error::Domain("BCE over an empty batch".into()));
    }
    let p = g.concat(predictions)?;
    g.bce(p, labels)
}

/// Contrastive loss over `(z^f_i, z^v_i)` pairs, summed over all `2B` anchors.
pub fn contrastive_loss_node(g: &mut Graph<'_>, pairs: &[(NodeId, NodeId)], temperature: f64) -> Result<NodeId> {
    if pairs.is_empty() {
        return Err(Error::Domain("contrastive loss over an empty batch".into()));
    }
    let rows: Vec<NodeId> = pairs.iter().flat_map(|&(f, v)| [f, v]).collect();
    let z = g.stack_rows(&rows)?;
    g.contrastive(z, temperature)
}

pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Domain("BCE over an empty batch".into()));
    }
    let mut g = Graph::detached();
    let p = g.constant(Tensor::vector(predictions));
    let l = g.bce(p, labels)?;
    Ok(g.value(l).item())
}

pub fn contrastive_loss(pairs: &[(Tensor, Tensor)], temperature: f64) -> Result<f64> {
    let mut g = Graph::detached();
    let nodes: Vec<(NodeId, NodeId)> = pairs
        .iter()
        .map(|(f, v)| (g.constant(f.clone()), g.constant(v.clone())))
        .collect();
    let l = contrastive_loss_node(&mut g, &nodes, temperature)?;
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::{finite_difference_check, GradCheckOptions};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    fn shared(g: &mut Graph<'_>, d: usize, c: usize, t: usize) -> SharedNodes {
        let hf: Vec<f64> = (0..c * 4 * d).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect();
        let hv: Vec<f64> = (0..t * 2 * d).map(|i| ((i * 5 % 9) as f64 - 4.0) / 5.0).collect();
        let hs: Vec<f64> = (0..2 * d).map(|i| i as f64 / 10.0 - 0.3).collect();
        SharedNodes {
            feature_view: Some(g.constant(Tensor::new(vec![c, 4 * d], hf).unwrap())),
            visit_view: Some(g.constant(Tensor::new(vec![t, 2 * d], hv).unwrap())),
            patient_vector: Some(g.constant(Tensor::vector(&hs))),
            code_attention: Vec::new(),
        }
    }

    #[test]
    fn representation_is_positional_concat() {
        let mut store = ParamStore::new();
        let head = TaskHead::labeled(&mut store, "hf", 2, true, true, false, &mut rng()).unwrap();
        let mut g = Graph::new(&store);
        let s = shared(&mut g, 2, 5, 3);
        let t = task_attention(&mut g, &s, &head).unwrap();
        let o = g.value(t.representation).data().to_vec();
        assert_eq!(o.len(), 16);
        assert_eq!(&o[..8], g.value(t.feature_summary.unwrap()).data());
        assert_eq!(&o[8..12], g.value(t.visit_summary.unwrap()).data());
        assert_eq!(&o[12..], g.value(s.patient_vector.unwrap()).data());
        let beta_sum: f64 = g.value(t.beta.unwrap()).data().iter().sum();
        assert!((beta_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_uniform_beta() {
        let mut store = ParamStore::new();
        let head = TaskHead::labeled(&mut store, "af", 2, true, true, false, &mut rng()).unwrap();
        let mut g = Graph::new(&store);
        let mut s = shared(&mut g, 2, 4, 1);
        let row = [0.3, -0.1, 0.7, 0.2, 0.0, 0.5, -0.4, 0.9];
        let hf: Vec<f64> = row.iter().cycle().take(32).copied().collect();
        s.feature_view = Some(g.constant(Tensor::new(vec![4, 8], hf).unwrap()));
        let t = task_attention(&mut g, &s, &head).unwrap();
        for &b in g.value(t.beta.unwrap()).data() {
            assert!((b - 0.25).abs() < 1e-15);
        }
        for (a, b) in g.value(t.feature_summary.unwrap()).data().iter().zip(row) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(g.value(t.gamma.unwrap()).data(), &[1.0]);
    }

    #[test]
    fn zero_decoder_gives_half() {
        let mut store = ParamStore::new();
        let head = TaskHead::labeled(&mut store, "hf", 2, true, true, false, &mut rng()).unwrap();
        if let HeadKind::Labeled(Decoder::TwoLayer(m)) = &head.kind {
            for id in m.params() {
                store.value_mut(id).data_mut().fill(0.0);
            }
        }
        let mut g = Graph::new(&store);
        let o = g.constant(Tensor::full(&[16], 3.0));
        let y = decode_labeled(&mut g, o, &head).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);
    }

    #[test]
    fn kind_errors() {
        let mut store = ParamStore::new();
        let c = TaskHead::contrastive(&mut store, 2, 4, &mut rng()).unwrap();
        let l = TaskHead::labeled(&mut store, "hf", 2, true, true, false, &mut rng()).unwrap();
        let mut g = Graph::new(&store);
        let o = g.constant(Tensor::full(&[16], 1.0));
        assert!(matches!(decode_labeled(&mut g, o, &c), Err(Error::TaskKind(_))));
        let x = g.constant(Tensor::full(&[8], 1.0));
        let y = g.constant(Tensor::full(&[4], 1.0));
        assert!(matches!(project_unlabeled(&mut g, x, y, y, &l), Err(Error::TaskKind(_))));
    }

    #[test]
    fn projections_are_unit_norm() {
        let mut store = ParamStore::new();
        let c = TaskHead::contrastive(&mut store, 2, 4, &mut rng()).unwrap();
        let mut g = Graph::new(&store);
        let s = shared(&mut g, 2, 5, 3);
        let t = task_attention(&mut g, &s, &c).unwrap();
        let (zf, zv) = project_unlabeled(&mut g, t.feature_summary.unwrap(), t.visit_summary.unwrap(), t.patient_vector.unwrap(), &c).unwrap();
        assert!((g.value(zf).norm() - 1.0).abs() < 1e-9);
        assert!((g.value(zv).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() <= 1e-6);
        assert!(bce_loss(&[0.0], &[1.0]).unwrap().is_finite());
        assert!(matches!(bce_loss(&[], &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn contrastive_single_pair_is_zero() {
        let f = Tensor::vector(&[0.6, 0.8]);
        let v = Tensor::vector(&[1.0, 0.0]);
        assert!(contrastive_loss(&[(f, v)], 1.0).unwrap().abs() < 1e-12);
        let bad = contrastive_loss(&[(Tensor::vector(&[1.0, 0.0]), Tensor::vector(&[1.0, 0.0, 0.0]))], 1.0);
        assert!(matches!(bad, Err(Error::Dimension { .. })));
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let l = TaskHead::labeled(&mut store, "hf", 2, true, true, false, &mut r).unwrap();
        let c = TaskHead::contrastive(&mut store, 2, 4, &mut r).unwrap();
        let report = finite_difference_check(
            &store,
            |g| {
                let s1 = shared(g, 2, 5, 3);
                let t = task_attention(g, &s1, &l)?;
                let y = decode_labeled(g, t.representation, &l)?;
                let bce = bce_loss_node(g, &[y], &[1.0])?;
                let mut pairs = Vec::new();
                for t_len in [2, 3] {
                    let s = shared(g, 2, 5, t_len);
                    let u = task_attention(g, &s, &c)?;
                    pairs.push(project_unlabeled(g, u.feature_summary.unwrap(), u.visit_summary.unwrap(), u.patient_vector.unwrap(), &c)?);
                }
                let cl = contrastive_loss_node(g, &pairs, 1.0)?;
                g.sum(&[bce, cl])
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.worst());
    }
}
