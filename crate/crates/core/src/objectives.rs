//! Task heads and losses: gated multi-manifold link scores with a margin
//! ranking loss, and a softmax classifier with cross-entropy.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{softmax, LayerState};
use crate::manifold::{self, ManifoldPoint};
use crate::model::{Forward, HeadSlots, Model};
use crate::tensor::{dot, Tensor};

pub const DEFAULT_MARGIN: f64 = 0.1;

/// Anchor `u`, neighbor `positive` and non-neighbor `negative`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Per-component affine maps `f_M(s) = w_M . log_o(s) + b_M`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingHead {
    pub maps: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    /// `D x C`, applied to the concatenated origin logs.
    pub w: Tensor,
    pub b: Vec<f64>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Normalized softplus gates `g_M` of one node.
pub fn gate_weights(embeddings: &[ManifoldPoint], head: &GatingHead) -> Result<Vec<f64>> {
    if embeddings.len() != head.maps.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} gate maps",
            embeddings.len(),
            head.maps.len()
        )));
    }
    let pos = embeddings
        .iter()
        .zip(&head.maps)
        .map(|(s, (w, b))| {
            let log = manifold::log_origin(s)?;
            if log.len() != w.len() {
                return Err(Error::Shape(
                    "gate weight length differs from component".into(),
                ));
            }
            Ok(softplus(dot(&log, w) + b))
        })
        .collect::<Result<Vec<_>>>()?;
    let z: f64 = pos.iter().sum();
    Ok(pos.into_iter().map(|p| p / z).collect())
}

/// `r(u, v) = ln sum_M g_M exp(-d_M(u, v)^2)`, evaluated as
/// `ln(sum g e^{-d^2}) - ln(sum g)` so that `r(u, u) = 0` exactly.
pub fn pair_score(u: usize, v: usize, state: &LayerState, gates: &[f64]) -> Result<f64> {
    if gates.len() != state.components.len() {
        return Err(Error::Shape(format!(
            "{} gates for {} components",
            gates.len(),
            state.components.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (points, &g) in state.components.iter().zip(gates) {
        let d = manifold::geodesic_distance(&points[u], &points[v])?;
        num += g * (-d * d).exp();
        den += g;
    }
    Ok(num.ln() - den.ln())
}

/// Mean hinge `max(0, m - r(u, v1) + r(u, v2))`; `gates[u]` are the anchor's gates.
pub fn link_margin_loss(
    triplets: &[Triplet],
    margin: f64,
    state: &LayerState,
    gates: &[Vec<f64>],
) -> Result<f64> {
    if margin.is_nan() || margin < 0.0 {
        return Err(Error::Config(format!("margin {margin} must be >= 0")));
    }
    if triplets.is_empty() {
        log::warn!("no training triplets; link loss is 0");
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in triplets {
        let g = &gates[t.anchor];
        let pos = pair_score(t.anchor, t.positive, state, g)?;
        let neg = pair_score(t.anchor, t.negative, state, g)?;
        total += (margin - pos + neg).max(0.0);
    }
    Ok(total / triplets.len() as f64)
}

/// For each edge `(u, v)` with `u < v`, `per_edge` negatives drawn uniformly
/// from the non-neighbors of `u`.
pub fn sample_triplets(graph: &Graph, per_edge: usize, seed: u64) -> Vec<Triplet> {
    let n = graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(graph.num_edges() * per_edge);
    let mut cache: Option<(usize, Vec<usize>)> = None;
    for &(u, v) in graph.edges() {
        let free = n - 1 - graph.degree(u);
        if free == 0 {
            log::warn!("node {u} is adjacent to every other node; skipping edge ({u}, {v})");
            continue;
        }
        for _ in 0..per_edge {
            let negative = if free * 4 >= n {
                loop {
                    let w = rng.random_range(0..n);
                    if w != u && !graph.has_edge(u, w) {
                        break w;
                    }
                }
            } else {
                if cache.as_ref().is_none_or(|(a, _)| *a != u) {
                    let list = (0..n)
                        .filter(|&w| w != u && !graph.has_edge(u, w))
                        .collect();
                    cache = Some((u, list));
                }
                let (_, list) = cache.as_ref().expect("filled above");
                *list.choose(&mut rng).expect("non-empty")
            };
            out.push(Triplet {
                anchor: u,
                positive: v,
                negative,
            });
        }
    }
    out
}

/// Softmax of `concat_M log_o(s_M) W + b`.
pub fn classification_probs(s_v: &[ManifoldPoint], head: &ClassifierHead) -> Result<Vec<f64>> {
    let mut feats = Vec::with_capacity(head.w.rows());
    for s in s_v {
        feats.extend(manifold::log_origin(s)?);
    }
    if feats.len() != head.w.rows() || head.b.len() != head.w.cols() {
        return Err(Error::Shape(format!(
            "{} features for a {}x{} head with {} biases",
            feats.len(),
            head.w.rows(),
            head.w.cols(),
            head.b.len()
        )));
    }
    let logits = Tensor::row_vector(&feats).matmul(&head.w);
    let logits: Vec<f64> = logits
        .data()
        .iter()
        .zip(&head.b)
        .map(|(a, b)| a + b)
        .collect();
    Ok(softmax(&logits))
}

/// Mean of `-ln p[v, y_v]` over `mask`, with probabilities floored at 1e-12.
pub fn cross_entropy_loss(probs: &Tensor, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Evaluation("cross-entropy over an empty mask".into()));
    }
    if labels.len() != probs.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            probs.rows()
        )));
    }
    let mut tape = Tape::new();
    let p = tape.leaf(probs.clone());
    let loss = tape.cross_entropy(p, labels, mask);
    Ok(tape.value(loss).item())
}

/// Class probabilities of every node, `n x C`.
pub fn traced_class_probs(tape: &mut Tape, model: &Model, fwd: &Forward) -> Result<Var> {
    let HeadSlots::Classifier { w, b } = model.layout().head else {
        return Err(Error::Config("model has no classifier head".into()));
    };
    let logs = model
        .config
        .geometry
        .components()
        .iter()
        .zip(&fwd.states)
        .map(|(c, &s)| tape.log_origin(s, c.curvature.value()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let feats = tape.concat_cols(&logs);
    let logits = tape.matmul(feats, fwd.params[w]);
    let logits = tape.add_row_bias(logits, fwd.params[b]);
    Ok(tape.softmax_rows(logits))
}

/// Multiply-accumulates of the classifier head on `n` nodes.
pub fn classifier_macs(model: &Model, n: usize) -> u64 {
    match model.config.head {
        crate::model::HeadConfig::Classifier { classes } => {
            (n * model.config.geometry.total_dim() * classes) as u64
        }
        crate::model::HeadConfig::Link => 0,
    }
}

/// Unnormalized softplus gates, one `n x 1` column per component.
fn traced_gates(tape: &mut Tape, model: &Model, fwd: &Forward) -> Result<Vec<Var>> {
    let HeadSlots::Link { gates } = model.layout().head else {
        return Err(Error::Config("model has no link head".into()));
    };
    model
        .config
        .geometry
        .components()
        .iter()
        .zip(&fwd.states)
        .zip(gates)
        .map(|((c, &s), (w, b))| {
            let log = tape.log_origin(s, c.curvature.value())?;
            let f = tape.matmul(log, fwd.params[w]);
            let f = tape.add_row_bias(f, fwd.params[b]);
            Ok(tape.softplus(f))
        })
        .collect()
}

/// Normalized gates of every node, `n x K`.
pub fn traced_gate_weights(tape: &mut Tape, model: &Model, fwd: &Forward) -> Result<Var> {
    let cols = traced_gates(tape, model, fwd)?;
    let pos = tape.concat_cols(&cols);
    Ok(tape.row_normalize(pos))
}

/// Scores `r(u, v)` of `pairs` as a `P x 1` column; gates come from `u`.
pub fn traced_pair_scores(
    tape: &mut Tape,
    model: &Model,
    fwd: &Forward,
    pairs: &[(usize, usize)],
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Evaluation("no pairs to score".into()));
    }
    let gates = traced_gates(tape, model, fwd)?;
    let us: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let vs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let mut num = None;
    let mut den = None;
    for ((c, &s), &g) in model
        .config
        .geometry
        .components()
        .iter()
        .zip(&fwd.states)
        .zip(&gates)
    {
        let su = tape.gather_rows(s, &us);
        let sv = tape.gather_rows(s, &vs);
        let d2 = tape.dist_sq(su, sv, c.curvature.value())?;
        let sim = tape.neg(d2);
        let sim = tape.exp(sim);
        let gu = tape.gather_rows(g, &us);
        let term = tape.mul(gu, sim);
        num = Some(num.map_or(term, |acc| tape.add(acc, term)));
        den = Some(den.map_or(gu, |acc| tape.add(acc, gu)));
    }
    let num = tape.ln(num.expect("at least one component"));
    let den = tape.ln(den.expect("at least one component"));
    Ok(tape.sub(num, den))
}

/// Multiply-accumulates of gates and pair distances for `n` nodes and `pairs` pairs.
pub fn link_macs(model: &Model, n: usize, pairs: usize) -> u64 {
    let spec = &model.config.geometry;
    let amb: usize = spec
        .components()
        .iter()
        .map(|c| c.curvature.ambient_dim(c.dim))
        .sum();
    (n * spec.total_dim() + pairs * amb) as u64
}

/// Traced mean hinge loss over `triplets`.
pub fn traced_link_loss(
    tape: &mut Tape,
    model: &Model,
    fwd: &Forward,
    triplets: &[Triplet],
    margin: f64,
) -> Result<Var> {
    if triplets.is_empty() {
        log::warn!("no training triplets; link loss is 0");
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let mut pairs: Vec<(usize, usize)> = triplets.iter().map(|t| (t.anchor, t.positive)).collect();
    pairs.extend(triplets.iter().map(|t| (t.anchor, t.negative)));
    let scores = traced_pair_scores(tape, model, fwd, &pairs)?;
    let k = triplets.len();
    let pos = tape.gather_rows(scores, &(0..k).collect::<Vec<_>>());
    let neg = tape.gather_rows(scores, &(k..2 * k).collect::<Vec<_>>());
    let gap = tape.sub(neg, pos);
    let gap = tape.add_scalar(gap, margin);
    let hinge = tape.relu(gap);
    Ok(tape.mean(hinge))
}

/// Traced cross-entropy over `rows`, returning `(loss, probs)`.
pub fn traced_classification_loss(
    tape: &mut Tape,
    model: &Model,
    fwd: &Forward,
    labels: &[usize],
    rows: &[usize],
) -> Result<(Var, Var)> {
    if rows.is_empty() {
        return Err(Error::Evaluation("cross-entropy over an empty mask".into()));
    }
    let probs = traced_class_probs(tape, model, fwd)?;
    Ok((tape.cross_entropy(probs, labels, rows), probs))
}
