//! Network blocks: Riemannian embedding, curvature-aware attention, tangent
//! aggregation, the spiking update and the manifold nonlinearity.
//!
//! The traced functions here operate on whole components (all nodes at
//! once) and are shared by [`crate::model`]. The point-level functions give
//! the same computations for individual nodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{StRule, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, MessageEdges};
use crate::manifold::{
    self, kernels, Curvature, GeometryError, ManifoldPoint, ProductManifoldSpec,
};
use crate::spiking::{rate_code, spike_probability, IfParams, StreamKey};
use crate::tensor::{dot, Tensor};

/// Default softmax temperature `1 / sqrt(d)` for a `d`-dimensional component.
pub fn default_gamma(dim: usize) -> f64 {
    1.0 / (dim as f64).sqrt()
}

/// Places a Euclidean feature vector on the manifold via `exp_o([0, x])`.
pub fn riemannian_embed(x_e: &[f64], kappa: Curvature) -> Result<ManifoldPoint> {
    if x_e.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::Domain("features must be finite".into()).into());
    }
    Ok(manifold::exp_origin(x_e, kappa))
}

/// Query projection for one component, row-vector convention:
/// `q = log_o(s) W_q + b_q`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub b_q: Vec<f64>,
    pub gamma: f64,
}

impl AttentionParams {
    pub fn new(w_q: Tensor, b_q: Vec<f64>, gamma: f64) -> Result<Self> {
        let d = b_q.len();
        if w_q.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "W_q is {:?} but b_q has length {d}",
                w_q.shape()
            )));
        }
        if gamma.is_nan() || gamma <= 0.0 {
            return Err(Error::Config(format!("gamma {gamma} must be > 0")));
        }
        Ok(Self { w_q, b_q, gamma })
    }

    /// Identity query map with zero bias and the default temperature.
    pub fn identity(dim: usize) -> Self {
        let mut w_q = Tensor::zeros(dim, dim);
        for i in 0..dim {
            w_q.set(i, i, 1.0);
        }
        Self {
            w_q,
            b_q: vec![0.0; dim],
            gamma: default_gamma(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.b_q.len()
    }
}

pub fn attention_query(s_i: &ManifoldPoint, params: &AttentionParams) -> Result<Vec<f64>> {
    let log = manifold::log_origin(s_i)?;
    if log.len() != params.dim() {
        return Err(Error::Shape(format!(
            "point of dimension {} for a {}-dimensional query",
            log.len(),
            params.dim()
        )));
    }
    let q = Tensor::row_vector(&log).matmul(&params.w_q);
    Ok(q.data()
        .iter()
        .zip(&params.b_q)
        .map(|(a, b)| a + b)
        .collect())
}

/// Spatial coordinates of a tangent vector, i.e. its dot product partner for
/// `[0, q]`.
fn spatial(v: &[f64], kappa: f64) -> &[f64] {
    if kappa == 0.0 {
        v
    } else {
        &v[1..]
    }
}

/// Softmax over `gamma <log_{s_i}(s_j), [0, q_i]>` for `j` in `neighbors`.
/// An empty neighbor list falls back to a self-loop.
pub fn attention_weights(
    i: usize,
    neighbors: &[usize],
    states: &[ManifoldPoint],
    params: &AttentionParams,
) -> Result<Vec<f64>> {
    let own = [i];
    let neighbors = if neighbors.is_empty() {
        &own[..]
    } else {
        neighbors
    };
    let s_i = &states[i];
    let kappa = s_i.curvature().value();
    let q = attention_query(s_i, params)?;
    let scores = neighbors
        .iter()
        .map(|&j| {
            let v = manifold::log_map(s_i, &states[j])?;
            Ok(params.gamma * dot(spatial(v.coords(), kappa), &q))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax(&scores))
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `exp_{s_i}(sum_j alpha_j log_{s_i}(s_j))`, re-projected.
pub fn tangent_aggregate(
    i: usize,
    neighbors: &[usize],
    alpha: &[f64],
    states: &[ManifoldPoint],
) -> Result<ManifoldPoint> {
    if neighbors.len() != alpha.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} neighbors",
            alpha.len(),
            neighbors.len()
        )));
    }
    let s_i = &states[i];
    let kappa = s_i.curvature().value();
    let mut t = vec![0.0; s_i.coords().len()];
    for (&j, &a) in neighbors.iter().zip(alpha) {
        let mut log = vec![0.0; t.len()];
        kernels::log_map(s_i.coords(), states[j].coords(), kappa, &mut log).map_err(
            |e| match e {
                GeometryError::Singular(msg) => {
                    GeometryError::Singular(format!("{msg}: nodes {i} and {j}"))
                }
                other => other,
            },
        )?;
        for (ti, li) in t.iter_mut().zip(&log) {
            *ti += a * li;
        }
    }
    let mut out = vec![0.0; t.len()];
    kernels::exp_map(s_i.coords(), &t, kappa, &mut out);
    Ok(manifold::project_to_manifold(&out, s_i.curvature())?)
}

/// `exp_o(tanh(log_o(p)))`.
pub fn manifold_nonlinearity(p: &ManifoldPoint) -> Result<ManifoldPoint> {
    let log = manifold::log_origin(p)?;
    let squashed: Vec<f64> = log.iter().map(|v| v.tanh()).collect();
    let q = manifold::exp_origin(&squashed, p.curvature());
    Ok(manifold::project_to_manifold(q.coords(), p.curvature())?)
}

/// Per-component node states plus the Euclidean rate signal that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    /// `components[m][i]` is node `i` on component `m`.
    pub components: Vec<Vec<ManifoldPoint>>,
    /// Firing rates per component, `n x d_m`; empty before the first layer.
    pub rates: Vec<Tensor>,
}

impl LayerState {
    /// Embeds `features` (one column per embedding coordinate, components in
    /// order) onto the product manifold.
    pub fn embed(features: &Tensor, spec: &ProductManifoldSpec) -> Result<Self> {
        if features.cols() != spec.total_dim() {
            return Err(Error::Shape(format!(
                "{} feature columns for a {}-dimensional product",
                features.cols(),
                spec.total_dim()
            )));
        }
        let mut components = Vec::with_capacity(spec.len());
        let mut offset = 0;
        for c in spec.components() {
            let points = (0..features.rows())
                .map(|r| riemannian_embed(&features.row(r)[offset..offset + c.dim], c.curvature))
                .collect::<Result<Vec<_>>>()?;
            components.push(points);
            offset += c.dim;
        }
        Ok(Self {
            components,
            rates: Vec::new(),
        })
    }

    fn component_tensor(&self, m: usize) -> Tensor {
        let rows: Vec<Vec<f64>> = self.components[m]
            .iter()
            .map(|p| p.coords().to_vec())
            .collect();
        Tensor::from_rows(&rows)
    }
}

/// Tape handles for one component's attention parameters.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttentionVars {
    pub w_q: Var,
    pub b_q: Var,
    pub w_t: Option<Var>,
}

/// Attention-weighted tangent aggregation for all nodes of one component.
/// `message_scale` multiplies each message (dropout) when given. With a
/// tangent transform, states are first replaced by `exp_o(W_t log_o(s))`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn aggregate(
    tape: &mut Tape,
    state: Var,
    kappa: f64,
    edges: &MessageEdges,
    vars: AttentionVars,
    gamma: f64,
    message_scale: Option<Tensor>,
) -> Result<Var> {
    let mut origin_log = tape.log_origin(state, kappa)?;
    let mut state = state;
    if let Some(w_t) = vars.w_t {
        origin_log = tape.matmul(origin_log, w_t);
        let lifted = tape.exp_origin(origin_log, kappa);
        state = tape.project(lifted, kappa)?;
    }
    let q = tape.matmul(origin_log, vars.w_q);
    let q = tape.add_row_bias(q, vars.b_q);
    let s_i = tape.gather_rows(state, &edges.target);
    let s_j = tape.gather_rows(state, &edges.source);
    let v = tape.log_map(s_i, s_j, kappa)?;
    let amb = tape.shape(v).1;
    let sp = if kappa == 0.0 {
        v
    } else {
        tape.slice_cols(v, 1, amb)
    };
    let q_i = tape.gather_rows(q, &edges.target);
    let e = tape.rowwise_dot(sp, q_i);
    let e = tape.scale(e, gamma);
    let mut alpha = tape.segment_softmax(e, &edges.target);
    if let Some(scale) = message_scale {
        let s = tape.leaf(scale);
        alpha = tape.mul(alpha, s);
    }
    let msg = tape.mul_col(v, alpha);
    let t = tape.scatter_add_rows(msg, &edges.target, edges.n);
    let moved = tape.exp_map(state, t, kappa)?;
    Ok(tape.project(moved, kappa)?)
}

/// Per-message inverted-dropout multipliers.
pub(crate) fn dropout_scale(messages: usize, rate: f64, key: StreamKey) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(key.seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream((u64::from(key.layer) << 32) | u64::from(key.component));
    let keep = 1.0 - rate;
    let data = (0..messages)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(messages, 1, data)
}

/// How spike trains enter a traced forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum SpikeMode {
    /// Sample Bernoulli trains from `seed` and decode them with the IF neuron.
    Live { seed: u64 },
    /// Use the probabilities themselves as rates (no spiking).
    Dense,
    /// Rates are `p + residual`, with residuals frozen from an earlier live
    /// pass; the forward pass becomes a smooth function of the parameters.
    Replay(FrozenSpikes),
}

/// `rate - p` for every spiking block, in evaluation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenSpikes(pub Vec<Tensor>);

/// Spike and operation counters of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OpCounts {
    /// Output spikes emitted by all IF neurons.
    pub spikes: u64,
    /// Spike-driven accumulates.
    pub acs: u64,
    /// Dense multiply-accumulates.
    pub macs: u64,
}

impl OpCounts {
    pub fn add(&mut self, other: OpCounts) {
        self.spikes += other.spikes;
        self.acs += other.acs;
        self.macs += other.macs;
    }
}

pub(crate) struct SpikeContext<'a> {
    pub mode: &'a SpikeMode,
    pub steps: usize,
    pub neuron: IfParams,
    pub replay_cursor: usize,
    pub frozen: FrozenSpikes,
    pub counts: OpCounts,
}

impl<'a> SpikeContext<'a> {
    pub fn new(mode: &'a SpikeMode, steps: usize, neuron: IfParams) -> Self {
        Self {
            mode,
            steps,
            neuron,
            replay_cursor: 0,
            frozen: FrozenSpikes::default(),
            counts: OpCounts::default(),
        }
    }
}

/// Maps aggregated points to Euclidean rates through the spiking neuron,
/// re-embeds them and applies the nonlinearity.
pub(crate) fn spiking_update(
    tape: &mut Tape,
    point: Var,
    kappa: f64,
    key: StreamKey,
    fanout: &[usize],
    ctx: &mut SpikeContext<'_>,
) -> Result<(Var, Var)> {
    let e = tape.log_origin(point, kappa)?;
    let p = tape.sigmoid(e);
    let (n, d) = tape.shape(p);
    let rate = match ctx.mode {
        SpikeMode::Dense => {
            let consumed: u64 = fanout.iter().map(|&f| (f * d) as u64).sum();
            ctx.counts.macs += consumed;
            p
        }
        SpikeMode::Live { seed } => {
            let probs = tape.value(p).clone();
            let key = StreamKey { seed: *seed, ..key };
            let (rates, counts) = rate_code(probs.data(), ctx.steps, key, ctx.neuron)?;
            for i in 0..n {
                let spikes: u64 = counts[i * d..(i + 1) * d]
                    .iter()
                    .map(|&c| u64::from(c))
                    .sum();
                ctx.counts.spikes += spikes;
                ctx.counts.acs += spikes * fanout[i] as u64;
            }
            let rates = Tensor::from_vec(n, d, rates);
            ctx.frozen.0.push(rates.zip_map(&probs, |r, q| r - q));
            tape.straight_through(p, rates, StRule::BernoulliSample)?
        }
        SpikeMode::Replay(frozen) => {
            let residual = frozen.0.get(ctx.replay_cursor).ok_or_else(|| {
                Error::Config("replay has fewer frozen spike blocks than the model".into())
            })?;
            ctx.replay_cursor += 1;
            if residual.shape() != (n, d) {
                return Err(Error::Shape(
                    "frozen spike block has the wrong shape".into(),
                ));
            }
            let value = tape.value(p).zip_map(residual, |q, r| q + r);
            tape.straight_through(p, value, StRule::BernoulliSample)?
        }
    };
    let lifted = tape.exp_origin(rate, kappa);
    let lifted = tape.project(lifted, kappa)?;
    let back = tape.log_origin(lifted, kappa)?;
    let squashed = tape.tanh(back);
    let out = tape.exp_origin(squashed, kappa);
    Ok((tape.project(out, kappa)?, rate))
}

/// One spiking GNN layer on every component of `state`.
pub fn spiking_layer_forward(
    graph: &Graph,
    state: &LayerState,
    params: &[AttentionParams],
    steps: usize,
    seed: u64,
) -> Result<LayerState> {
    spiking_layer_forward_with(graph, state, params, steps, seed, 0, IfParams::default())
}

/// [`spiking_layer_forward`] with an explicit layer index (selects the
/// random stream) and neuron parameters.
pub fn spiking_layer_forward_with(
    graph: &Graph,
    state: &LayerState,
    params: &[AttentionParams],
    steps: usize,
    seed: u64,
    layer: usize,
    neuron: IfParams,
) -> Result<LayerState> {
    if params.len() != state.components.len() {
        return Err(Error::Shape(format!(
            "{} parameter sets for {} components",
            params.len(),
            state.components.len()
        )));
    }
    let edges = graph.message_edges();
    let mode = SpikeMode::Live { seed };
    let mut ctx = SpikeContext::new(&mode, steps, neuron);
    let mut components = Vec::with_capacity(params.len());
    let mut rates = Vec::with_capacity(params.len());
    for (m, p) in params.iter().enumerate() {
        let curvature = state.components[m]
            .first()
            .map(ManifoldPoint::curvature)
            .ok_or_else(|| Error::Shape("empty layer state".into()))?;
        let kappa = curvature.value();
        let mut tape = Tape::new();
        let s = tape.leaf(state.component_tensor(m));
        let vars = AttentionVars {
            w_q: tape.leaf(p.w_q.clone()),
            b_q: tape.leaf(Tensor::row_vector(&p.b_q)),
            w_t: None,
        };
        let agg = aggregate(&mut tape, s, kappa, &edges, vars, p.gamma, None)?;
        let key = StreamKey::at(seed, layer, m);
        let (out, rate) = spiking_update(&mut tape, agg, kappa, key, &edges.fanout, &mut ctx)?;
        let points = tape
            .value(out)
            .to_rows()
            .into_iter()
            .map(|row| ManifoldPoint::new(row, curvature))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        components.push(points);
        rates.push(tape.value(rate).clone());
    }
    Ok(LayerState { components, rates })
}

/// Sigmoid spike probabilities of the origin-log coordinates of `p`.
pub fn spike_probabilities_of(p: &ManifoldPoint) -> Result<Vec<f64>> {
    let log = manifold::log_origin(p)?;
    Ok(spike_probability(&Tensor::row_vector(&log)).into_vec())
}
