//! Model configuration, parameters and the traced forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{
    aggregate, default_gamma, dropout_scale, spiking_update, AttentionVars, FrozenSpikes,
    LayerState, OpCounts, SpikeContext, SpikeMode,
};
use crate::manifold::{kernels, Curvature, ManifoldPoint, ProductManifoldSpec};
use crate::spiking::{IfParams, StreamKey};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadConfig {
    Classifier { classes: usize },
    Link,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub geometry: ProductManifoldSpec,
    pub in_features: usize,
    pub layers: usize,
    pub time_steps: usize,
    /// Message dropout rate during training.
    pub dropout: f64,
    /// Attention temperature; `1/sqrt(d)` per component when absent.
    pub gamma: Option<f64>,
    /// Learned linear map on origin logs of the states before aggregation.
    pub tangent_transform: bool,
    pub neuron: IfParams,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn new(geometry: ProductManifoldSpec, in_features: usize, head: HeadConfig) -> Self {
        Self {
            geometry,
            in_features,
            layers: 2,
            time_steps: 5,
            dropout: 0.0,
            gamma: None,
            tangent_transform: false,
            neuron: IfParams::default(),
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_features == 0 {
            return bad("input features must have at least one column".into());
        }
        if self.time_steps == 0 {
            return bad("time steps must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma {g} must be finite and > 0"));
            }
        }
        if let HeadConfig::Classifier { classes } = self.head {
            if classes < 2 {
                return bad(format!("classifier needs >= 2 classes, got {classes}"));
            }
        }
        Ok(())
    }
}

/// How the optimizer treats a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "curvature", rename_all = "lowercase")]
pub enum ParamKind {
    Euclidean,
    /// Every row is a point on the manifold of this curvature.
    Manifold(Curvature),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    params: Vec<Param>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerSlots {
    pub w_q: usize,
    pub b_q: usize,
    pub w_t: Option<usize>,
}

#[derive(Clone, Debug)]
pub(crate) enum HeadSlots {
    Classifier {
        w: usize,
        b: usize,
    },
    /// `(w, b)` per component.
    Link {
        gates: Vec<(usize, usize)>,
    },
}

/// Positions of each parameter in [`ModelParams`].
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embed: usize,
    pub layers: Vec<Vec<LayerSlots>>,
    pub head: HeadSlots,
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

fn identity(n: usize) -> Tensor {
    let mut t = Tensor::zeros(n, n);
    for i in 0..n {
        t.set(i, i, 1.0);
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Result of a traced forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Tape handle of every parameter, in [`ModelParams`] order.
    pub params: Vec<Var>,
    /// Final node states per component, `n x ambient`.
    pub states: Vec<Var>,
    pub counts: OpCounts,
    /// Spike residuals recorded by a live pass, for [`SpikeMode::Replay`].
    pub frozen: FrozenSpikes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: SpikeMode,
    /// Enables message dropout with this seed.
    pub dropout_seed: Option<u64>,
}

impl ForwardOptions {
    pub fn eval(seed: u64) -> Self {
        Self {
            mode: SpikeMode::Live { seed },
            dropout_seed: None,
        }
    }
}

impl Model {
    /// Xavier-uniform weights, zero biases, identity tangent maps and zero
    /// gating weights.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut push = |name: String, value: Tensor| {
            params.push(Param {
                name,
                kind: ParamKind::Euclidean,
                value,
            })
        };
        let total = config.geometry.total_dim();
        push(
            "embed.w".into(),
            xavier(config.in_features, total, &mut rng),
        );
        for l in 0..config.layers {
            for (m, c) in config.geometry.components().iter().enumerate() {
                push(format!("layer{l}.c{m}.w_q"), xavier(c.dim, c.dim, &mut rng));
                push(format!("layer{l}.c{m}.b_q"), Tensor::zeros(1, c.dim));
                if config.tangent_transform {
                    push(format!("layer{l}.c{m}.w_t"), identity(c.dim));
                }
            }
        }
        match config.head {
            HeadConfig::Classifier { classes } => {
                push("head.w".into(), xavier(total, classes, &mut rng));
                push("head.b".into(), Tensor::zeros(1, classes));
            }
            HeadConfig::Link => {
                for (m, c) in config.geometry.components().iter().enumerate() {
                    push(format!("gate.c{m}.w"), Tensor::zeros(c.dim, 1));
                    push(format!("gate.c{m}.b"), Tensor::zeros(1, 1));
                }
            }
        }
        Ok(Self {
            config,
            params: ModelParams { params },
        })
    }

    /// Rebuilds a model from saved parameters, checking names and shapes
    /// against a fresh initialization.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        let reference = Self::init(config, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (a, b) in reference.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Config(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        Ok(Self {
            config: reference.config,
            params,
        })
    }

    pub(crate) fn layout(&self) -> Layout {
        let k = self.config.geometry.len();
        let per_comp = if self.config.tangent_transform { 3 } else { 2 };
        let mut next = 1;
        let layers = (0..self.config.layers)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        let slots = LayerSlots {
                            w_q: next,
                            b_q: next + 1,
                            w_t: self.config.tangent_transform.then_some(next + 2),
                        };
                        next += per_comp;
                        slots
                    })
                    .collect()
            })
            .collect();
        let head = match self.config.head {
            HeadConfig::Classifier { .. } => HeadSlots::Classifier {
                w: next,
                b: next + 1,
            },
            HeadConfig::Link => HeadSlots::Link {
                gates: (0..k).map(|m| (next + 2 * m, next + 2 * m + 1)).collect(),
            },
        };
        Layout {
            embed: 0,
            layers,
            head,
        }
    }

    /// Pushes every parameter onto the tape as a leaf.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &Graph,
        opts: &ForwardOptions,
    ) -> Result<Forward> {
        let vars = self.leaves(tape);
        self.forward_with(tape, graph, opts, vars)
    }

    /// Forward pass over caller-provided parameter handles (one per
    /// parameter, in order).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        graph: &Graph,
        opts: &ForwardOptions,
        vars: Vec<Var>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        if vars.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameter handles for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        if graph.features().cols() != cfg.in_features {
            return Err(Error::Config(format!(
                "graph has {} feature columns, model expects {}",
                graph.features().cols(),
                cfg.in_features
            )));
        }
        let layout = self.layout();
        let n = graph.num_nodes();
        let edges = graph.message_edges();
        let mut counts = OpCounts::default();
        let total = cfg.geometry.total_dim();

        let x = tape.leaf(graph.features().clone());
        let h = tape.matmul(x, vars[layout.embed]);
        counts.macs += (n * cfg.in_features * total) as u64;
        let mut states = Vec::with_capacity(cfg.geometry.len());
        let mut offset = 0;
        for c in cfg.geometry.components() {
            let kappa = c.curvature.value();
            let part = tape.slice_cols(h, offset, offset + c.dim);
            let lifted = tape.exp_origin(part, kappa);
            states.push(tape.project(lifted, kappa)?);
            offset += c.dim;
        }

        let mut ctx = SpikeContext::new(&opts.mode, cfg.time_steps, cfg.neuron);
        let e = edges.len();
        for (l, slots) in layout.layers.iter().enumerate() {
            for (m, c) in cfg.geometry.components().iter().enumerate() {
                let kappa = c.curvature.value();
                let amb = c.curvature.ambient_dim(c.dim);
                let gamma = cfg.gamma.unwrap_or_else(|| default_gamma(c.dim));
                let key = StreamKey::at(0, l, m);
                let scale = match opts.dropout_seed {
                    Some(seed) if cfg.dropout > 0.0 => {
                        Some(dropout_scale(e, cfg.dropout, StreamKey { seed, ..key }))
                    }
                    _ => None,
                };
                let attn = AttentionVars {
                    w_q: vars[slots[m].w_q],
                    b_q: vars[slots[m].b_q],
                    w_t: slots[m].w_t.map(|i| vars[i]),
                };
                let agg = aggregate(tape, states[m], kappa, &edges, attn, gamma, scale)?;
                counts.macs += (n * c.dim * c.dim + e * (2 * amb + c.dim)) as u64;
                if attn.w_t.is_some() {
                    counts.macs += (n * c.dim * c.dim) as u64;
                }
                let (out, _) = spiking_update(tape, agg, kappa, key, &edges.fanout, &mut ctx)?;
                check_on_manifold(
                    tape.value(out),
                    c.curvature,
                    &format!("layer {l}, component {m}"),
                )?;
                states[m] = out;
            }
        }
        counts.add(ctx.counts);
        Ok(Forward {
            params: vars,
            states,
            counts,
            frozen: ctx.frozen,
        })
    }

    /// Final states of a forward pass as manifold points.
    pub fn layer_state(&self, tape: &Tape, fwd: &Forward) -> Result<LayerState> {
        let components = self
            .config
            .geometry
            .components()
            .iter()
            .zip(&fwd.states)
            .map(|(c, &v)| {
                tape.value(v)
                    .to_rows()
                    .into_iter()
                    .map(|row| ManifoldPoint::new(row, c.curvature))
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(LayerState {
            components,
            rates: Vec::new(),
        })
    }
}

/// Fails if any row of `points` violates the manifold constraint.
pub fn check_on_manifold(points: &Tensor, curvature: Curvature, context: &str) -> Result<()> {
    let kappa = curvature.value();
    let tol = kernels::constraint_tolerance(kappa);
    for r in 0..points.rows() {
        let row = points.row(r);
        let drift = kernels::constraint_violation(row, kappa);
        let wrong_sheet = kappa < 0.0 && row[0] <= 0.0;
        if drift.is_nan() || drift > tol || wrong_sheet {
            return Err(Error::Constraint(format!(
                "{context}: node {r} is off the manifold (drift {drift:e})"
            )));
        }
    }
    Ok(())
}
