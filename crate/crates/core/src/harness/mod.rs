//! Training and evaluation pipeline, metrics, energy accounting and result
//! documents.

mod checkpoint;
mod energy;
mod results;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{
    generate_synthetic, load_dataset_dir, split, split_edges, EdgeSplit, Fractions, Graph,
    SyntheticSpec,
};
use crate::layers::{OpCounts, SpikeMode};
use crate::manifold::ProductManifoldSpec;
use crate::model::{ForwardOptions, HeadConfig, Model, ModelConfig};
use crate::objectives::{
    classifier_macs, link_macs, sample_triplets, traced_class_probs, traced_classification_loss,
    traced_link_loss, traced_pair_scores, DEFAULT_MARGIN,
};
use crate::optim::{step_all, DEFAULT_GEO_STEP};
use crate::spiking::IfParams;
use crate::tensor::Tensor;

pub use checkpoint::Checkpoint;
pub use energy::{estimate_energy, EnergyConstants, EnergyReport};
pub use results::{emit_results, ResultsDoc, RESULTS_SCHEMA, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Node classification.
    Nc,
    /// Link prediction.
    Lp,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Nc => "nc",
            Task::Lp => "lp",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nc" => Ok(Task::Nc),
            "lp" => Ok(Task::Lp),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected nc or lp)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Directory with `edges.txt`, `features.csv` and optionally `labels.txt`.
    Dataset { dir: PathBuf },
    /// Generator spec such as `sbm:2,50,0.1,0.01`.
    Synthetic { spec: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub geometry: String,
    /// Pins the summed component dimension when set.
    pub embedding_dim: Option<usize>,
    pub time_steps: usize,
    pub lr: f64,
    pub geo_step: f64,
    pub margin: f64,
    pub epochs: usize,
    pub seed: u64,
    pub data: DataSource,
    pub dropout: f64,
    pub layers: usize,
    pub negatives_per_edge: usize,
    pub normalize_features: bool,
    pub tangent_transform: bool,
    /// Replaces sampled spike rates by their probabilities everywhere.
    pub dense: bool,
    /// Node split for classification, edge split for link prediction; a
    /// task-specific default when absent.
    pub fractions: Option<Fractions>,
    pub neuron: IfParams,
    pub energy: EnergyConstants,
}

impl RunConfig {
    pub fn new(task: Task, geometry: &str, data: DataSource) -> Self {
        Self {
            task,
            geometry: geometry.to_string(),
            embedding_dim: None,
            time_steps: 5,
            lr: 0.003,
            geo_step: DEFAULT_GEO_STEP,
            margin: DEFAULT_MARGIN,
            epochs: 200,
            seed: 0,
            data,
            dropout: 0.1,
            layers: 2,
            negatives_per_edge: 1,
            normalize_features: false,
            tangent_transform: false,
            dense: false,
            fractions: None,
            neuron: IfParams::default(),
            energy: EnergyConstants::default(),
        }
    }

    pub fn synthetic(task: Task, geometry: &str, spec: &str) -> Self {
        Self::new(
            task,
            geometry,
            DataSource::Synthetic {
                spec: spec.to_string(),
            },
        )
    }

    pub fn fractions(&self) -> Fractions {
        self.fractions.unwrap_or(match self.task {
            Task::Nc => Fractions::default(),
            Task::Lp => Fractions {
                train: 0.85,
                val: 0.05,
                test: 0.10,
            },
        })
    }

    pub fn geometry_spec(&self) -> Result<ProductManifoldSpec> {
        Ok(ProductManifoldSpec::parse(
            &self.geometry,
            self.embedding_dim,
        )?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.geometry_spec()?;
        if self.time_steps == 0 {
            return bad("time steps must be >= 1".into());
        }
        for (name, v) in [("lr", self.lr), ("geo-step", self.geo_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and > 0"));
            }
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin {} must be finite and >= 0", self.margin));
        }
        if self.negatives_per_edge == 0 {
            return bad("negatives per edge must be >= 1".into());
        }
        self.fractions().validate()?;
        Ok(())
    }
}

/// Independent seeds for each source of randomness in a run.
#[derive(Clone, Copy, Debug)]
struct Seeds {
    data: u64,
    split: u64,
    init: u64,
    spikes: u64,
    dropout: u64,
    triplets: u64,
    eval: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            data: rng.random(),
            split: rng.random(),
            init: rng.random(),
            spikes: rng.random(),
            dropout: rng.random(),
            triplets: rng.random(),
            eval: rng.random(),
        }
    }
}

fn spike_mode(config: &RunConfig, seed: u64) -> SpikeMode {
    if config.dense {
        SpikeMode::Dense
    } else {
        SpikeMode::Live { seed }
    }
}

/// Graph, masks and the edges visible to message passing.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub task: Task,
    /// Full graph; carries node masks for classification.
    pub graph: Graph,
    /// Graph used for message passing (training edges only for link prediction).
    pub message_graph: Graph,
    pub edge_split: Option<EdgeSplit>,
}

pub fn prepare_data(config: &RunConfig) -> Result<PreparedData> {
    let seeds = Seeds::new(config.seed);
    let mut graph = match &config.data {
        DataSource::Dataset { dir } => load_dataset_dir(dir)?,
        DataSource::Synthetic { spec } => {
            let spec: SyntheticSpec = spec.parse()?;
            generate_synthetic(&spec, seeds.data)?
        }
    };
    if config.normalize_features {
        graph.normalize_features();
    }
    match config.task {
        Task::Nc => {
            if graph.labels().is_none() {
                return Err(Error::Config("node classification needs labels".into()));
            }
            if graph.num_classes() < 2 {
                return Err(Error::Config(
                    "node classification needs >= 2 classes".into(),
                ));
            }
            let graph = split(graph, config.fractions(), seeds.split)?;
            Ok(PreparedData {
                task: Task::Nc,
                message_graph: graph.clone(),
                graph,
                edge_split: None,
            })
        }
        Task::Lp => {
            let es = split_edges(&graph, config.fractions(), seeds.split)?;
            let message_graph = graph.with_edges(&es.train)?;
            Ok(PreparedData {
                task: Task::Lp,
                graph,
                message_graph,
                edge_split: Some(es),
            })
        }
    }
}

pub fn model_config(config: &RunConfig, data: &PreparedData) -> Result<ModelConfig> {
    let head = match config.task {
        Task::Nc => HeadConfig::Classifier {
            classes: data.graph.num_classes(),
        },
        Task::Lp => HeadConfig::Link,
    };
    let mut mc = ModelConfig::new(config.geometry_spec()?, data.graph.features().cols(), head);
    mc.layers = config.layers;
    mc.time_steps = config.time_steps;
    mc.dropout = config.dropout;
    mc.tangent_transform = config.tangent_transform;
    mc.neuron = config.neuron;
    mc.validate()?;
    Ok(mc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Validation accuracy (classification) or AUC (link prediction).
    pub val_metric: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (initial parameters when no
    /// epoch ran).
    pub model: Model,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Reason training stopped early, if it did.
    pub aborted: Option<String>,
    pub data: PreparedData,
    /// Spike mode of every evaluation pass.
    pub eval_mode: SpikeMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

fn mask_rows(data: &PreparedData, which: Split) -> Result<Vec<usize>> {
    let masks = data
        .graph
        .masks()
        .ok_or_else(|| Error::Evaluation("graph has no split masks".into()))?;
    Ok(match which {
        Split::Train => masks.train_nodes(),
        Split::Val => masks.val_nodes(),
        Split::Test => masks.test_nodes(),
    })
}

type Pairs<'a> = &'a [(usize, usize)];

/// Positive and negative node pairs of an edge split.
fn pair_sets(data: &PreparedData, which: Split) -> Result<(Pairs<'_>, Pairs<'_>)> {
    let es = data
        .edge_split
        .as_ref()
        .ok_or_else(|| Error::Evaluation("no edge split for link prediction".into()))?;
    match which {
        Split::Val => Ok((&es.val_pos, &es.val_neg)),
        Split::Test => Ok((&es.test_pos, &es.test_neg)),
        Split::Train => Err(Error::Evaluation("training edges have no negatives".into())),
    }
}

/// Fraction of `rows` whose arg-max class equals the label.
pub fn accuracy(probs: &Tensor, labels: &[usize], rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Evaluation("empty evaluation mask".into()));
    }
    let hits = rows
        .iter()
        .filter(|&&r| {
            let row = probs.row(r);
            let best = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .expect("at least one class");
            best == labels[r]
        })
        .count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Evaluation(
            "AUC needs positive and negative scores".into(),
        ));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Evaluation("NaN score".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += mid_rank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (p, n) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Metric of a trained model on one split, plus the operation counts of
/// the evaluation pass.
pub fn evaluate_split(
    model: &Model,
    data: &PreparedData,
    which: Split,
    mode: &SpikeMode,
) -> Result<(f64, OpCounts)> {
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        mode: mode.clone(),
        dropout_seed: None,
    };
    let fwd = model.forward(&mut tape, &data.message_graph, &opts)?;
    let n = data.graph.num_nodes();
    let mut counts = fwd.counts;
    match data.task {
        Task::Nc => {
            let probs = traced_class_probs(&mut tape, model, &fwd)?;
            counts.macs += classifier_macs(model, n);
            let labels = data.graph.labels().expect("classification data has labels");
            let rows = mask_rows(data, which)?;
            Ok((accuracy(tape.value(probs), labels, &rows)?, counts))
        }
        Task::Lp => {
            let (pos, neg) = pair_sets(data, which)?;
            let pairs: Vec<(usize, usize)> = pos.iter().chain(neg).copied().collect();
            let scores = traced_pair_scores(&mut tape, model, &fwd, &pairs)?;
            counts.macs += link_macs(model, n, pairs.len());
            let s = tape.value(scores).data();
            Ok((auc(&s[..pos.len()], &s[pos.len()..])?, counts))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `accuracy` or `auc`.
    pub name: String,
    pub test: f64,
    pub val: f64,
}

/// Test and validation metric with the spike seed of the outcome.
pub fn evaluate(outcome: &TrainOutcome) -> Result<Metrics> {
    let mode = &outcome.eval_mode;
    let (test, _) = evaluate_split(&outcome.model, &outcome.data, Split::Test, mode)?;
    let (val, _) = evaluate_split(&outcome.model, &outcome.data, Split::Val, mode)?;
    Ok(Metrics {
        name: match outcome.data.task {
            Task::Nc => "accuracy",
            Task::Lp => "auc",
        }
        .into(),
        test,
        val,
    })
}

fn loss_and_grads(
    config: &RunConfig,
    model: &Model,
    data: &PreparedData,
    opts: &ForwardOptions,
    labels: Option<&[usize]>,
    train_rows: &[usize],
    triplet_seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &data.message_graph, opts)?;
    let loss = match config.task {
        Task::Nc => {
            let labels = labels.expect("classification data has labels");
            traced_classification_loss(&mut tape, model, &fwd, labels, train_rows)?.0
        }
        Task::Lp => {
            let triplets =
                sample_triplets(&data.message_graph, config.negatives_per_edge, triplet_seed);
            traced_link_loss(&mut tape, model, &fwd, &triplets, config.margin)?
        }
    };
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {value}")));
    }
    let grads = tape.backward(loss)?;
    let grads = fwd
        .params
        .iter()
        .zip(model.params.iter())
        .map(|(&v, p)| grads.wrt_or_zeros(v, p.value.shape()))
        .collect();
    Ok((value, grads))
}

/// Full-batch training with best-validation parameter retention. Any
/// numerical failure inside an epoch aborts the run and keeps the best
/// checkpoint so far (the initial parameters if no epoch completed).
pub fn run_train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let data = prepare_data(config)?;
    train_prepared(config, data)
}

pub fn train_prepared(config: &RunConfig, data: PreparedData) -> Result<TrainOutcome> {
    let seeds = Seeds::new(config.seed);
    let mut model = Model::init(model_config(config, &data)?, seeds.init)?;
    let eval_mode = spike_mode(config, seeds.eval);
    let labels = data.graph.labels().map(<[usize]>::to_vec);
    let train_rows = match config.task {
        Task::Nc => mask_rows(&data, Split::Train)?,
        Task::Lp => Vec::new(),
    };
    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, crate::model::ModelParams)> = None;
    let mut aborted = None;
    for epoch in 0..config.epochs {
        let e = epoch as u64;
        let opts = ForwardOptions {
            mode: spike_mode(config, seeds.spikes.wrapping_add(e)),
            dropout_seed: Some(seeds.dropout.wrapping_add(e)),
        };
        let step = loss_and_grads(
            config,
            &model,
            &data,
            &opts,
            labels.as_deref(),
            &train_rows,
            seeds.triplets.wrapping_add(e),
        )
        .and_then(|(loss, grads)| {
            let mut next = model.clone();
            step_all(&mut next.params, &grads, config.lr, config.geo_step)?;
            let (val, _) = evaluate_split(&next, &data, Split::Val, &eval_mode)?;
            Ok((loss, val, next))
        });
        let (loss, val_metric, next) = match step {
            Ok(x) => x,
            Err(err) => {
                aborted = Some(format!("epoch {epoch}: {err}"));
                break;
            }
        };
        model = next;
        log::debug!("epoch {epoch}: loss {loss:.6} val {val_metric:.4}");
        trace.push(EpochRecord {
            epoch,
            loss,
            val_metric,
        });
        if best.as_ref().is_none_or(|(v, _, _)| val_metric > *v) {
            best = Some((val_metric, epoch, model.params.clone()));
        }
    }
    if let Some(reason) = &aborted {
        log::error!("training aborted: {reason}; keeping the best checkpoint");
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome {
        model,
        trace,
        best_epoch,
        aborted,
        data,
        eval_mode,
    })
}

/// Operation counts of one inference pass over the whole graph, including
/// the task head.
pub fn inference_counts(outcome: &TrainOutcome, mode: &SpikeMode) -> Result<OpCounts> {
    Ok(evaluate_split(&outcome.model, &outcome.data, Split::Test, mode)?.1)
}

/// Trains, evaluates and assembles the result document.
pub fn run(config: &RunConfig) -> Result<(TrainOutcome, ResultsDoc)> {
    let start = std::time::Instant::now();
    let outcome = run_train(config)?;
    let metrics = evaluate(&outcome)?;
    let counts = inference_counts(&outcome, &outcome.eval_mode)?;
    let doc = ResultsDoc::new(
        config.clone(),
        &outcome,
        metrics,
        estimate_energy(&counts, &config.energy),
        start.elapsed().as_secs_f64(),
    );
    Ok((outcome, doc))
}
