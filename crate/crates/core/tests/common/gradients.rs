use std::collections::BTreeSet;
use std::time::Instant;

use geospike::autodiff::{finite_diff_check, FdReport, StRule, Tape, Var, DIFFERENTIABLE_OPS};
use geospike::harness::{model_config, prepare_data, PreparedData, RunConfig, Task};
use geospike::layers::SpikeMode;
use geospike::model::{ForwardOptions, Model};
use geospike::objectives::{sample_triplets, traced_classification_loss, traced_link_loss};
use geospike::spiking::sample_spike_train;
use geospike::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const INPUTS: usize = 100;
/// Curvatures cycled through by the geometry op cases, flat included.
pub const GEO_KAPPAS: [f64; 7] = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];

pub type Loss = Box<dyn Fn(&mut Tape, Var) -> geospike::Result<Var>>;
type Builder = Box<dyn Fn(&mut ChaCha8Rng, usize) -> (Tensor, Loss)>;

/// A scalar function of one tensor input, rebuilt for every random input.
pub struct Case {
    pub name: String,
    build: Builder,
}

impl Case {
    fn new(
        name: impl Into<String>,
        build: impl Fn(&mut ChaCha8Rng, usize) -> (Tensor, Loss) + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            build: Box::new(build),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CaseStats {
    pub name: String,
    pub inputs: usize,
    pub checked: usize,
    pub skipped: usize,
    /// Checked coordinates with a gradient of magnitude above 1e-6.
    pub nonzero: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl CaseStats {
    fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    fn absorb(&mut self, input: usize, what: &str, report: &FdReport) {
        self.checked += report.checked.len();
        self.skipped += report.boundary_skipped.len();
        self.nonzero += report
            .checked
            .iter()
            .filter(|c| c.analytic.abs() > 1e-6)
            .count();
        self.max_rel_err = self.max_rel_err.max(report.max_rel_err);
        if !report.passed {
            let worst = report.worst().expect("a failed check has coordinates");
            self.failures.push(format!(
                "input {input} {what}: coord {} analytic {:.6e} numeric {:.6e}",
                worst.index, worst.analytic, worst.numeric
            ));
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.nonzero > 0 && self.skipped * 10 <= self.checked
    }
}

fn tensor(rows: usize, cols: usize, mut f: impl FnMut() -> f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| f()).collect())
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let v = gaussian(rng, rows * cols);
    Tensor::from_vec(rows, cols, v.into_iter().map(|x| x * scale).collect())
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    tensor(rows, cols, || rng.random_range(0.2..2.0))
}

/// `sum(y * W)` for a fixed pseudo-random cotangent `W`.
fn contract(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(y);
    let w = normal(&mut super::rng(seed), r, c, 1.0);
    let w = tape.leaf(w);
    let m = tape.mul(y, w);
    tape.sum(m)
}

fn unary(name: &str, positive_input: bool, op: fn(&mut Tape, Var) -> Var) -> Case {
    Case::new(name, move |rng, _| {
        let x = if positive_input {
            positive(rng, 3, 4)
        } else {
            normal(rng, 3, 4, 1.5)
        };
        let seed = rng.random();
        let loss: Loss = Box::new(move |t, x| {
            let y = op(t, x);
            Ok(contract(t, y, seed))
        });
        (x, loss)
    })
}

/// `op(x, B)` or `op(B, x)` with a fixed random `B`.
fn binary(
    name: &str,
    x_shape: (usize, usize),
    b_shape: (usize, usize),
    x_first: bool,
    op: fn(&mut Tape, Var, Var) -> Var,
) -> Case {
    let name = format!("{name}.{}", if x_first { "lhs" } else { "rhs" });
    Case::new(name, move |rng, _| {
        let x = normal(rng, x_shape.0, x_shape.1, 1.0);
        let b = normal(rng, b_shape.0, b_shape.1, 1.0);
        let seed = rng.random();
        let loss: Loss = Box::new(move |t, x| {
            let b = t.leaf(b.clone());
            let y = if x_first { op(t, x, b) } else { op(t, b, x) };
            Ok(contract(t, y, seed))
        });
        (x, loss)
    })
}

fn both_sides(
    out: &mut Vec<Case>,
    name: &str,
    a: (usize, usize),
    b: (usize, usize),
    op: fn(&mut Tape, Var, Var) -> Var,
) {
    out.push(binary(name, a, b, true, op));
    out.push(binary(name, b, a, false, op));
}

fn tensor_cases() -> Vec<Case> {
    let mut cases = vec![
        unary("neg", false, |t, x| t.neg(x)),
        unary("scale", false, |t, x| t.scale(x, 1.7)),
        unary("add_scalar", false, |t, x| t.add_scalar(x, 0.3)),
        unary("exp", false, |t, x| t.exp(x)),
        unary("ln", true, |t, x| t.ln(x)),
        unary("tanh", false, |t, x| t.tanh(x)),
        unary("sigmoid", false, |t, x| t.sigmoid(x)),
        unary("softplus", false, |t, x| t.softplus(x)),
        unary("relu", false, |t, x| t.relu(x)),
        unary("clamp", false, |t, x| t.clamp(x, -0.5, 0.5)),
        unary("sum", false, |t, x| t.sum(x)),
        unary("mean", false, |t, x| t.mean(x)),
        unary("row_sum", false, |t, x| t.row_sum(x)),
        unary("row_normalize", true, |t, x| t.row_normalize(x)),
        unary("softmax_rows", false, |t, x| t.softmax_rows(x)),
        unary("slice_cols", false, |t, x| t.slice_cols(x, 1, 3)),
        unary("gather_rows", false, |t, x| t.gather_rows(x, &[2, 0, 2, 1])),
        unary("scatter_add_rows", false, |t, x| {
            t.scatter_add_rows(x, &[1, 0, 1], 4)
        }),
        unary("concat_cols.self", false, |t, x| t.concat_cols(&[x, x])),
        Case::new("segment_softmax", |rng, _| {
            let x = normal(rng, 6, 1, 1.5);
            let seed = rng.random();
            let loss: Loss = Box::new(move |t, x| {
                let y = t.segment_softmax(x, &[0, 0, 1, 2, 2, 2]);
                Ok(contract(t, y, seed))
            });
            (x, loss)
        }),
        Case::new("cross_entropy", |rng, _| {
            let x = positive(rng, 4, 3);
            let loss: Loss = Box::new(|t, x| Ok(t.cross_entropy(x, &[0, 2, 1, 0], &[0, 1, 3])));
            (x, loss)
        }),
        Case::new("cross_entropy.softmax", |rng, _| {
            let x = normal(rng, 4, 3, 2.0);
            let loss: Loss = Box::new(|t, x| {
                let p = t.softmax_rows(x);
                Ok(t.cross_entropy(p, &[0, 2, 1, 0], &[0, 1, 2, 3]))
            });
            (x, loss)
        }),
        Case::new("bernoulli_sample", |rng, _| {
            let x = normal(rng, 3, 4, 1.5);
            let p0: Vec<f64> = x.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
            let train = sample_spike_train(&p0, 5, rng.random()).unwrap();
            let residual: Vec<f64> = (0..p0.len())
                .map(|i| train.neuron(i).iter().filter(|&&b| b).count() as f64 / 5.0 - p0[i])
                .collect();
            let residual = Tensor::from_vec(3, 4, residual);
            let seed = rng.random();
            let loss: Loss = Box::new(move |t, x| {
                let p = t.sigmoid(x);
                let rate = t.value(p).zip_map(&residual, |q, r| q + r);
                let y = t.straight_through(p, rate, StRule::BernoulliSample)?;
                Ok(contract(t, y, seed))
            });
            (x, loss)
        }),
    ];
    both_sides(&mut cases, "add", (3, 4), (3, 4), |t, a, b| t.add(a, b));
    both_sides(&mut cases, "sub", (3, 4), (3, 4), |t, a, b| t.sub(a, b));
    both_sides(&mut cases, "mul", (3, 4), (3, 4), |t, a, b| t.mul(a, b));
    both_sides(&mut cases, "rowwise_dot", (3, 4), (3, 4), |t, a, b| {
        t.rowwise_dot(a, b)
    });
    both_sides(&mut cases, "concat_cols", (3, 4), (3, 2), |t, a, b| {
        t.concat_cols(&[a, b])
    });
    cases.push(binary("matmul", (3, 4), (4, 2), true, |t, a, b| {
        t.matmul(a, b)
    }));
    cases.push(binary("matmul", (4, 2), (3, 4), false, |t, a, b| {
        t.matmul(a, b)
    }));
    cases.push(binary("add_row_bias", (3, 4), (1, 4), true, |t, a, b| {
        t.add_row_bias(a, b)
    }));
    cases.push(binary("add_row_bias", (1, 4), (3, 4), false, |t, a, b| {
        t.add_row_bias(a, b)
    }));
    cases.push(binary("mul_col", (3, 4), (3, 1), true, |t, a, b| {
        t.mul_col(a, b)
    }));
    cases.push(binary("mul_col", (3, 1), (3, 4), false, |t, a, b| {
        t.mul_col(a, b)
    }));
    cases
}

const GEO_ROWS: usize = 2;
const GEO_DIM: usize = 3;

fn ambient(kappa: f64) -> usize {
    if kappa == 0.0 {
        GEO_DIM
    } else {
        GEO_DIM + 1
    }
}

fn length_unit(kappa: f64) -> f64 {
    if kappa == 0.0 {
        1.0
    } else {
        1.0 / kappa.abs().sqrt()
    }
}

/// Points as smooth functions of spatial coordinates.
fn chart(t: &mut Tape, a: Var, kappa: f64) -> geospike::Result<Var> {
    let e = t.exp_origin(a, kappa);
    Ok(t.project(e, kappa)?)
}

fn spatial(rng: &mut ChaCha8Rng, kappa: f64) -> Tensor {
    normal(rng, GEO_ROWS, GEO_DIM, 0.4 * length_unit(kappa))
}

fn ambient_sample(rng: &mut ChaCha8Rng, kappa: f64) -> Tensor {
    normal(rng, GEO_ROWS, ambient(kappa), 0.5 * length_unit(kappa))
}

type GeoFn = fn(&mut Tape, Var, Var, f64) -> geospike::Result<Var>;

/// `f(x, fixed)` where `x` is drawn by `sample_x` and `fixed` by `sample_fixed`.
fn geo(
    name: &str,
    sample_x: fn(&mut ChaCha8Rng, f64) -> Tensor,
    sample_fixed: fn(&mut ChaCha8Rng, f64) -> Tensor,
    f: GeoFn,
) -> Case {
    Case::new(name, move |rng, i| {
        let kappa = GEO_KAPPAS[i % GEO_KAPPAS.len()];
        let x = sample_x(rng, kappa);
        let fixed = sample_fixed(rng, kappa);
        let seed = rng.random();
        let loss: Loss = Box::new(move |t, x| {
            let c = t.leaf(fixed.clone());
            let y = f(t, x, c, kappa)?;
            Ok(contract(t, y, seed))
        });
        (x, loss)
    })
}

fn geometry_cases() -> Vec<Case> {
    vec![
        geo("exp_origin", spatial, spatial, |t, x, _, k| {
            Ok(t.exp_origin(x, k))
        }),
        geo("project", ambient_sample, spatial, |t, x, _, k| {
            Ok(t.project(x, k)?)
        }),
        geo("log_origin", spatial, spatial, |t, x, _, k| {
            let p = chart(t, x, k)?;
            Ok(t.log_origin(p, k)?)
        }),
        geo(
            "project_tangent.v",
            ambient_sample,
            spatial,
            |t, x, a, k| {
                let p = chart(t, a, k)?;
                Ok(t.project_tangent(p, x, k)?)
            },
        ),
        geo(
            "project_tangent.x",
            spatial,
            ambient_sample,
            |t, x, v, k| {
                let p = chart(t, x, k)?;
                Ok(t.project_tangent(p, v, k)?)
            },
        ),
        geo("exp_map.t", ambient_sample, spatial, |t, x, a, k| {
            let p = chart(t, a, k)?;
            let v = t.project_tangent(p, x, k)?;
            Ok(t.exp_map(p, v, k)?)
        }),
        geo("exp_map.x", spatial, ambient_sample, |t, x, b, k| {
            let p = chart(t, x, k)?;
            let v = t.project_tangent(p, b, k)?;
            Ok(t.exp_map(p, v, k)?)
        }),
        geo("log_map.x", spatial, spatial, |t, x, b, k| {
            let (p, q) = (chart(t, x, k)?, chart(t, b, k)?);
            Ok(t.log_map(p, q, k)?)
        }),
        geo("log_map.y", spatial, spatial, |t, x, b, k| {
            let (p, q) = (chart(t, b, k)?, chart(t, x, k)?);
            Ok(t.log_map(p, q, k)?)
        }),
        geo("dist_sq.x", spatial, spatial, |t, x, b, k| {
            let (p, q) = (chart(t, x, k)?, chart(t, b, k)?);
            Ok(t.dist_sq(p, q, k)?)
        }),
        geo("dist_sq.y", spatial, spatial, |t, x, b, k| {
            let (p, q) = (chart(t, b, k)?, chart(t, x, k)?);
            Ok(t.dist_sq(p, q, k)?)
        }),
    ]
}

pub fn all_cases() -> Vec<Case> {
    let mut cases = tensor_cases();
    cases.extend(geometry_cases());
    cases
}

fn record_ops(loss: &Loss, x: &Tensor, covered: &mut BTreeSet<&'static str>) {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    if loss(&mut tape, v).is_ok() {
        covered.extend(tape.op_names());
    }
}

pub fn run_case(case: &Case, inputs: usize, covered: &mut BTreeSet<&'static str>) -> CaseStats {
    let mut stats = CaseStats::named(&case.name);
    let mut rng = super::rng(0x9e37 ^ case.name.len() as u64);
    for i in 0..inputs {
        let (x, loss) = (case.build)(&mut rng, i);
        if i == 0 {
            record_ops(&loss, &x, covered);
        }
        stats.inputs += 1;
        match finite_diff_check(&loss, &x, FD_EPS, FD_TOL) {
            Ok(report) => stats.absorb(i, "", &report),
            Err(err) => stats.failures.push(format!("input {i}: {err}")),
        }
    }
    stats
}

/// The straight-through threshold is checked against finite differences of
/// its surrogate `x + (H(x) - x)` with the residual held fixed.
pub fn heaviside_case(inputs: usize, covered: &mut BTreeSet<&'static str>) -> CaseStats {
    const V_TH: f64 = 0.5;
    let mut stats = CaseStats::named("heaviside");
    let mut rng = super::rng(0x4ea5);
    for i in 0..inputs {
        let x = normal(&mut rng, 3, 4, 1.0);
        let seed: u64 = rng.random();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let h = tape.heaviside(xv, V_TH);
        let loss = contract(&mut tape, h, seed);
        covered.extend(tape.op_names());
        let analytic = tape.backward(loss).unwrap().wrt_or_zeros(xv, x.shape());
        let residual = x.map(|v| if v >= V_TH { 1.0 - v } else { -v });
        let surrogate = |t: &mut Tape, x: Var| -> geospike::Result<Var> {
            let r = t.leaf(residual.clone());
            let y = t.add(x, r);
            Ok(contract(t, y, seed))
        };
        stats.inputs += 1;
        let report = finite_diff_check(surrogate, &x, FD_EPS, FD_TOL).unwrap();
        stats.checked += report.checked.len();
        for c in &report.checked {
            let a = analytic.data()[c.index];
            if a.abs() > 1e-6 {
                stats.nonzero += 1;
            }
            let err = (a - c.numeric).abs() / 1f64.max(a.abs()).max(c.numeric.abs());
            stats.max_rel_err = stats.max_rel_err.max(err);
            if err > FD_TOL {
                stats.failures.push(format!(
                    "input {i}: coord {} analytic {a} numeric {}",
                    c.index, c.numeric
                ));
            }
        }
    }
    stats
}

/// Tiny three-component problem used for the full-loss checks.
pub fn loss_problem(task: Task, tangent_transform: bool) -> (RunConfig, PreparedData) {
    let mut config = RunConfig::synthetic(task, "h3xs3xe3", "sbm:2,6,0.5,0.1");
    config.seed = 11;
    config.time_steps = 5;
    config.dropout = 0.2;
    config.tangent_transform = tangent_transform;
    let data = prepare_data(&config).unwrap();
    (config, data)
}

/// Finite-difference check of the training loss with respect to every
/// parameter, spikes frozen from a live pass.
pub fn full_loss_case(task: Task, inputs: usize) -> CaseStats {
    let name = match task {
        Task::Nc => "classification_loss",
        Task::Lp => "link_loss",
    };
    let mut stats = CaseStats::named(name);
    let problems = [loss_problem(task, false), loss_problem(task, true)];
    let mut rng = super::rng(0x1055 + name.len() as u64);
    for i in 0..inputs {
        let (config, data) = &problems[i % 2];
        let mut model = Model::init(model_config(config, data).unwrap(), i as u64).unwrap();
        for p in model.params.iter_mut() {
            let noise = normal(&mut rng, p.value.rows(), p.value.cols(), 0.3);
            p.value.add_assign(&noise);
        }
        let graph = &data.message_graph;
        let dropout_seed = Some(i as u64);
        let mut tape = Tape::new();
        let live = ForwardOptions {
            mode: SpikeMode::Live { seed: i as u64 },
            dropout_seed,
        };
        let frozen = model.forward(&mut tape, graph, &live).unwrap().frozen;
        let opts = ForwardOptions {
            mode: SpikeMode::Replay(frozen),
            dropout_seed,
        };
        let labels = data.graph.labels().map(<[usize]>::to_vec);
        let rows = data.graph.masks().map(|m| m.train_nodes());
        let triplets = sample_triplets(graph, 1, i as u64);
        stats.inputs += 1;
        for (k, p) in model.params.iter().enumerate() {
            let loss = |tape: &mut Tape, x: Var| -> geospike::Result<Var> {
                let mut vars = model.leaves(tape);
                vars[k] = x;
                let fwd = model.forward_with(tape, graph, &opts, vars)?;
                match task {
                    Task::Nc => {
                        let labels = labels.as_deref().expect("labels");
                        let rows = rows.as_deref().expect("masks");
                        Ok(traced_classification_loss(tape, &model, &fwd, labels, rows)?.0)
                    }
                    Task::Lp => traced_link_loss(tape, &model, &fwd, &triplets, config.margin),
                }
            };
            match finite_diff_check(loss, &p.value, FD_EPS, FD_TOL) {
                Ok(report) => stats.absorb(i, &p.name, &report),
                Err(err) => stats.failures.push(format!("input {i} {}: {err}", p.name)),
            }
        }
    }
    stats
}

#[derive(Debug, Default)]
pub struct GradientReport {
    pub cases: Vec<CaseStats>,
    pub covered: BTreeSet<&'static str>,
    pub seconds: f64,
}

impl GradientReport {
    pub fn missing_ops(&self) -> Vec<&'static str> {
        DIFFERENTIABLE_OPS
            .iter()
            .copied()
            .filter(|op| !self.covered.contains(op))
            .collect()
    }

    pub fn verdict(&self) -> Verdict {
        let bad: Vec<String> = self
            .cases
            .iter()
            .filter(|c| !c.ok())
            .map(|c| {
                format!(
                    "{} (checked {}, skipped {}, first failure: {})",
                    c.name,
                    c.checked,
                    c.skipped,
                    c.failures.first().map_or("-", String::as_str)
                )
            })
            .collect();
        let missing = self.missing_ops();
        let worst = self.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
        let passed = bad.is_empty() && missing.is_empty() && self.seconds < 120.0;
        let detail = if passed {
            format!(
                "{} cases, {} ops, worst rel err {worst:.1e}, {:.1}s",
                self.cases.len(),
                self.covered.len(),
                self.seconds
            )
        } else {
            format!(
                "failing: {}; uncovered ops: {missing:?}; {:.1}s",
                bad.join(", "),
                self.seconds
            )
        };
        Verdict::new(passed, detail)
    }
}

pub fn gradient_suite(inputs: usize) -> GradientReport {
    let start = Instant::now();
    let mut report = GradientReport::default();
    for case in all_cases() {
        let stats = run_case(&case, inputs, &mut report.covered);
        report.cases.push(stats);
    }
    let st = heaviside_case(inputs, &mut report.covered);
    report.cases.push(st);
    for task in [Task::Nc, Task::Lp] {
        report.cases.push(full_loss_case(task, inputs));
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}
