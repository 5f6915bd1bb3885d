use geospike::autodiff::Tape;
use geospike::harness::{model_config, prepare_data, RunConfig, Task};
use geospike::layers::LayerState;
use geospike::manifold::{self, kernels, Curvature, ManifoldPoint};
use geospike::model::{ForwardOptions, Model, ParamKind};
use geospike::objectives::{
    link_margin_loss, pair_score, traced_gate_weights, traced_link_loss, traced_pair_scores,
    Triplet, DEFAULT_MARGIN,
};
use geospike::optim::{rsgd_step, ParamTag};
use geospike::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng as ChaCha;

use super::*;

pub const GATE_TOL: f64 = 1e-12;
pub const DRIFT_TOL: f64 = 1e-9;
pub const TEST_GRAPHS: [&str; 3] = ["tree:6,2", "cycle:30", "sbm:2,50,0.1,0.01"];

/// Link-prediction model on `graph` with random gate and layer parameters.
fn random_link_model(graph: &str, geometry: &str, seed: u64) -> (Model, RunConfig) {
    let mut config = RunConfig::synthetic(Task::Lp, geometry, graph);
    config.seed = seed;
    let data = prepare_data(&config).unwrap();
    let mut model = Model::init(model_config(&config, &data).unwrap(), seed).unwrap();
    let mut rng = rng(seed);
    for p in model.params.iter_mut() {
        let noise = gaussian(&mut rng, p.value.len());
        let noise = Tensor::from_vec(p.value.rows(), p.value.cols(), noise).scaled(0.5);
        p.value.add_assign(&noise);
    }
    (model, config)
}

/// Largest deviation of any node's gate sum from one, over all test graphs.
pub fn gate_sum_error() -> f64 {
    let mut worst: f64 = 0.0;
    for (i, graph) in TEST_GRAPHS.iter().enumerate() {
        for geometry in ["h8xs8xe8", "s4xs8xh16"] {
            let (model, config) = random_link_model(graph, geometry, i as u64);
            let data = prepare_data(&config).unwrap();
            let mut tape = Tape::new();
            let fwd = model
                .forward(
                    &mut tape,
                    &data.message_graph,
                    &ForwardOptions::eval(i as u64),
                )
                .unwrap();
            let gates = traced_gate_weights(&mut tape, &model, &fwd).unwrap();
            let g = tape.value(gates);
            for r in 0..g.rows() {
                let s: f64 = g.row(r).iter().sum();
                worst = worst.max((s - 1.0).abs());
                if g.row(r).iter().any(|&v| v.is_nan() || v <= 0.0) {
                    worst = f64::INFINITY;
                }
            }
        }
    }
    worst
}

fn random_state(rng: &mut impl Rng, n: usize) -> LayerState {
    let components = [(-1.0, 4), (1.0, 3), (0.0, 2)]
        .iter()
        .map(|&(k, d)| (0..n).map(|_| random_point(rng, k, d)).collect())
        .collect();
    LayerState {
        components,
        rates: Vec::new(),
    }
}

fn random_gates(rng: &mut impl Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|g| g / z).collect()
        })
        .collect()
}

/// Self-scores, plain and traced, that are not exactly zero.
pub fn self_score_violations() -> usize {
    let mut rng = rng(41);
    let n = 40;
    let state = random_state(&mut rng, n);
    let gates = random_gates(&mut rng, n, 3);
    let mut bad = (0..n)
        .filter(|&u| pair_score(u, u, &state, &gates[u]).unwrap() != 0.0)
        .count();
    for (i, graph) in TEST_GRAPHS.iter().enumerate() {
        let (model, config) = random_link_model(graph, "h8xs8xe8", 10 + i as u64);
        let data = prepare_data(&config).unwrap();
        let mut tape = Tape::new();
        let fwd = model
            .forward(&mut tape, &data.message_graph, &ForwardOptions::eval(0))
            .unwrap();
        let pairs: Vec<(usize, usize)> = (0..data.graph.num_nodes()).map(|u| (u, u)).collect();
        let scores = traced_pair_scores(&mut tape, &model, &fwd, &pairs).unwrap();
        bad += tape
            .value(scores)
            .data()
            .iter()
            .filter(|&&s| s != 0.0)
            .count();
    }
    bad
}

/// Orients random triplets so that every one satisfies the margin and
/// returns both losses, which must be exactly zero.
pub fn satisfied_triplet_losses() -> (f64, f64) {
    let mut rng = rng(43);
    let n = 40;
    let state = random_state(&mut rng, n);
    let gates = random_gates(&mut rng, n, 3);
    let mut triplets = Vec::new();
    while triplets.len() < 50 {
        let (u, a, b) = (
            rng.random_range(0..n),
            rng.random_range(0..n),
            rng.random_range(0..n),
        );
        let (ra, rb) = (
            pair_score(u, a, &state, &gates[u]).unwrap(),
            pair_score(u, b, &state, &gates[u]).unwrap(),
        );
        let (positive, negative) = if ra >= rb { (a, b) } else { (b, a) };
        if (ra - rb).abs() >= DEFAULT_MARGIN {
            triplets.push(Triplet {
                anchor: u,
                positive,
                negative,
            });
        }
    }
    let plain = link_margin_loss(&triplets, DEFAULT_MARGIN, &state, &gates).unwrap();

    let (model, config) = random_link_model("sbm:2,50,0.1,0.01", "h8xs8xe8", 5);
    let data = prepare_data(&config).unwrap();
    let mut tape = Tape::new();
    let fwd = model
        .forward(&mut tape, &data.message_graph, &ForwardOptions::eval(0))
        .unwrap();
    let n = data.graph.num_nodes();
    let mut candidates = Vec::new();
    for _ in 0..400 {
        let t = (
            rng.random_range(0..n),
            rng.random_range(0..n),
            rng.random_range(0..n),
        );
        candidates.push(t);
    }
    let pairs: Vec<(usize, usize)> = candidates
        .iter()
        .flat_map(|&(u, a, b)| [(u, a), (u, b)])
        .collect();
    let scores = traced_pair_scores(&mut tape, &model, &fwd, &pairs).unwrap();
    let s = tape.value(scores).data().to_vec();
    let traced_triplets: Vec<Triplet> = candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| (s[2 * i] - s[2 * i + 1]).abs() >= DEFAULT_MARGIN)
        .map(|(i, &(u, a, b))| {
            let (positive, negative) = if s[2 * i] >= s[2 * i + 1] {
                (a, b)
            } else {
                (b, a)
            };
            Triplet {
                anchor: u,
                positive,
                negative,
            }
        })
        .collect();
    assert!(
        !traced_triplets.is_empty(),
        "no margin-separated candidates"
    );
    let loss = traced_link_loss(&mut tape, &model, &fwd, &traced_triplets, DEFAULT_MARGIN).unwrap();
    (plain, tape.value(loss).item())
}

pub fn score_suite() -> Verdict {
    let (plain, traced) = satisfied_triplet_losses();
    let self_bad = self_score_violations();
    let gate_err = gate_sum_error();
    let passed = plain == 0.0 && traced == 0.0 && self_bad == 0 && gate_err <= GATE_TOL;
    Verdict::new(
        passed,
        format!(
            "satisfied loss {plain}/{traced}, nonzero self-scores {self_bad}, gate sum error {gate_err:.1e}"
        ),
    )
}

/// Worst hyperboloid constraint violation over `steps` random descent steps.
/// Each step follows the gradient of `w d^2(x, y)` for a fresh random target
/// `y` and weight `w`, so the points wander without escaping to infinity.
pub fn hyperboloid_drift(steps: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (rows, d) = (16, 8);
    let sample = |rng: &mut ChaCha| -> Tensor {
        let points: Vec<Vec<f64>> = (0..rows)
            .map(|_| random_point(rng, -1.0, d).into_coords())
            .collect();
        Tensor::from_rows(&points)
    };
    let mut x = sample(&mut rng);
    let tag = ParamTag::manifold(Curvature::HYPERBOLIC, 0.1);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let targets = sample(&mut rng);
        let weights: Vec<f64> = (0..rows).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let yv = tape.leaf(targets);
        let wv = tape.leaf(Tensor::col_vector(&weights));
        let d2 = tape.dist_sq(xv, yv, -1.0).unwrap();
        let weighted = tape.mul(d2, wv);
        let f = tape.sum(weighted);
        let g = tape.backward(f).unwrap().wrt_or_zeros(xv, x.shape());
        x = rsgd_step(&x, &g, &tag).unwrap();
        for r in 0..rows {
            let row = x.row(r);
            worst = worst.max((kernels::inner(row, row, -1.0) + 1.0).abs());
            if row[0] <= 0.0 {
                return f64::INFINITY;
            }
        }
    }
    worst
}

/// Fraction of `d^2(x, target)` remaining after `steps` Riemannian steps.
pub fn descent_remaining(kappa: f64, d: usize, steps: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let k = Curvature::new(kappa).unwrap();
    let target = random_point(&mut rng, kappa, d);
    let t = random_tangent(
        &mut rng,
        &target,
        0.9 * tangent_radius(kappa).min(point_radius(kappa)),
    );
    let start = manifold::exp_map(&target, &t).unwrap();
    let target_row = Tensor::row_vector(target.coords());
    let objective = |x: &Tensor| -> (f64, Tensor) {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let tv = tape.leaf(target_row.clone());
        let d2 = tape.dist_sq(xv, tv, kappa).unwrap();
        let f = tape.sum(d2);
        let grad = tape.backward(f).unwrap().wrt_or_zeros(xv, x.shape());
        (tape.value(f).item(), grad)
    };
    let tag = ParamTag {
        kind: ParamKind::Manifold(k),
        lr: 0.0,
        geo_step: 0.1,
    };
    let mut x = Tensor::row_vector(start.coords());
    let (f0, _) = objective(&x);
    for _ in 0..steps {
        let (_, g) = objective(&x);
        x = rsgd_step(&x, &g, &tag).unwrap();
    }
    let (f, _) = objective(&x);
    let _ = ManifoldPoint::new(x.row(0).to_vec(), k).expect("iterate stays on the manifold");
    f / f0
}

pub fn optimizer_suite() -> Verdict {
    let drift = hyperboloid_drift(1000, 7);
    let mut worst_remaining: f64 = 0.0;
    for &kappa in &[-1.0, 0.0, 1.0] {
        for seed in 0..20 {
            worst_remaining = worst_remaining.max(descent_remaining(kappa, 8, 200, seed));
        }
    }
    Verdict::new(
        drift <= DRIFT_TOL && worst_remaining <= 0.1,
        format!("drift {drift:.1e}, worst remaining objective {worst_remaining:.1e}"),
    )
}
