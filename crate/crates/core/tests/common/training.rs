use geospike::autodiff::Tape;
use geospike::harness::{
    estimate_energy, inference_counts, run, run_train, RunConfig, Task, TrainOutcome,
};
use geospike::layers::SpikeMode;
use geospike::model::{check_on_manifold, ForwardOptions};

use super::*;

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const TABLE2_VARIANTS: [&str; 9] = [
    "h32",
    "s32",
    "e32",
    "h16xh16",
    "h16xs16",
    "s16xs16",
    "s8xs8xh8",
    "s16xs8xh4",
    "s4xs8xh16",
];
pub const TREE: &str = "tree:6,2";
pub const SBM: &str = "sbm:2,50,0.1,0.01";
pub const MIXED_VARIANT: &str = "s4xs8xh16";

/// Runs `f` for every seed on its own thread and returns results in seed order.
pub fn per_seed<T: Send>(f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    std::thread::scope(|s| {
        let handles: Vec<_> = SEEDS
            .iter()
            .map(|&seed| {
                let f = &f;
                s.spawn(move || f(seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

/// Settings that learn reliably with plain SGD: longer spike trains and a
/// large step for the Euclidean parameters.
pub fn tuned(task: Task, geometry: &str, data: &str, epochs: usize, seed: u64) -> RunConfig {
    let mut c = RunConfig::synthetic(task, geometry, data);
    c.time_steps = 15;
    c.lr = 1.0;
    c.epochs = epochs;
    c.seed = seed;
    c
}

/// Re-runs the final model and checks every state of every layer.
pub fn states_on_manifold(outcome: &TrainOutcome) -> geospike::Result<()> {
    let mut tape = Tape::new();
    let fwd = outcome.model.forward(
        &mut tape,
        &outcome.data.message_graph,
        &ForwardOptions::eval(1),
    )?;
    for (c, &s) in outcome
        .model
        .config
        .geometry
        .components()
        .iter()
        .zip(&fwd.states)
    {
        check_on_manifold(tape.value(s), c.curvature, "final state")?;
    }
    Ok(())
}

/// Every ablation geometry trains on the tree without leaving its manifold.
pub fn variant_coverage(epochs: usize) -> Verdict {
    let results: Vec<(String, Result<(), String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = TABLE2_VARIANTS
            .iter()
            .map(|&g| {
                s.spawn(move || {
                    let mut c = RunConfig::synthetic(Task::Nc, g, TREE);
                    c.epochs = epochs;
                    let check = run_train(&c).map_err(|e| e.to_string()).and_then(|o| {
                        if let Some(reason) = &o.aborted {
                            return Err(reason.clone());
                        }
                        if o.trace.len() != epochs {
                            return Err(format!("{} of {epochs} epochs", o.trace.len()));
                        }
                        states_on_manifold(&o).map_err(|e| e.to_string())
                    });
                    (g.to_string(), check)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let failures: Vec<String> = results
        .iter()
        .filter_map(|(g, r)| r.as_ref().err().map(|e| format!("{g}: {e}")))
        .collect();
    if failures.is_empty() {
        Verdict::new(
            true,
            format!("{} variants x {epochs} epochs", results.len()),
        )
    } else {
        Verdict::new(false, failures.join("; "))
    }
}

pub fn mean_test_metric(task: Task, geometry: &str, data: &str, epochs: usize) -> Vec<f64> {
    per_seed(|seed| {
        let (_, doc) = run(&tuned(task, geometry, data, epochs, seed)).unwrap();
        doc.metrics.test
    })
}

/// Mean of the last `k` epoch losses.
pub fn tail_loss(outcome: &TrainOutcome, k: usize) -> f64 {
    let losses: Vec<f64> = outcome.trace.iter().map(|r| r.loss).collect();
    mean(&losses[losses.len().saturating_sub(k)..])
}

pub struct MixedLoss {
    pub initial: f64,
    pub last: f64,
}

impl MixedLoss {
    pub fn ratio(&self) -> f64 {
        self.last / self.initial
    }
}

/// Initial and final training loss of the mixed variant, averaged over seeds;
/// the final loss is the mean of the last ten epochs to smooth spike noise.
pub fn mixed_loss(epochs: usize) -> MixedLoss {
    let runs = per_seed(|seed| {
        let o = run_train(&tuned(Task::Nc, MIXED_VARIANT, TREE, epochs, seed)).unwrap();
        assert!(o.aborted.is_none(), "{:?}", o.aborted);
        (o.trace[0].loss, tail_loss(&o, 10))
    });
    MixedLoss {
        initial: mean(&runs.iter().map(|r| r.0).collect::<Vec<_>>()),
        last: mean(&runs.iter().map(|r| r.1).collect::<Vec<_>>()),
    }
}

/// Spiking and dense inference energy of one trained model.
pub fn energy_pair(config: &RunConfig) -> (f64, f64) {
    let outcome = run_train(config).unwrap();
    let spiking = inference_counts(&outcome, &outcome.eval_mode).unwrap();
    let dense = inference_counts(&outcome, &SpikeMode::Dense).unwrap();
    (
        estimate_energy(&spiking, &config.energy).total_mj,
        estimate_energy(&dense, &config.energy).total_mj,
    )
}

/// Results document with the wall-clock field zeroed.
pub fn normalized_json(config: &RunConfig) -> String {
    let (_, mut doc) = run(config).unwrap();
    doc.wall_clock_seconds = 0.0;
    doc.to_json().unwrap()
}
