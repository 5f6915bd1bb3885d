use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, Masks};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Fractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, GraphError> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        for (name, v) in [
            ("train", self.train),
            ("val", self.val),
            ("test", self.test),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(GraphError::Config(format!(
                    "{name} fraction {v} must lie in (0, 1]"
                )));
            }
        }
        let total = self.train + self.val + self.test;
        if total > 1.0 + 1e-9 {
            return Err(GraphError::Config(format!("fractions sum to {total} > 1")));
        }
        Ok(())
    }

    fn exhaustive(&self) -> bool {
        (self.train + self.val + self.test - 1.0).abs() < 1e-9
    }

    /// Split sizes for a group of `m` items.
    fn counts(&self, m: usize) -> [usize; 3] {
        let round = |f: f64| (f * m as f64).round() as usize;
        let train = round(self.train).min(m);
        let val = round(self.val).min(m - train);
        let test = if self.exhaustive() {
            m - train - val
        } else {
            round(self.test).min(m - train - val)
        };
        [train, val, test]
    }
}

impl Default for Fractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

fn assign(nodes: &[usize], counts: [usize; 3], masks: &mut Masks) {
    let [tr, va, te] = counts;
    for &i in &nodes[..tr] {
        masks.train[i] = true;
    }
    for &i in &nodes[tr..tr + va] {
        masks.val[i] = true;
    }
    for &i in &nodes[tr + va..tr + va + te] {
        masks.test[i] = true;
    }
}

/// Assigns train/val/test masks, stratified by label when labels exist.
pub fn split(graph: Graph, fractions: Fractions, seed: u64) -> Result<Graph, GraphError> {
    fractions.validate()?;
    let n = graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Masks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    let mut classes: Vec<Vec<usize>> = Vec::new();
    if let Some(labels) = graph.labels() {
        classes = vec![Vec::new(); graph.num_classes()];
        for (i, &l) in labels.iter().enumerate() {
            classes[l].push(i);
        }
        classes.retain(|c| !c.is_empty());
        if let Some(small) = classes.iter().find(|c| c.len() < 3) {
            log::warn!(
                "a class has only {} node(s), fewer than the 3 splits; using a uniform split",
                small.len()
            );
            classes.clear();
        }
    }
    if classes.is_empty() {
        let mut nodes: Vec<usize> = (0..n).collect();
        nodes.shuffle(&mut rng);
        assign(&nodes, fractions.counts(n), &mut masks);
    } else {
        for mut nodes in classes {
            nodes.shuffle(&mut rng);
            assign(&nodes, fractions.counts(nodes.len()), &mut masks);
        }
    }
    graph.with_masks(masks)
}

/// Held-out edges and matched non-edges for link prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSplit {
    pub train: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

/// Splits edges by `fractions` and samples as many non-edges of the full
/// graph as there are held-out positives in each of val and test.
pub fn split_edges(
    graph: &Graph,
    fractions: Fractions,
    seed: u64,
) -> Result<EdgeSplit, GraphError> {
    fractions.validate()?;
    let n = graph.num_nodes();
    let mut edges = graph.edges().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);
    let m = edges.len();
    let round = |f: f64| (f * m as f64).round() as usize;
    let n_val = round(fractions.val).max(1);
    let n_test = round(fractions.test).max(1);
    if n_val + n_test >= m {
        return Err(GraphError::Config(format!(
            "{m} edges are too few to hold out {n_val} + {n_test}"
        )));
    }
    let test_pos = edges[..n_test].to_vec();
    let val_pos = edges[n_test..n_test + n_val].to_vec();
    let mut train = edges[n_test + n_val..].to_vec();
    train.sort_unstable();

    let max_non_edges = n * (n - 1) / 2 - m;
    if n_val + n_test > max_non_edges {
        return Err(GraphError::Config(
            "not enough non-edges to sample negatives".into(),
        ));
    }
    let mut seen = HashSet::new();
    let mut draw = |count: usize| {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            let pair = (u.min(v), u.max(v));
            if u != v && !graph.has_edge(u, v) && seen.insert(pair) {
                out.push(pair);
            }
        }
        out
    };
    let test_neg = draw(n_test);
    let val_neg = draw(n_val);
    let sort = |mut v: Vec<(usize, usize)>| {
        v.sort_unstable();
        v
    };
    Ok(EdgeSplit {
        train,
        val_pos: sort(val_pos),
        val_neg: sort(val_neg),
        test_pos: sort(test_pos),
        test_neg: sort(test_neg),
    })
}
