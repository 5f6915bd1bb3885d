//! Seeded structural testbeds: trees, cycles and stochastic block models.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError};
use crate::tensor::Tensor;

/// Default standard deviation of the Gaussian noise added to indicator features.
pub const DEFAULT_NOISE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SyntheticSpec {
    /// Complete `branching`-ary tree with `depth + 1` levels; label = level.
    Tree {
        depth: usize,
        branching: usize,
        noise: f64,
    },
    /// Single `n`-cycle; labels alternate.
    Cycle { n: usize, noise: f64 },
    /// `blocks` communities of `size` nodes; label = block.
    Sbm {
        blocks: usize,
        size: usize,
        p_in: f64,
        p_out: f64,
        noise: f64,
    },
}

impl SyntheticSpec {
    pub fn tree(depth: usize, branching: usize) -> Self {
        Self::Tree {
            depth,
            branching,
            noise: DEFAULT_NOISE,
        }
    }

    pub fn cycle(n: usize) -> Self {
        Self::Cycle {
            n,
            noise: DEFAULT_NOISE,
        }
    }

    pub fn sbm(blocks: usize, size: usize, p_in: f64, p_out: f64) -> Self {
        Self::Sbm {
            blocks,
            size,
            p_in,
            p_out,
            noise: DEFAULT_NOISE,
        }
    }

    pub fn noise(&self) -> f64 {
        match *self {
            Self::Tree { noise, .. } | Self::Cycle { noise, .. } | Self::Sbm { noise, .. } => noise,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        match &mut self {
            Self::Tree { noise, .. } | Self::Cycle { noise, .. } | Self::Sbm { noise, .. } => {
                *noise = sigma
            }
        }
        self
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: String| Err(GraphError::Config(msg));
        let noise = self.noise();
        if !(noise >= 0.0 && noise.is_finite()) {
            return bad(format!("noise {noise} must be finite and >= 0"));
        }
        match *self {
            Self::Tree {
                depth, branching, ..
            } => {
                if branching < 1 || depth < 1 {
                    return bad("tree needs depth >= 1 and branching >= 1".into());
                }
                if (depth as f64 + 1.0) * (branching as f64).log2() > 24.0 {
                    return bad(format!("tree({depth}, {branching}) is too large"));
                }
            }
            Self::Cycle { n, .. } => {
                if n < 3 {
                    return bad(format!("cycle needs n >= 3, got {n}"));
                }
            }
            Self::Sbm {
                blocks,
                size,
                p_in,
                p_out,
                ..
            } => {
                if blocks < 1 || size < 1 {
                    return bad("sbm needs at least one non-empty block".into());
                }
                for p in [p_in, p_out] {
                    if !(0.0..=1.0).contains(&p) {
                        return bad(format!("sbm probability {p} outside [0, 1]"));
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Tree {
                depth,
                branching,
                noise,
            } => write!(f, "tree:{depth},{branching},noise={noise}"),
            Self::Cycle { n, noise } => write!(f, "cycle:{n},noise={noise}"),
            Self::Sbm {
                blocks,
                size,
                p_in,
                p_out,
                noise,
            } => write!(f, "sbm:{blocks},{size},{p_in},{p_out},noise={noise}"),
        }
    }
}

impl FromStr for SyntheticSpec {
    type Err = GraphError;

    /// Parses `tree:DEPTH,BRANCHING`, `cycle:N` or
    /// `sbm:BLOCKS,SIZE,P_IN,P_OUT`, each optionally followed by `,noise=SIGMA`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| GraphError::Config(format!("synthetic spec `{s}`: {why}"));
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| bad("expected KIND:PARAMS"))?;
        let mut positional = Vec::new();
        let mut noise = DEFAULT_NOISE;
        for part in rest.split(',').map(str::trim) {
            match part.split_once('=') {
                Some(("noise", v)) => noise = v.parse().map_err(|_| bad("bad noise value"))?,
                Some((k, _)) => return Err(bad(&format!("unknown option `{k}`"))),
                None => positional.push(part),
            }
        }
        let int = |i: usize| -> Result<usize, GraphError> {
            positional
                .get(i)
                .ok_or_else(|| bad("missing parameter"))?
                .parse()
                .map_err(|_| bad(&format!("parameter {} is not an integer", i + 1)))
        };
        let real = |i: usize| -> Result<f64, GraphError> {
            positional
                .get(i)
                .ok_or_else(|| bad("missing parameter"))?
                .parse()
                .map_err(|_| bad(&format!("parameter {} is not a number", i + 1)))
        };
        let (spec, arity) = match kind {
            "tree" => (
                Self::Tree {
                    depth: int(0)?,
                    branching: int(1)?,
                    noise,
                },
                2,
            ),
            "cycle" => (Self::Cycle { n: int(0)?, noise }, 1),
            "sbm" => (
                Self::Sbm {
                    blocks: int(0)?,
                    size: int(1)?,
                    p_in: real(2)?,
                    p_out: real(3)?,
                    noise,
                },
                4,
            ),
            other => return Err(bad(&format!("unknown kind `{other}`"))),
        };
        if positional.len() != arity {
            return Err(bad(&format!("expected {arity} parameters")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn noisy_one_hot(labels: &[usize], classes: usize, noise: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, noise).expect("validated noise");
    let mut x = Tensor::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        for (c, v) in x.row_mut(i).iter_mut().enumerate() {
            let base = if c == l { 1.0 } else { 0.0 };
            *v = base + if noise > 0.0 { normal.sample(rng) } else { 0.0 };
        }
    }
    x
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Graph, GraphError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (edges, labels, classes) = match *spec {
        SyntheticSpec::Tree {
            depth, branching, ..
        } => {
            // Breadth-first numbering: children of i are b*i+1 ..= b*i+b.
            let mut level = vec![0usize];
            let mut edges = Vec::new();
            let mut frontier = vec![0usize];
            for d in 1..=depth {
                let mut next = Vec::with_capacity(frontier.len() * branching);
                for &p in &frontier {
                    for _ in 0..branching {
                        let c = level.len();
                        level.push(d);
                        edges.push((p, c));
                        next.push(c);
                    }
                }
                frontier = next;
            }
            (edges, level, depth + 1)
        }
        SyntheticSpec::Cycle { n, .. } => {
            let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
            let labels = (0..n).map(|i| i % 2).collect();
            (edges, labels, 2)
        }
        SyntheticSpec::Sbm {
            blocks,
            size,
            p_in,
            p_out,
            ..
        } => {
            let n = blocks * size;
            let labels: Vec<usize> = (0..n).map(|i| i / size).collect();
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    let p = if labels[u] == labels[v] { p_in } else { p_out };
                    if rng.random::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            (edges, labels, blocks)
        }
    };
    let features = noisy_one_hot(&labels, classes, spec.noise(), &mut rng);
    Graph::new(features, edges, Some(labels))
}
