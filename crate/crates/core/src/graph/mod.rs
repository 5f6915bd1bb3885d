//! Undirected simple graphs with node features, labels and split masks.

mod io;
mod split;
mod synthetic;

use thiserror::Error;

use crate::tensor::Tensor;

pub use io::{load_dataset, load_dataset_dir, save_dataset};
pub use split::{split, split_edges, EdgeSplit, Fractions};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    pub fn train_nodes(&self) -> Vec<usize> {
        Self::indices(&self.train)
    }

    pub fn val_nodes(&self) -> Vec<usize> {
        Self::indices(&self.val)
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        Self::indices(&self.test)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Option<Vec<usize>>,
    masks: Option<Masks>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, normalizing edges to `u < v`, sorting and removing
    /// duplicates. Self-loops are rejected.
    pub fn new(
        features: Tensor,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        let mut norm = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::Invalid(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(GraphError::Invalid(format!("self-loop at node {u}")));
            }
            norm.push((u.min(v), u.max(v)));
        }
        norm.sort_unstable();
        norm.dedup();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::Invalid(format!(
                    "{} labels for {n} nodes",
                    l.len()
                )));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &norm {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges: norm,
            features,
            labels,
            masks: None,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn masks(&self) -> Option<&Masks> {
        self.masks.as_ref()
    }

    /// Sorted neighbor list `N(i)`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Replaces the masks after checking they are disjoint, cover every
    /// labeled node exactly once (when the split is exhaustive) and have the
    /// right length.
    pub fn with_masks(mut self, masks: Masks) -> Result<Self, GraphError> {
        let n = self.n;
        if masks.train.len() != n || masks.val.len() != n || masks.test.len() != n {
            return Err(GraphError::Invalid(
                "mask lengths differ from node count".into(),
            ));
        }
        for i in 0..n {
            let hits = usize::from(masks.train[i])
                + usize::from(masks.val[i])
                + usize::from(masks.test[i]);
            if hits > 1 {
                return Err(GraphError::Invalid(format!("node {i} is in {hits} masks")));
            }
        }
        self.masks = Some(masks);
        Ok(self)
    }

    /// Same nodes, features and labels over a different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut g = Graph::new(
            self.features.clone(),
            edges.iter().copied(),
            self.labels.clone(),
        )?;
        g.masks = self.masks.clone();
        Ok(g)
    }

    /// Scales every feature row to unit L2 norm (zero rows are left alone).
    pub fn normalize_features(&mut self) {
        for r in 0..self.features.rows() {
            let row = self.features.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    /// Directed message edges for aggregation, sorted by target node: both
    /// orientations of every edge plus a self-loop for each isolated node.
    pub fn message_edges(&self) -> MessageEdges {
        let mut target = Vec::with_capacity(2 * self.edges.len());
        let mut source = Vec::with_capacity(2 * self.edges.len());
        for i in 0..self.n {
            if self.neighbors[i].is_empty() {
                target.push(i);
                source.push(i);
            }
            for &j in &self.neighbors[i] {
                target.push(i);
                source.push(j);
            }
        }
        let fanout = (0..self.n).map(|i| self.degree(i).max(1)).collect();
        MessageEdges {
            n: self.n,
            target,
            source,
            fanout,
        }
    }
}

/// Directed aggregation pattern derived from a [`Graph`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageEdges {
    pub n: usize,
    /// Receiving node `i` of each message (sorted).
    pub target: Vec<usize>,
    /// Sending neighbor `j` of each message.
    pub source: Vec<usize>,
    /// Number of messages each node's state feeds.
    pub fanout: Vec<usize>,
}

impl MessageEdges {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}
