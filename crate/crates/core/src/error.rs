use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::graph::GraphError;
use crate::manifold::GeometryError;
use crate::spiking::SpikingError;

/// Any failure surfaced by the model, training loop or result output.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Spiking(#[from] SpikingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("manifold constraint violated: {0}")]
    Constraint(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
