pub mod autodiff;
pub mod error;
pub mod graph;
pub mod harness;
pub mod layers;
pub mod manifold;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod spiking;
pub mod tensor;

pub use error::{Error, Result};
