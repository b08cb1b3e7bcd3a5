pub mod archgraph;
pub mod error;
pub mod gnn;
pub mod metrics;
pub mod oloc;
pub mod pipeline;
pub mod thermalsim;

pub use error::{Error, Result};
