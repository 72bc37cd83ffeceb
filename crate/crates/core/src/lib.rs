//! Supervised point cloud oversegmentation.
//!
//! Points are embedded by a small local network, then partitioned into superpoints by an
//! approximate solver for the generalized minimal partition problem on the embeddings.

pub mod cloud;
pub mod embed;
pub mod error;
pub mod gmp;
pub mod graph;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod train;

pub use error::{Error, Result};
