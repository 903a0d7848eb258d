pub mod curve;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gan;
pub mod nn;
pub mod offline;
pub mod rng;
pub mod stats;
pub mod train;
pub mod vae;

pub use data::{CountMatrix, Scale};
pub use error::{Error, Result};
