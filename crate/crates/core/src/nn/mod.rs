//! Minimal reverse-mode automatic differentiation and the network pieces
//! built on it.

mod adam;
mod layers;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use layers::{he_normal, Linear, Mlp};
pub use params::{Bound, ParamStore};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub(crate) use tape::{from_nalgebra, to_nalgebra};
