pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod serving;
pub mod training;

pub use error::{Error, Result};
pub use numeric::{Tape, Tensor, Var};
