//! Dense numeric primitives shared by every other module.

mod gate;
mod matrix;
pub mod ops;
pub mod rng;
pub mod tape;

pub use gate::GateVector;
pub use matrix::{Matrix, Precision};
pub use ops::{attention, cosine, gelu, mse, softmax, top_k_select};
pub use tape::{Gradients, Tape, Var};
