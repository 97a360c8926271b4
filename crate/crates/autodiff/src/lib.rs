//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! The op set is deliberately narrow: it covers what a small text-matching
//! network needs (matmul, elementwise arithmetic, softmax, recurrent cells,
//! 1-D convolution over a token axis, pooling, dropout, embedding gather).
//! Every graph is generic over [`Real`], so the same model code can be run
//! at `f32` for training and rebuilt at `f64` for finite-difference checks.

mod error;
mod graph;
mod params;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;

pub use error::{AutodiffError, Result};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
