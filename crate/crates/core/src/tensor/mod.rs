//! Dense matrices and a small reverse-mode autodiff tape.

mod graph;
mod matrix;
mod params;

pub mod gradcheck;

pub use graph::{log_softmax_rows, Graph, Var};
pub use matrix::Matrix;
pub use params::{GradStore, ParamId, ParamStore};
