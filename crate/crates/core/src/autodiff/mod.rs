//! Dense tensors, constant sparse matrices, and a reverse-mode tape.
//!
//! Only the operations the encoder and losses need are provided. Every
//! recorded value is checked for finiteness when it is produced.

mod sparse;
mod tape;
mod tensor;

pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
