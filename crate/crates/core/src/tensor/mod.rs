//! Minimal dense-matrix autodiff engine: matrix values, an op tape with
//! reverse-mode gradients, Glorot initialization and the Adam optimizer.

mod adam;
mod init;
mod matrix;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use init::glorot_init;
pub use matrix::Matrix;
pub use tape::{Gradients, SparseMatrix, Tape, TensorId};
