//! HeCo / HeCo++: self-supervised heterogeneous-graph node embedding via
//! cross-view (network-schema vs meta-path) and intra-view contrastive
//! learning, with hard-negative augmentation and an evaluation harness.

pub mod contrast;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod hin;
pub mod io;
pub mod model;
pub mod negatives;
pub mod seeding;
pub mod tensor;
pub mod train;

pub use error::{HecoError, Result};
