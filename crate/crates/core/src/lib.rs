//! Hyperspectral unmixing under the linear mixing model and its doubly
//! scaled extension, with synthetic scene generation.

pub mod cls;
pub mod datagen;
pub mod endmember;
pub mod error;
pub mod hsi;
pub mod lmm;
pub mod result;
pub mod two_lmm;

pub use error::{Error, Result};
pub use result::{SolverTrace, TraceEntry, UnmixResult};
