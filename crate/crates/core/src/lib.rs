//! Topology-preserving segmentation: a label prior is deformed onto an image by a
//! hyperelastic registration solved with a multilevel Gauss-Newton method.

// NaN-aware comparisons such as `!(det > 0.0)` are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod fitting;
pub mod gradcheck;
pub mod grid;
pub mod hyperelastic;
pub mod imagemodel;
pub mod io;
pub mod multilevel;
pub mod optimizer;
pub mod phantom;
pub mod segmenter;

pub use error::{Error, Result};
