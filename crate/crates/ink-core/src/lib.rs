//! Digital-ink modeling library: stroke corpora, reverse-mode autodiff,
//! a conditional variational RNN for handwriting synthesis and style
//! transfer, and a bidirectional recurrent character recognizer.

pub mod classifier;
pub mod cvrnn;
pub mod data;
pub mod dist;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod lstm;
pub mod nets;
pub mod prep;
pub mod svg;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, GradientMap, NodeId};
pub use tensor::{Array, Real};
