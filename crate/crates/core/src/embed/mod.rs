//! Per-point feature embedding: a local-geometry descriptor feeding a small
//! multilayer perceptron with hand-derived backpropagation.
//!
//! Object and scene each own an independent model instance; nothing is
//! shared unless a run explicitly reuses one instance for both sides.

mod descriptor;
mod model;

pub use descriptor::{compute_descriptors, Descriptors, DESCRIPTOR_DIM};
pub use model::{embed_backward, embed_forward, ActivationCache, EmbedError, EmbeddingModel, ModelData, ModelGrads};
