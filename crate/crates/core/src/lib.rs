//! Physics-informed adaptive-clustering network for information cascade
//! popularity prediction.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`cascade_embedding`] encodes the adopters of each observation
//!    snapshot with a learnable sinusoidal time encoding, multi-head
//!    self-attention and sum pooling.
//! 2. [`temporal_learning`] runs a gated dilated causal convolution stack
//!    over the snapshot sequence together with the log popularity series.
//! 3. [`adaptive_clustering`] soft-assigns the hidden representation to
//!    learnable cluster centers with a Student-t kernel and adds the
//!    winning center back onto the representation.
//! 4. [`heads`] produces a neural prediction of the log incremental
//!    popularity and a per-sample Richards growth curve.
//! 5. [`training_eval`] combines the prediction, physical and clustering
//!    losses, and trains the whole model with Adam and early stopping.
//!
//! [`richards`] evaluates and fits the Richards growth law on its own and
//! is used as an independent check on the physics head. [`cascade_data`]
//! parses cascade corpora, builds snapshot series and labels, and
//! generates synthetic corpora with known ground truth.

pub mod adaptive_clustering;
pub mod cascade_data;
pub mod cascade_embedding;
mod error;
pub mod heads;
pub mod linalg;
pub mod model;
pub mod richards;
pub mod temporal_learning;
pub mod training_eval;

pub use error::{Error, Result};
