//! Retrieval & interaction machine for tabular prediction.
//!
//! For every target row the [`retrieval`] module pulls the top-K most similar
//! rows out of a retrieval pool through a feature-level [`index`] scored with
//! a BM25 variant; the [`model`] aggregates the neighbors' features and labels
//! with target-aware attention, forms pairwise feature interactions between
//! the target and the aggregate, and predicts through an MLP.

pub mod cache;
mod codec;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod index;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod source;
pub mod synth;

pub use error::{Result, RimError};
