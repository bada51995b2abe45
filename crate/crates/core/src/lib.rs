//! Preference-conditioned generation pipeline.
//!
//! The crate wires a language-model stage that turns user behavior histories
//! into explicit preference keywords and trained soft preference embeddings,
//! a toy conditional image generator, a weighted condition balancer with
//! score-based candidate selection, and the evaluation metrics used to
//! measure personalization. All backends have deterministic in-process
//! implementations; HTTP adapters attach real services behind the same
//! traits.

pub mod balancer;
pub mod behavior;
pub mod corpus;
pub mod error;
pub mod generator;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod rng;
pub mod store;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
