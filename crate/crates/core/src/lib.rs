//! Discourse unit segmentation, connective detection and relation
//! classification with hand-crafted features injected into neural models.

pub mod corpus;
pub mod error;
pub mod features;
pub mod harness;
pub mod nn;
pub mod rel;
pub mod scoring;
pub mod seg;
pub mod sentence;

pub use error::{DiscoError, Result};
