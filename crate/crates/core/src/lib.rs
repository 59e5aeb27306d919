//! Multi-event document-level event argument extraction with dependency-guided
//! encoding and event-specific information aggregation.

pub mod assembly;
pub mod corpus;
mod error;
pub mod matching;
pub mod model;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
