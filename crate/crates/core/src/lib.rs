//! Social learning network construction and temporal link prediction.

pub mod analytics;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod predictors;
pub mod synth;
pub mod topics;

pub use error::{Result, SlnError};
