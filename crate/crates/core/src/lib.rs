//! Narrative-enhanced video moment retrieval.
//!
//! Frame captions from a narrator are aligned to the snippet grid of a video,
//! merged with its visual features and attention-enhanced against a query.
//! A second, text-only branch reads the aligned captions directly, and the
//! two branches' endpoint distributions are mixed with weight `alpha`.

pub mod checkpoint;
pub mod datamodel;
pub mod dataset;
pub mod embedding;
pub mod enhancement;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod narration;
pub mod nn;
pub mod par;
pub mod paragraph_branch;
pub mod predictor;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use model::{BranchScores, Model, ModelConfig, Sample};
pub use par::Execution;
