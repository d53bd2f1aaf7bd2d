//! Faithfulness and readability scores for concept-based explanations of
//! language models, plus reliability and validity statistics over them.

mod error;

pub mod backend;
pub mod concept;
pub mod faithfulness;
pub mod linalg;
pub mod measure;
pub mod meta_eval;
pub mod perturbation;
pub mod pipeline;
pub mod readability;
pub mod synthetic;

pub use error::{Error, Result};
