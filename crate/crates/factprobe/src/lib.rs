//! A desk-scale factual-probing workbench.
//!
//! The crate covers the whole probing pipeline: fact corpora with a
//! single-token-object restriction, statistical baselines (class prior and
//! Naive Bayes), a small masked language model with analytic gradients,
//! manual / trigger-token / dense-vector prompts, prompt optimization and
//! fine-tuning, and evaluation with majority-class decomposition and an
//! easy/hard test partition.

pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod mlm;
pub mod optimize;
pub mod prompts;

pub use error::{Error, Result};
