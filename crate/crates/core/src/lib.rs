//! Missing bibliographic link detection for scientific articles.
//!
//! Sentences are classified as "with links" or "without links" by building
//! context windows around them (a sampling strategy takes `n` sentences
//! before and `m` after), turning each window into unigram/bigram counts and
//! training one small multilayer perceptron per strategy. Per-strategy
//! estimators are then combined by soft or hard voting over the same anchor
//! sentences.
//!
//! The pipeline, bottom-up:
//!
//! - [`corpus`]: jsonlines ingestion, cleaning, tokenization, citation
//!   labeling and entity masking.
//! - [`sampler`]: positive/negative window construction, undersampling and
//!   train/test splitting.
//! - [`vectorizer`]: n-gram vocabulary with document-frequency pruning and
//!   sparse count vectors.
//! - [`classifier`]: a two-class MLP trained with Adam on sparse input.
//! - [`ensemble`]: per-anchor alignment of strategy views and voting.
//! - [`evaluation`]: confusion matrices, weighted metrics and reports.
//! - [`pipeline`]: experiment orchestration, persistence and prediction.
//! - [`synth`]: a seeded synthetic corpus generator with a closed-form Bayes
//!   rate, used for tests and acceptance runs.

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod sampler;
pub mod synth;
pub mod util;
pub mod vectorizer;

mod class;

pub use class::Class;
pub use error::{Error, Result};
