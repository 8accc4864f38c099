//! Tweet tone pipeline: corpus preparation, a small transformer encoder with a
//! seven-way sigmoid head trained from scratch, label ranking average precision,
//! threshold-based tone assignment, gazetteer geoparsing and country-level tone
//! indicators.
//!
//! The modules follow the pipeline order:
//!
//! - [`corpus`]: load, filter, sample and label tweets.
//! - [`textprep`]: word-level tokenizer and vocabulary.
//! - [`neuralnet`]: encoder forward pass, loss and analytic gradients.
//! - [`training`]: Adam with gradient accumulation, train/test split, history.
//! - [`metrics`]: LRAP and evaluation loss.
//! - [`inference`]: batched prediction and thresholding.
//! - [`geoloc`]: location text to country resolution.
//! - [`analytics`]: per-country aggregates, indicators, rankings, time series.

pub mod analytics;
pub mod corpus;
mod error;
pub mod geoloc;
pub mod inference;
pub mod metrics;
pub mod neuralnet;
pub mod settings;
pub mod textprep;
pub mod training;

pub use corpus::{LabeledExample, ToneLabel, ToneVector, TweetRecord, N_TONES};
pub use error::{Error, Result};
pub use neuralnet::{ModelConfig, ModelParams, ProbVector};
