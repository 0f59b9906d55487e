//! Text risk assessment posed as multiple-choice question answering.
//!
//! The crate covers the full pipeline: corpus ingestion and synthesis
//! ([`corpus`]), prompt construction and answer matching ([`qaformat`]),
//! sparse features and classical baselines ([`vectorize`], [`baselines`]),
//! a small encoder-decoder answer-selection model ([`qamodel`]),
//! differentially private gradient sanitization ([`privacy`]), metrics
//! ([`evalmetrics`]) and the config-driven commands behind the `riskqa`
//! binary ([`pipeline`]).

pub mod baselines;
pub mod corpus;
pub mod error;
pub mod evalmetrics;
pub mod pipeline;
pub mod privacy;
pub mod qaformat;
pub mod qamodel;
pub mod vectorize;

pub use error::{Error, Result};
