//! Emoji prediction for tweets, built from scratch.
//!
//! The pipeline mirrors the usual text-classification recipe: CSV ingestion,
//! tweet cleaning and Porter stemming, a word-level tokenizer, a small
//! bidirectional transformer encoder trained with masked-language-model
//! pretraining and a three-dense-layer classification head, plus full
//! precision/recall/F1 reporting and a bag-of-words logistic-regression
//! baseline for comparison.
//!
//! Everything numeric runs on the in-crate tensor engine in [`numeric`],
//! which provides reverse-mode differentiation, Adam, and finite-difference
//! gradient verification. No external ML runtime is involved.

pub mod baseline;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod preprocess;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
