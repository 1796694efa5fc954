//! Human and computational word predictability as explanatory variables for
//! first-pass reading times.
//!
//! The crate covers the whole analysis path: corpus and fixation tables
//! ([`corpus`]), cloze and language-model predictability columns
//! ([`predictors`], [`ngram`]), maximum-likelihood linear mixed models with
//! crossed random intercepts ([`lmm`]), and the baseline-versus-predictor
//! comparison with ΔAIC and residual analysis ([`pipeline`]).

pub mod corpus;
pub mod error;
pub mod exec;
pub mod lmm;
pub mod ngram;
pub mod pipeline;
pub mod predictors;
pub mod sim;
mod tsv;

pub use error::{Error, Result};
pub use exec::Execution;
