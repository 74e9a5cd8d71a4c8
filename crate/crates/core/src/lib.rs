//! Spoken-language-understanding classifiers that read every ASR n-best
//! hypothesis instead of only the first.
//!
//! The crate bundles a small reverse-mode autodiff core ([`nn`]), a BPE
//! tokenizer ([`bpe`]), a BiLSTM utterance encoder ([`encoder`]), an MLP tag
//! head with its training loop ([`classifier`]), the direct and trained
//! n-best strategies ([`integration`]), a synthetic ASR noise simulator
//! ([`asr_sim`]), evaluation metrics ([`eval`]) and the file formats and
//! orchestration used by the command-line tool.

pub mod asr_sim;
pub mod bpe;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod gradcheck;
pub mod integration;
pub mod nn;

pub use error::{Error, Result};
