//! Edit-based non-autoregressive sequence generation.
//!
//! Hypotheses are refined by repeatedly applying actions made of three
//! parallel operations: reposition (move or delete tokens), placeholder
//! insertion, and token prediction. A constrained Levenshtein oracle
//! supplies imitation targets, and decoding can start from lexical
//! constraints treated as soft suggestions or hard requirements.

pub mod config;
pub mod decoder;
pub mod edit;
pub mod error;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod tasks;
pub mod train;
pub mod types;

pub use error::{Error, Result};
