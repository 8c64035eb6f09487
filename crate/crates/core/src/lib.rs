//! Online detection of action starts (ODAS) over per-window feature streams.
//!
//! The crate covers the full pipeline: sliding-window dataset construction,
//! training of a window classifier with start-focused sampling, a temporal
//! consistency penalty and generated hard negatives, streaming start
//! detection, and the point-level action-start AP protocol.

pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
