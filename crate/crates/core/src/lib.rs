//! Statistical laboratory for the relationship between the monofact rate of
//! a training sample, the miscalibration of a generator trained on it, and
//! the rate at which that generator hallucinates.

pub mod artifacts;
pub mod biogen;
pub mod bounds;
pub mod calibration;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod jsonl;
pub mod ngram;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
