//! Gap filling and short-term prediction for sparse multi-station series with
//! evolved cellular-automaton rules.

#![allow(clippy::needless_range_loop)]

pub mod artifacts;
pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod evolution;
pub mod genome;
pub mod kalman;
pub mod pipeline;
pub mod planted;
pub mod quantizer;
pub mod rule_table;
pub mod series;

pub use error::{Error, Result};
pub use quantizer::{Quantizer, State};
pub use series::{SeriesGrid, Station};
