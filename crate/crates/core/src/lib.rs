//! Forecasting with many small delay-coordinate maps.
//!
//! The pipeline samples delay maps from a universe of lagged coordinates
//! (randomly, or by random disjoint partitioning), fits a linear response
//! model per map, keeps the models that predicted best on a selection
//! window, and combines the survivors with a timewise trimmed mean. The
//! combined forecast can drive threshold decisions, evaluated here by a
//! walk-forward trading backtest, and binary skill matrices can be tested
//! with a conditional permutation test.

pub mod embedding;
pub mod backtest;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod forecast;
pub mod regress;
pub mod skill;
pub mod stats;
pub mod synth;
pub mod timeseries;

pub use error::{Error, Result};
