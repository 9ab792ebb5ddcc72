//! Conditional normalizing-flow scenario generation for day-ahead
//! electricity prices, with baselines, scoring and backtesting.

pub mod backtest;
pub mod baselines;
pub mod error;
pub mod flow;
pub mod market_data;
pub mod metrics;
pub mod numerics;
pub mod pca;

pub use error::{Error, Result};
