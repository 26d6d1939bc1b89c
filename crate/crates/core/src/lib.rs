pub mod decomposition;
pub mod error;
pub mod market_data;
pub mod persistence;
pub mod portfolio;
pub mod phase;
pub mod pipeline;
pub mod predictors;
pub mod quarter;
pub mod ranking;
pub mod risk;
pub mod rng;
pub mod simulation;
pub mod stats;
