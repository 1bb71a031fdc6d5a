pub mod calendar;
pub mod cli;
pub mod config;
pub mod env;
pub mod evaluation;
pub mod market_data;
pub mod market_sim;
pub mod pricing;
pub mod trvo;
