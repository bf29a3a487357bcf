//! Command-line front end, data ingestion and experiment runner for
//! `shapley-core`.

pub mod cli;
pub mod client;
pub mod config;
pub mod csv_io;
pub mod experiment;
