pub mod error;
pub mod lists;
pub mod media;
pub mod memory;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod engine;
pub mod metrics;
pub mod workload;
pub mod config;
pub mod experiment;
pub mod report;
pub mod checks;
