pub mod analytic;
pub mod cli;
pub mod counting;
pub mod engine;
pub mod error;
pub mod ostree;
pub mod rng;
pub mod scenarios;
pub mod selection;
pub mod stats;
