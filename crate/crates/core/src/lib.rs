pub mod encoder;
pub mod env;
pub mod error;
pub mod hierarchy;
pub mod metrics;
pub mod numcore;
pub mod policy;
pub mod data;
pub mod train;
pub mod cli;
