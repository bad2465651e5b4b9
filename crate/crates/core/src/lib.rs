pub mod cli;
pub mod config;
pub mod eigen;
pub mod error;
pub mod experiments;
pub mod model;
pub mod output;
pub mod risk;
pub mod stability;
pub mod stochastic;
