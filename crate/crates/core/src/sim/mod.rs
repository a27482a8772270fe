//! Simulation harness: ground truth with coupled sensor noise, Monte-Carlo
//! method comparison, band tuning and the static demo.

pub mod config;
pub mod demo;
pub mod harness;
pub mod rng;
pub mod truth;

pub use config::{ExperimentConfig, GammaPair};
pub use demo::{static_demo, DemoOptions, DemoReport};
pub use harness::{
    run_comparison, simulate_trajectory, tune_gamma, write_comparison, MseTable, Tuning,
};
