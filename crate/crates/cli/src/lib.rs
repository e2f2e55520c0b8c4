//! Library behind the `embcomp` benchmark command line: run
//! configuration, grid runners and report rendering.

pub mod commands;
pub mod config;

pub use commands::{bench_posttrain, bench_train, compress, gen_data, inspect, render};
pub use config::RunConfig;
