//! Library side of the `gntk` command-line tool: configuration
//! resolution, run reports, validation suites and the benchmark
//! harness. The binary in `main.rs` is a thin dispatcher over these.

pub mod config;
pub mod report;
pub mod suites;
pub mod synth;
