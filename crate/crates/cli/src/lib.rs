//! Library side of the `gsplat-cbf` command: run configuration and the
//! latency benchmark.

pub mod bench;
pub mod config;

pub use bench::{BenchConfig, BenchReport, BenchRow, PruningMode};
pub use config::{parse_vec3, RunConfig};
