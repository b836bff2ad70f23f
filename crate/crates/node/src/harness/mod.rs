//! Desk-scale experiment driver: launches a loopback topology of service
//! processes, runs scripted scenarios and measures latency.

pub mod latency;
pub mod process;
pub mod scenario;
pub mod world;

pub use latency::{run_latency_experiment, BenchOptions, Format, LatencyReport, Mode};
pub use process::Binaries;
pub use scenario::{run_scenario, Scenario, ScenarioReport};
